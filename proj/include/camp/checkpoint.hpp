#pragma once

#include <array>
#include <bit>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camp/error.hpp"
#include "camp/network.hpp"

namespace camp {

// Checkpoint layout:
//   8 bytes   magic "CAMPNET1"
//   4 bytes   manifest length, little-endian uint32
//   N bytes   manifest, UTF-8 JSON (input shape + layer specs)
//   4*P bytes parameters as little-endian float32, flatten_params order
inline constexpr std::array<char, 8> kCheckpointMagic = {'C', 'A', 'M', 'P', 'N', 'E', 'T', '1'};

inline nlohmann::json layer_spec_to_json(const LayerSpec& s) {
  nlohmann::json j = {{"kind", std::string(to_string(s.kind))}};
  if (s.kind == LayerKind::dense) {
    j["in"] = s.in_features;
    j["out"] = s.out_features;
  } else if (s.kind == LayerKind::conv2d) {
    j["in_channels"] = s.in_channels;
    j["out_channels"] = s.out_channels;
    j["kernel"] = {s.kernel_h, s.kernel_w};
    j["stride"] = s.stride;
    j["padding"] = s.padding;
  }
  return j;
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  const LayerKind kind = parse_layer_kind(j.at("kind").get<std::string>());
  switch (kind) {
    case LayerKind::dense: return LayerSpec::dense(j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>());
    case LayerKind::conv2d: {
      const auto& k = j.at("kernel");
      return LayerSpec::conv2d(j.at("in_channels").get<std::size_t>(), j.at("out_channels").get<std::size_t>(),
                               k.at(0).get<std::size_t>(), k.at(1).get<std::size_t>(), j.value("stride", std::size_t{1}),
                               j.value("padding", std::size_t{0}));
    }
    case LayerKind::relu: return LayerSpec::relu();
    case LayerKind::flatten: return LayerSpec::flatten();
    case LayerKind::maxpool2x2: return LayerSpec::maxpool2x2();
  }
  throw UsageError("unknown layer kind");
}

template <std::floating_point T>
nlohmann::json architecture_manifest(const Network<T>& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) layers.push_back(layer_spec_to_json(l.spec));
  return {{"input_shape", net.input_shape()}, {"layers", layers}, {"parameter_count", net.parameter_count()}};
}

template <std::floating_point T>
Network<T> network_from_manifest(const nlohmann::json& manifest) {
  std::vector<LayerSpec> specs;
  for (const auto& j : manifest.at("layers")) specs.push_back(layer_spec_from_json(j));
  return Network<T>(manifest.at("input_shape").get<Shape>(), specs);
}

namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

inline std::uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

template <std::floating_point T>
void write_checkpoint(std::ostream& os, const Network<T>& net) {
  const std::string manifest = architecture_manifest(net).dump();
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32le(os, static_cast<std::uint32_t>(manifest.size()));
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (T v : net.flatten_params()) detail::put_u32le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw IoError("failed writing checkpoint");
}

template <std::floating_point T = double>
Network<T> read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw FormatError("not a CAMPNET1 checkpoint (bad magic)");
  }
  const std::uint32_t len = detail::get_u32le(is);
  std::string manifest(len, '\0');
  if (!is.read(manifest.data(), len)) throw FormatError("checkpoint manifest truncated");
  Network<T> net;
  try {
    net = network_from_manifest<T>(nlohmann::json::parse(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest invalid: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint manifest invalid: ") + e.what());
  }
  std::vector<T> params(net.parameter_count());
  for (T& v : params) v = static_cast<T>(std::bit_cast<float>(detail::get_u32le(is)));
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint parameters");
  net.unflatten_params(std::span<const T>(params));
  return net;
}

template <std::floating_point T>
void save_checkpoint(const std::string& path, const Network<T>& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(os, net);
}

template <std::floating_point T = double>
Network<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  return read_checkpoint<T>(is);
}

}  // namespace camp
