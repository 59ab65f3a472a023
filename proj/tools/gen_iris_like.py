"""Regenerate configs/data/iris_like.csv: 150 rows, 4 features, 3 classes."""
import random

CENTRES = [(5.0, 3.4, 1.5, 0.25), (5.9, 2.8, 4.3, 1.3), (6.6, 3.0, 5.5, 2.0)]

random.seed(11)
with open("configs/data/iris_like.csv", "w") as f:
    f.write("f0,f1,f2,f3,label\n")
    for i in range(150):
        c = i % 3
        f.write(",".join(f"{m + random.gauss(0, 0.35):.2f}" for m in CENTRES[c]) + f",{c}\n")
