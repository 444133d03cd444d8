#!/usr/bin/env python3
"""Write a seeded two-moons CSV (x, y, label)."""
import argparse
import csv
import math
import random


def moons(n, noise, seed):
    rng = random.Random(seed)
    outer = n // 2
    inner = n - outer
    rows = []
    for i in range(outer):
        t = math.pi * i / (outer - 1)
        rows.append((math.cos(t), math.sin(t), 0))
    for i in range(inner):
        t = math.pi * i / (inner - 1)
        rows.append((1 - math.cos(t), 0.5 - math.sin(t), 1))
    rows = [(x + rng.gauss(0, noise), y + rng.gauss(0, noise), c) for x, y, c in rows]
    rng.shuffle(rows)
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--samples", type=int, default=1000)
    parser.add_argument("--noise", type=float, default=0.1)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default="scripts/data/moons.csv")
    args = parser.parse_args()
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "label"])
        for x, y, c in moons(args.samples, args.noise, args.seed):
            w.writerow([f"{x:.6f}", f"{y:.6f}", c])


if __name__ == "__main__":
    main()
