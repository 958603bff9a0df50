"""Regenerates the demo table. Run from this directory: python3 generate.py"""
import csv
import random

rng = random.Random(20240611)
rows = []
for _ in range(800):
    age = rng.uniform(20, 65)
    gender = rng.choice(["F", "M"])
    region = rng.choice(["north", "south", "east"])
    income = 20 + 0.8 * age + (8 if gender == "M" else 0) + rng.gauss(0, 5)
    score = 0.3 * age + 0.2 * income + rng.gauss(0, 3)
    tenure = max(0.0, rng.gauss(5, 2))
    rows.append([f"{age:.2f}", gender, region, f"{income:.2f}", f"{score:.2f}", f"{tenure:.2f}"])

with open("data.csv", "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["age", "gender", "region", "income", "score", "tenure"])
    w.writerows(rows)
