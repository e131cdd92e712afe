"""Regenerates the bundled example microdata and population cells."""

from pathlib import Path

import numpy as np

rng = np.random.default_rng(20240601)
out = Path(__file__).resolve().parent
AREAS, WEEKS = 8, 3
AGES = [20, 30, 40, 50, 60, 70]

area_effect = rng.normal(0, 0.15, AREAS)
rows = []
uid = 0
for week in range(1, WEEKS + 1):
    for area in range(1, AREAS + 1):
        for _ in range(rng.integers(4, 9)):
            uid += 1
            female = int(rng.random() < 0.5)
            age = int(rng.choice(AGES))
            weight = float(np.round(np.exp(rng.normal(4.8, 0.4)), 2))
            a = (age - 50) / 15
            log_hours = 3.6 + area_effect[area - 1] - 0.15 * female - 0.1 * a * a + rng.normal(0, 0.3)
            employed = int(rng.random() < 1 / (1 + np.exp(-(0.4 + 0.8 * area_effect[area - 1] - 0.5 * a * a))))
            for t in range(week, min(WEEKS, week + 2) + 1):
                if t > week:
                    if rng.random() > 0.6:
                        break
                    log_hours = 0.6 * log_hours + 0.4 * 3.6 + rng.normal(0, 0.2)
                    if rng.random() < 0.2:
                        employed = 1 - employed
                rows.append((f"u{uid:03d}", area, t, weight, round(float(np.exp(log_hours)), 3), employed, female, age))

rows.sort(key=lambda r: (r[2], r[1], r[0]))
with open(out / "microdata.csv", "w") as f:
    f.write("unit_id,area,week,weight,hours,employed,female,age\n")
    for r in rows:
        f.write(",".join(str(v) for v in r) + "\n")

with open(out / "cells.csv", "w") as f:
    f.write("area,week,female,age,count\n")
    for area in range(1, AREAS + 1):
        for week in range(1, WEEKS + 1):
            for female in (0, 1):
                for age in AGES:
                    f.write(f"{area},{week},{female},{age},{int(rng.integers(60, 140))}\n")
print(len(rows), "microdata rows")
