"""Regenerate scenarios/nursing_grid.csv.

A 40x40 grid of 0.5 m cells: a corridor along the top and two connected
rooms below, joined to the corridor by wide doors. Wall cells hold 0.99;
free cells near a wall decay as 0.99 * exp(-2.5 d) with d the distance in
cells, floored at 0.001.
"""

import math
import pathlib

W = H = 40
CELL = 0.5
OUT = pathlib.Path(__file__).resolve().parent.parent / "scenarios" / "nursing_grid.csv"

occ = [[0] * W for _ in range(H)]


def fill(r0, r1, c0, c1, v=1):
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            occ[r][c] = v


fill(0, 0, 0, W - 1)
fill(H - 1, H - 1, 0, W - 1)
fill(0, H - 1, 0, 0)
fill(0, H - 1, W - 1, W - 1)
fill(24, 25, 1, W - 2)  # partition between corridor and rooms, y in [12, 13)
fill(24, 25, 5, 16, 0)  # left door
fill(24, 25, 23, 34, 0)  # right door
fill(1, 23, 19, 20)  # room divider
fill(6, 21, 19, 20, 0)  # opening in the divider

walls = [(r, c) for r in range(H) for c in range(W) if occ[r][c]]


def level(r, c):
    if occ[r][c]:
        return 0.99
    near = [math.hypot(r - rr, c - cc) for rr, cc in walls if abs(rr - r) <= 4 and abs(cc - c) <= 4]
    d = min(near, default=99.0)
    if d > 3.5:
        return 0.001
    return max(0.001, round(0.99 * math.exp(-2.5 * d), 4))


rows = [[level(r, c) for c in range(W)] for r in range(H)]
with open(OUT, "w") as f:
    f.write(f"{W},{H},{CELL},0.0,0.0\n")
    for row in rows:
        f.write(",".join(f"{v:g}" for v in row) + "\n")

if __name__ == "__main__":
    for row in reversed(rows):
        print("".join("#" if v > 0.5 else ("+" if v >= 0.1 else " ") for v in row))
