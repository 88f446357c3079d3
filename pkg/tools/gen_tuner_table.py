"""Write tests/data/tuner_table.json from exact rationals.

Deliberately self-contained (no apbit import): it is the oracle the tuner
tests are frozen against.  Selection rule: if no block pair reaches TLP >= T
take the highest-TLP pair; otherwise the highest-CI pair among those that
do.  Ties go to larger CI, then larger b_m, then larger b_n.

    python3 tools/gen_tuner_table.py
"""

import json
import random
from fractions import Fraction
from pathlib import Path

SIZES = (16, 32, 64, 128)
T = 64
OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "tuner_table.json"


def row(M, N, K, p, q):
    grid = []
    for bm in SIZES:
        for bn in SIZES:
            tlp = Fraction(p * M * q * N, bm * bn)
            ci = Fraction(2 * bm * bn, bm + bn)
            grid.append({"b_m": bm, "b_n": bn, "tlp": [tlp.numerator, tlp.denominator],
                         "ci": [ci.numerator, ci.denominator], "_tlp": tlp, "_ci": ci})
    feasible = [g for g in grid if g["_tlp"] >= T]
    if feasible:
        best = max(feasible, key=lambda g: (g["_ci"], g["_tlp"], g["b_m"], g["b_n"]))
    else:
        best = max(grid, key=lambda g: (g["_tlp"], g["_ci"], g["b_m"], g["b_n"]))
    for g in grid:
        del g["_tlp"], g["_ci"]
    return {"M": M, "N": N, "K": K, "p": p, "q": q, "grid": grid, "choice": [best["b_m"], best["b_n"]]}


def main():
    rng = random.Random(20240607)
    cases = [(64, 1024, 1024, 1, 2), (16, 16, 128, 1, 1), (4096, 4096, 4096, 1, 1), (8, 8, 128, 2, 8)]
    while len(cases) < 40:
        cases.append((rng.choice([8, 16, 24, 64, 100, 128, 256, 512, 1024]),
                      rng.choice([8, 16, 40, 64, 128, 256, 512, 1024, 4096]),
                      rng.choice([128, 256, 512, 1024]), rng.randint(1, 8), rng.randint(1, 8)))
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps([row(*c) for c in cases]) + "\n")
    print(f"wrote {len(cases)} cases to {OUT}")


if __name__ == "__main__":
    main()
