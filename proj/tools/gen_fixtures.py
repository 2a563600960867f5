#!/usr/bin/env python3
"""Writes the discrete-population DGP fixtures into fixtures/.

Each DGP lists covariate cells with probabilities, P(G=g | cell), the mean
untreated path m0 and treatment-effect paths. Groups are period indices with
T+1 meaning never treated. Re-running overwrites the files with identical
content.
"""
import itertools
import json
import math
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


def logistic(v):
    return 1.0 / (1.0 + math.exp(-v))


def product_cells(*axes):
    return list(itertools.product(*axes))


def normalise(cells):
    total = sum(c["prob"] for c in cells)
    for c in cells:
        c["prob"] = c["prob"] / total
    return cells


def dump(name, dgp):
    dgp["name"] = name
    (OUT / f"{name}.json").write_text(json.dumps(dgp, indent=1) + "\n")


def flat():
    # Common trends, no effect, covariates irrelevant for outcomes.
    T, cells = 3, []
    for a, z in product_cells([0, 1], [0, 1]):
        x = [[a], [a + 0.5], [a + 0.5 + z]]
        p2 = 0.2 + 0.2 * a
        p3 = 0.2 + 0.1 * z
        cells.append({"prob": 0.25, "x": x, "z": [z], "group_probs": [p2, p3, 1 - p2 - p3],
                      "m0": [0.5 * t for t in range(1, T + 1)],
                      "tau": {"2": [0] * T, "3": [0] * T}, "unit_effect": a - z})
    return {"T": T, "tv": ["x"], "ti": ["z"], "groups": [2, 3, 4], "noise_sd": 1.0,
            "unit_effect_sd": 0.5, "cells": cells}


def assumption4(hetero):
    # Trend linear in the covariate change with a fixed slope.
    T, cells = 2, []
    for x0, d, z in product_cells([0, 1, 2], [0, 1], [0, 1]):
        x = [[x0], [x0 + d]]
        p = logistic(-0.5 + 0.4 * x0 + 0.6 * d - 0.3 * z)
        tau = 1.0 + (0.5 * x0 + 0.8 * d + 0.3 * z if hetero else 0.0)
        cells.append({"prob": 1.0 / 12, "x": x, "z": [z], "group_probs": [p, 1 - p],
                      "m0": [0.0, 1.0 + 2.0 * d], "tau": {"2": [0.0, tau]},
                      "unit_effect": x0 + z})
    return {"T": T, "tv": ["x"], "ti": ["z"], "groups": [2, 3], "noise_sd": 1.0,
            "unit_effect_sd": 0.5, "cells": cells}


def hidden_linearity_level():
    # Trend depends on the base-period level; treatment selects on that level.
    T, cells = 2, []
    probs = {0: 0.2, 1: 0.5, 2: 0.8}
    for x0, d in product_cells([0, 1, 2], [0, 1]):
        p = probs[x0]
        cells.append({"prob": 1.0 / 6, "x": [[x0], [x0 + d]], "group_probs": [p, 1 - p],
                      "m0": [0.0, 1.0 + 1.0 * x0 + 0.5 * d], "tau": {"2": [0.0, 1.0]},
                      "unit_effect": 0.5 * x0})
    return {"T": T, "tv": ["x"], "ti": [], "groups": [2, 3], "noise_sd": 1.0,
            "unit_effect_sd": 0.5, "cells": cells}


def hidden_linearity_z():
    # Trend depends on a time-invariant covariate independent of the changes.
    T, cells = 2, []
    for x0, d, z in product_cells([0, 1], [0, 1], [0, 1]):
        p = 0.3 + 0.4 * z
        cells.append({"prob": 1.0 / 8, "x": [[x0], [x0 + d]], "z": [z], "group_probs": [p, 1 - p],
                      "m0": [0.0, 1.0 + 0.5 * d + 1.0 * z], "tau": {"2": [0.0, 1.0]},
                      "unit_effect": z})
    return {"T": T, "tv": ["x"], "ti": ["z"], "groups": [2, 3], "noise_sd": 1.0,
            "unit_effect_sd": 0.5, "cells": cells}


def mb5_only():
    # x_t = a t and m0_t = c_t + a t^2: the pairwise slope changes with (t, b).
    # With T = 3 and a symmetric cohort layout the never-treated mean of the
    # residualised treatment is exactly zero in period 2, which leaves the
    # per-cell comparison weights undefined; T = 4 avoids that.
    T, cells = 4, []
    for a in [0.5, 1.0, 1.5, 2.0]:
        p2 = 0.1 + 0.1 * a
        p3 = 0.35 - 0.1 * a
        cells.append({"prob": 0.25, "x": [[a * t] for t in range(1, T + 1)],
                      "group_probs": [p2, p3, 1 - p2 - p3],
                      "m0": [0.3 * t + a * t * t for t in range(1, T + 1)],
                      "tau": {"2": [0, 1.0, 1.5, 2.0], "3": [0, 0, 2.0, 2.5]}, "unit_effect": a})
    return {"T": T, "tv": ["x"], "ti": [], "groups": [2, 3, 5], "noise_sd": 1.0,
            "unit_effect_sd": 0.5, "cells": cells}


def mb2_only():
    # Independent binary covariate per period; the untreated path loads on x_2
    # with a loading (0, 0, 1, -1), so only comparisons against the base period
    # 1 at t = 3, 4 see it, and the pooled regression slope stays zero.
    T, cells = 4, []
    s = [0.0, 0.0, 1.0, -1.0]
    for xs in product_cells([0, 1], [0, 1], [0, 1], [0, 1]):
        p = 0.3 + 0.4 * xs[1]
        cells.append({"prob": 1.0 / 16, "x": [[v] for v in xs], "group_probs": [p, 1 - p],
                      "m0": [0.2 * t + s[t - 1] * xs[1] for t in range(1, T + 1)],
                      "tau": {"2": [0, 1.0, 1.0, 1.0]}, "unit_effect": 0.0})
    return {"T": T, "tv": ["x"], "ti": [], "groups": [2, 5], "noise_sd": 1.0,
            "unit_effect_sd": 0.5, "cells": cells}


def pretrend_violation():
    # Cohort 3 starts one unit lower in period 1 than its comparison trend implies.
    T, cells = 4, []
    for a in [0, 1, 2]:
        p = 0.3 + 0.15 * a
        cells.append({"prob": 1.0 / 3, "x": [[a + 0.5 * t * (a % 2)] for t in range(1, T + 1)],
                      "group_probs": [p, 1 - p], "m0": [0.5 * t for t in range(1, T + 1)],
                      "tau": {"3": [0, 0, 1.0, 1.0]}, "unit_effect": a})
    return {"T": T, "tv": ["x"], "ti": [], "groups": [3, 5], "untreated_shift": {"3": [-1.0, 0, 0, 0]},
            "noise_sd": 1.0, "unit_effect_sd": 0.5, "cells": cells}


def staggered_3g():
    # Three cohorts plus never treated; effects grow with exposure.
    T, cells = 4, []
    for a, z in product_cells([0, 1, 2], [0, 1]):
        x = [[a + 0.3 * t * z] for t in range(1, T + 1)]
        p = [0.15 + 0.05 * a, 0.2 - 0.05 * z, 0.15 + 0.05 * z]
        cells.append({"prob": 1.0 / 6, "x": x, "z": [z], "group_probs": p + [1 - sum(p)],
                      "m0": [0.4 * t + 0.8 * x[t - 1][0] for t in range(1, T + 1)],
                      "tau": {"2": [0, 1.0, 1.5, 2.0], "3": [0, 0, 0.5, 1.0], "4": [0, 0, 0, 2.0]},
                      "unit_effect": a + z})
    return {"T": T, "tv": ["x"], "ti": ["z"], "groups": [2, 3, 4, 5], "noise_sd": 1.0,
            "unit_effect_sd": 0.5, "cells": cells}


def double_robust():
    # Untreated trend quadratic in z; P(D=1 | z) exactly logistic-linear in z.
    T, cells = 2, []
    for x0 in [0, 1, 2, 3]:
        p = logistic(-1.0 + 0.6 * x0)
        cells.append({"prob": 0.25, "z": [x0], "group_probs": [p, 1 - p],
                      "m0": [0.0, 1.0 + 0.5 * x0 * x0], "tau": {"2": [0.0, 1.0 + 0.5 * x0]},
                      "unit_effect": x0})
    return {"T": T, "tv": [], "ti": ["z"], "groups": [2, 3], "noise_sd": 1.0,
            "unit_effect_sd": 0.5, "cells": cells}


def malformed():
    rows = ["unit,time,y,treat,x"]
    for u in range(1, 5):
        for t in range(1, 4):
            if u == 3 and t == 2:
                continue
            rows.append(f"{u},{t},{0.5 * u + t},{1 if (u <= 2 and t >= 2) else 0},{u * 0.1 + t}")
    (OUT / "malformed_unbalanced.csv").write_text("\n".join(rows) + "\n")
    schema = {"unit": "unit", "time": "time", "outcome": "y", "treat": "treat", "tv": ["x"]}
    (OUT / "malformed_unbalanced.schema.json").write_text(json.dumps(schema, indent=1) + "\n")


def main():
    OUT.mkdir(exist_ok=True)
    dump("flat", flat())
    dump("assumption4_ok", assumption4(False))
    dump("assumption4_hetero", assumption4(True))
    dump("hidden_linearity_level", hidden_linearity_level())
    dump("hidden_linearity_z", hidden_linearity_z())
    dump("mb5_only", mb5_only())
    dump("mb2_only", mb2_only())
    dump("pretrend_violation", pretrend_violation())
    dump("staggered_3g", staggered_3g())
    dump("double_robust", double_robust())
    malformed()


if __name__ == "__main__":
    main()
