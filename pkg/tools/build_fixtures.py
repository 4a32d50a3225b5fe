#!/usr/bin/env python3
"""Regenerate the bundled synthetic stand-in fixtures.

Both datasets reproduce the published design geometry of the two studies
the package documents (sequences, periods, measurement grids, unit counts)
with simulated responses calibrated to the published model estimates.  They
are stand-ins: statistics computed from them will not equal the published
values.  Replace ``src/crossfit/data/{arterial,water}.csv`` with the
original exports (and set ``synthetic_standin`` to false in
PROVENANCE.json) to reproduce the published numbers.

Usage: python tools/build_fixtures.py
"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "src" / "crossfit" / "data"

ARTERIAL_SEED = 202401
WATER_SEED = 202402

ARTERIAL_TIMES = [-30.0, -15.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0, 120.0, 240.0]
ARTERIAL_SEQUENCES = ["ABC", "ACB", "BCA", "BAC", "CAB", "CBA"]
# published parametric estimates used as the generating coefficients
ARTERIAL_BETA = {
    "(Intercept)": 107.5294, "Period2": 2.06062, "Period3": 0.93562,
    "TreatmentB": 1.55793, "TreatmentC": -6.26855,
    "Carry_B": -2.12621, "Carry_C": -3.10565, "Time": 0.00620,
}
# variance components: unit intercept + within-period AR1 + white noise
ARTERIAL_VAR_UNIT = 64.0
ARTERIAL_VAR_WITHIN = 40.0
ARTERIAL_VAR_NOISE = 32.0
ARTERIAL_AR1 = 0.70

WATER_BETA = {
    "(Intercept)": 2.66326, "Period2": 0.31751, "Treatment1": 0.19954,
    "Carry_1": 0.19827, "Age": 0.00475,
}
WATER_UNITS = (40, 39)      # sequence 0->1 and 1->0 completers
WATER_LATENT_RHO = 0.6
WATER_NB_SIZE = 45.0        # negative-binomial size: dispersion ~ 1.6 at mu ~ 19


def smooth_time(t):
    """Post-dose rise and decay, zero-ish at the pre-dose measurements."""
    t = np.asarray(t, float)
    return 7.0 * np.exp(-0.5 * ((t - 70.0) / 55.0) ** 2)


# one named shape per ordered carry pair so the pairs are distinguishable
CARRY_SHAPES = {
    "Carry_A_over_B": lambda t: -5.0 * np.exp(-0.5 * ((t - 40.0) / 50.0) ** 2),
    "Carry_A_over_C": lambda t: 4.0 * np.sin(2 * np.pi * (t + 30.0) / 540.0),
    "Carry_B_over_A": lambda t: 6.0 * np.exp(-0.5 * ((t - 120.0) / 70.0) ** 2),
    "Carry_B_over_C": lambda t: -4.5 * np.sin(2 * np.pi * (t + 30.0) / 540.0),
    "Carry_C_over_A": lambda t: -6.0 * np.exp(-0.5 * ((t - 90.0) / 60.0) ** 2),
    "Carry_C_over_B": lambda t: 3.5 * np.exp(-0.5 * ((t - 180.0) / 80.0) ** 2),
}


def build_arterial() -> pd.DataFrame:
    rng = np.random.default_rng(ARTERIAL_SEED)
    times = np.asarray(ARTERIAL_TIMES)
    L, P = times.size, 3
    ar1 = ARTERIAL_AR1 ** np.abs(np.subtract.outer(np.arange(L), np.arange(L)))
    chol_w = np.linalg.cholesky(ar1)

    rows = []
    subject = 0
    for seq in ARTERIAL_SEQUENCES:
        for _ in range(2):
            subject += 1
            u = rng.standard_normal() * np.sqrt(ARTERIAL_VAR_UNIT)
            prev = None
            for j in range(P):
                treat = seq[j]
                w = chol_w @ rng.standard_normal(L) * np.sqrt(ARTERIAL_VAR_WITHIN)
                eps = rng.standard_normal(L) * np.sqrt(ARTERIAL_VAR_NOISE)
                eta = (ARTERIAL_BETA["(Intercept)"]
                       + ARTERIAL_BETA.get(f"Period{j + 1}", 0.0)
                       + ARTERIAL_BETA.get(f"Treatment{treat}", 0.0)
                       + ARTERIAL_BETA["Time"] * times
                       + smooth_time(times))
                if prev is not None:
                    eta = eta + ARTERIAL_BETA.get(f"Carry_{prev}", 0.0)
                    pair = f"Carry_{prev}_over_{treat}"
                    eta = eta + CARRY_SHAPES[pair](times)
                y = eta + u + w + eps
                for k in range(L):
                    rows.append((subject, j + 1, treat, times[k],
                                 round(float(y[k]), 2)))
                prev = treat
    return pd.DataFrame(rows, columns=["Subject", "Period", "Treatment",
                                       "Time", "Pressure"])


def build_water() -> pd.DataFrame:
    rng = np.random.default_rng(WATER_SEED)
    rows = []
    ident = 0
    for seq, n_units in zip(("01", "10"), WATER_UNITS):
        for _ in range(n_units):
            ident += 1
            age = int(rng.integers(9, 15))
            z = rng.multivariate_normal(
                np.zeros(2), [[1.0, WATER_LATENT_RHO], [WATER_LATENT_RHO, 1.0]])
            u = stats.norm.cdf(z)
            prev = None
            for j, treat in enumerate(seq):
                eta = (WATER_BETA["(Intercept)"]
                       + (WATER_BETA["Period2"] if j == 1 else 0.0)
                       + (WATER_BETA["Treatment1"] if treat == "1" else 0.0)
                       + (WATER_BETA["Carry_1"] if prev == "1" else 0.0)
                       + WATER_BETA["Age"] * age)
                mu = np.exp(eta)
                p = WATER_NB_SIZE / (WATER_NB_SIZE + mu)
                y = int(stats.nbinom.ppf(u[j], WATER_NB_SIZE, p))
                rows.append((ident, j + 1, int(treat), age, y))
                prev = treat
    return pd.DataFrame(rows, columns=["ID", "Period", "Treatment", "Age", "LCC"])


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    arterial = build_arterial()
    water = build_water()
    arterial.to_csv(DATA / "arterial.csv", index=False)
    water.to_csv(DATA / "water.csv", index=False)
    provenance = {
        "arterial": {
            "synthetic_standin": True,
            "generator": "tools/build_fixtures.py",
            "seed": ARTERIAL_SEED,
            "design": "12 subjects, 6 three-period sequences x2, 10 "
                      "measurements per period at the published minute grid",
            "note": "simulated responses calibrated to the published model "
                    "estimates; replace with the original export to "
                    "reproduce published statistics",
        },
        "water": {
            "synthetic_standin": True,
            "generator": "tools/build_fixtures.py",
            "seed": WATER_SEED,
            "design": "79 students, two periods, sequences 0->1 (40) and "
                      "1->0 (39), one count response per period",
            "note": "simulated responses calibrated to the published model "
                    "estimates; replace with the original export to "
                    "reproduce published statistics",
        },
    }
    with open(DATA / "PROVENANCE.json", "w") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"arterial: {len(arterial)} rows -> {DATA / 'arterial.csv'}")
    print(f"water: {len(water)} rows -> {DATA / 'water.csv'}")


if __name__ == "__main__":
    main()
