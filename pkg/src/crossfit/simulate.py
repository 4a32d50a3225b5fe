"""Deterministic scenario simulator for crossover designs.

Scenarios describe sequences, per-period measurement times, a family, true
coefficients on the default-encoded design, a true correlation (plain
structure or a between (x) within Kronecker product), an optional smooth
time effect and smooth carry-over effects.  Gaussian responses use the
exact multivariate normal; count/binary responses go through a Gaussian
copula so the latent correlation matches the target.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .correlation import build_correlation, kronecker
from .design import CarrySet, DesignFrame, create_carry, encode_design_matrix
from .errors import SpecificationError

__all__ = ["Scenario", "simulate_design", "scenario_from_dict"]


@dataclass(frozen=True)
class SmoothEffect:
    """Named smooth shapes used for time and carry-over effects."""

    kind: str = "sin"          # sin | bump | linear
    amplitude: float = 1.0
    cycle: float = 240.0
    shift: float = 0.0

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, float)
        if self.kind == "sin":
            return self.amplitude * np.sin(2.0 * np.pi * (t - self.shift) / self.cycle)
        if self.kind == "bump":
            mid = self.shift
            width = self.cycle
            return self.amplitude * np.exp(-0.5 * ((t - mid) / width) ** 2)
        if self.kind == "linear":
            return self.amplitude * (t - self.shift) / max(self.cycle, 1e-12)
        raise SpecificationError(f"unknown smooth kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    sequences: Sequence[str]
    units_per_sequence: Sequence[int]
    times: Sequence[float]
    family: str = "gaussian"
    beta: dict = field(default_factory=dict)
    correlation: dict = field(default_factory=lambda: {"structure": "independence"})
    dispersion: float = 1.0
    time_effect: Optional[SmoothEffect] = None
    carry_effects: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def n_periods(self) -> int:
        return len(self.sequences[0])


def scenario_from_dict(cfg: dict) -> Scenario:
    """Build a Scenario from a plain-JSON configuration dict."""
    known = {"sequences", "units_per_sequence", "times", "family", "beta",
             "correlation", "dispersion", "time_effect", "carry_effects",
             "seed"}
    unknown = set(cfg) - known
    if unknown:
        raise SpecificationError(f"unknown scenario keys: {sorted(unknown)}")
    cfg = dict(cfg)
    if "time_effect" in cfg and cfg["time_effect"] is not None:
        cfg["time_effect"] = SmoothEffect(**cfg["time_effect"])
    if "carry_effects" in cfg:
        cfg["carry_effects"] = {
            k: SmoothEffect(**v) for k, v in cfg["carry_effects"].items()}
    ups = cfg.get("units_per_sequence")
    if isinstance(ups, int):
        cfg["units_per_sequence"] = [ups] * len(cfg["sequences"])
    return Scenario(**cfg)


def _sequence_tokens(seq) -> list:
    return list(seq) if isinstance(seq, str) else [str(t) for t in seq]


def _target_correlation(spec: dict, dim: int, n_periods: int, L: int) -> np.ndarray:
    structure = spec.get("structure", "independence")
    if structure == "kronecker":
        psi = np.asarray(spec["between"], float)
        within = spec.get("within", {"structure": "independence"})
        r1 = build_correlation(within.get("structure", "independence"), L,
                               alpha=within.get("alpha"))
        if psi.shape != (n_periods, n_periods):
            raise SpecificationError(
                f"between matrix must be {n_periods}x{n_periods}")
        return kronecker(psi, r1)
    return build_correlation(structure, dim, alpha=spec.get("alpha"),
                             matrix=(np.asarray(spec["matrix"], float)
                                     if "matrix" in spec else None))


def simulate_design(scenario: Scenario, seed: Optional[int] = None):
    """Generate one dataset; returns (frame, truth dict).

    The frame is a CarrySet (simple indicators included) for multi-period
    scenarios, a bare DesignFrame otherwise.  The same scenario and seed
    always produce the identical data.
    """
    seed = scenario.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    sequences = [_sequence_tokens(s) for s in scenario.sequences]
    n_periods = len(sequences[0])
    if any(len(s) != n_periods for s in sequences):
        raise SpecificationError("all sequences must have the same length")
    times = np.asarray(scenario.times, float)
    L = times.size
    dim = n_periods * L

    rows = []
    unit = 0
    for seq, n_units in zip(sequences, scenario.units_per_sequence):
        for _ in range(n_units):
            unit += 1
            for j in range(n_periods):
                for t in times:
                    rows.append((unit, j + 1, seq[j], float(t)))
    df = pd.DataFrame(rows, columns=["Unit", "Period", "Treatment", "Time"])
    df["Response"] = 0.0
    frame = DesignFrame(data=df, unit_col="Unit", period_col="Period",
                        treatment_col="Treatment", response_col="Response",
                        time_col="Time")

    carries = create_carry(frame, mode="simple") if n_periods > 1 else None
    encodable = carries if carries is not None else frame
    X, names = encode_design_matrix(encodable, covariates=["Time"]
                                    if "Time" in scenario.beta else [])
    unknown = set(scenario.beta) - set(names)
    if unknown:
        raise SpecificationError(
            f"beta names {sorted(unknown)} not in design columns {names}")
    beta = np.array([scenario.beta.get(n, 0.0) for n in names])
    eta = X @ beta
    if scenario.time_effect is not None:
        eta = eta + scenario.time_effect(df["Time"].to_numpy())
    if scenario.carry_effects:
        # smooth carry effects may address simple or ordered-pair indicators
        indicators = {}
        if carries is not None:
            indicators.update({c: carries.data[c] for c in carries.carry_names})
            if any("_over_" in k for k in scenario.carry_effects):
                cplx = create_carry(frame, mode="complex")
                indicators.update({c: cplx.data[c] for c in cplx.carry_names})
        for cname, effect in scenario.carry_effects.items():
            if cname not in indicators:
                raise SpecificationError(
                    f"carry effect {cname!r} has no matching indicator column")
            eta = eta + effect(df["Time"].to_numpy()) * indicators[cname].to_numpy()

    corr = _target_correlation(scenario.correlation, dim, n_periods, L)
    eigval = np.linalg.eigvalsh(corr)
    if eigval.min() <= 0:
        raise SpecificationError(
            f"target correlation is not positive definite (min eig {eigval.min():.3e})")
    chol = np.linalg.cholesky(corr)
    n_total = unit
    z = (rng.standard_normal((n_total, dim)) @ chol.T)

    fam = scenario.family.lower()
    phi = float(scenario.dispersion)
    if fam == "gaussian":
        y = eta + math.sqrt(phi) * z.reshape(-1)
    elif fam == "poisson":
        mu = np.exp(eta)
        u = stats.norm.cdf(z.reshape(-1))
        y = stats.poisson.ppf(u, mu)
    elif fam == "binomial":
        mu = 1.0 / (1.0 + np.exp(-eta))
        u = stats.norm.cdf(z.reshape(-1))
        y = (u < mu).astype(float)
    else:
        raise SpecificationError(f"unsupported simulation family {fam!r}")

    out = (carries.data if carries is not None else df).copy()
    out["Response"] = y
    sim_frame = DesignFrame(data=out, unit_col="Unit", period_col="Period",
                            treatment_col="Treatment", response_col="Response",
                            time_col="Time")
    if carries is not None:
        sim_frame = CarrySet(frame=sim_frame,
                             carry_names=carries.carry_names, mode="simple")
    truth = {
        "seed": int(seed),
        "family": fam,
        "beta": {n: float(b) for n, b in zip(names, beta)},
        "dispersion": phi,
        "correlation": scenario.correlation,
        "n_units": int(n_total),
        "columns": names,
    }
    return sim_frame, truth


def write_scenario_outputs(scenario: Scenario, out_dir, seed=None):
    """CSV + ground-truth sidecar under ``out_dir``; returns the two paths."""
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame, truth = simulate_design(scenario, seed=seed)
    csv_path = out / "simulated.csv"
    drop = [c for c in frame.data.columns if c.startswith("Carry_")]
    frame.data.drop(columns=drop).to_csv(csv_path, index=False)
    truth_path = out / "truth.json"
    with open(truth_path, "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, truth_path
