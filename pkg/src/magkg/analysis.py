"""Decay-exponent fits of weighted energy norms along the evolution.

A :class:`DecaySeries` holds ||U(t) P_c Psi0||_{F_{-sigma}} on a time
grid; :func:`fit_decay` fits a power law by least squares in log-log
coordinates.  :func:`run_decay_experiment` produces the series, optionally
split into the low-energy branch chi(K) and its complement.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from magkg.evolution import (CutoffSpec, EvolutionPlan, HorizonError, chi_filter,
                             concentration_radius, discrete_spectrum, evolve_series, project_Pc)
from magkg.grid import StateVector, energy_norm
from magkg.potentials import PotentialSet


class FitWindowError(ValueError):
    pass


def config_fingerprint(obj) -> str:
    """Stable short digest of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class DecaySeries:
    times: np.ndarray
    norms: np.ndarray
    sigma: float
    branch: str = "full"
    config_hash: str = ""
    states: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.norms = np.asarray(self.norms, dtype=float)
        if self.times.shape != self.norms.shape or self.times.ndim != 1:
            raise ValueError("times and norms must be matching 1-D arrays")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("series times must be strictly increasing")
        if np.any(self.times < 0):
            raise ValueError("series times must be non-negative")
        if np.any(self.norms <= 0) or not np.all(np.isfinite(self.norms)):
            raise ValueError("series norms must be positive and finite")

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    def rows(self):
        for t, v in zip(self.times, self.norms):
            yield {"t": float(t), "norm": float(v), "sigma": self.sigma,
                   "branch": self.branch, "config_hash": self.config_hash}


@dataclass
class DecayFit:
    exponent: float
    amplitude: float
    window: tuple[float, float]
    r2: float
    residuals: np.ndarray
    samples: int
    flagged: bool
    reason: str = ""

    def as_dict(self) -> dict:
        return {"exponent": self.exponent, "amplitude": self.amplitude,
                "window": list(self.window), "r2": self.r2, "samples": self.samples,
                "flagged": self.flagged, "reason": self.reason}


def fit_decay(series: DecaySeries, window: tuple[float, float] | None = None,
              min_samples: int = 8, r2_min: float = 0.95,
              expect_decay: bool = False) -> DecayFit:
    """Least-squares line through (log t, log norm) restricted to ``window``.

    The default window is [10, 0.8 t_max].  The fit is flagged when
    r2 < ``r2_min`` or, with ``expect_decay``, when the exponent is not
    negative.  A constant series has r2 = 1 by convention.
    """
    if window is None:
        window = (10.0, 0.8 * series.t_max)
    lo, hi = float(window[0]), float(window[1])
    if lo < 1.0:
        raise FitWindowError(f"fit window must start at t >= 1, got {lo}")
    if hi > series.t_max * (1 + 1e-12):
        raise FitWindowError(f"fit window end {hi} lies beyond the last sample {series.t_max}")
    sel = (series.times >= lo * (1 - 1e-12)) & (series.times <= hi * (1 + 1e-12))
    k = int(sel.sum())
    if k < min_samples:
        raise FitWindowError(f"only {k} samples in window [{lo}, {hi}], need {min_samples}")
    x = np.log(series.times[sel])
    y = np.log(series.norms[sel])
    slope, intercept = np.polyfit(x, y, 1)
    res = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(res**2))
    r2 = 1.0 if ss_tot <= 1e-28 * max(1.0, float(np.sum(y**2))) else 1.0 - ss_res / ss_tot
    flagged, reason = False, ""
    if r2 < r2_min:
        flagged, reason = True, f"r2 {r2:.3f} below {r2_min}"
    elif expect_decay and slope >= 0:
        flagged, reason = True, f"no decay (exponent {slope:.3g})"
    return DecayFit(float(slope), float(np.exp(intercept)), (lo, hi), float(r2), res,
                    k, flagged, reason)


def log_times(t_lo: float, t_hi: float, per_decade: int = 16) -> np.ndarray:
    """Log-spaced samples from t_lo to t_hi, both included."""
    count = max(2, int(np.ceil(per_decade * np.log10(t_hi / t_lo))) + 1)
    return np.geomspace(t_lo, t_hi, count)


def run_decay_experiment(p: PotentialSet, state: StateVector, sigma: float,
                         plan: EvolutionPlan | None = None, split: str = "none",
                         times=None, t_lo: float = 1.0, t_max: float | None = None,
                         per_decade: int = 16, chi: CutoffSpec | None = None,
                         keep_states: bool = False, config_hash: str = "") -> dict[str, DecaySeries]:
    """Evolve P_c Psi0 and record ||.||_{F_{-sigma}} on a log-spaced time grid.

    ``split = "low-high"`` filters the data by chi(K) (default: the
    low-energy cutoff around m) and by 1 - chi(K) and evolves both.  The
    horizon rule L - r0 - t >= 0 caps ``t_max``; asking for more raises
    :class:`HorizonError`.  Returns one series per branch, with the value
    at t = 0 prepended.
    """
    grid = p.grid
    if split not in ("none", "low-high"):
        raise ValueError(f"decay.split must be 'none' or 'low-high', got {split!r}")
    data = discrete_spectrum(p)
    psi0 = project_Pc(data, state, grid) if len(data) else state.copy()
    plan = plan or EvolutionPlan()
    r0 = plan.r0 if plan.r0 is not None else concentration_radius(grid, psi0)
    horizon = grid.L - r0
    if times is None:
        t_max = horizon if t_max is None else t_max
        times = log_times(t_lo, t_max, per_decade)
    times = np.asarray(times, dtype=float)
    if times[-1] > horizon + 1e-12:
        raise HorizonError(f"requested t={times[-1]:.4g} exceeds the horizon L - r0 = {horizon:.4g}")
    run_plan = EvolutionPlan(plan.method, plan.dt, np.inf, r0, plan.spec)
    branches = {"full": psi0}
    if split == "low-high":
        chi = chi or CutoffSpec("low", p.m)
        low = chi_filter(p, chi, psi0, plan.spec)
        branches = {"low": low, "high": psi0 - low}
    out = {}
    for name, s0 in branches.items():
        states = evolve_series(p, times, s0, run_plan)
        norms = [energy_norm(grid, s0, -sigma)] + [energy_norm(grid, s, -sigma) for s in states]
        out[name] = DecaySeries(np.concatenate([[0.0], times]), np.array(norms), sigma, name,
                                config_hash, [s0] + states if keep_states else None)
    return out


CSV_COLUMNS = ("t", "norm", "sigma", "branch", "config_hash")


def write_series_csv(path, series: list[DecaySeries]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for s in series:
            for row in s.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
