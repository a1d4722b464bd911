"""
Post-processing: central-charge fits, bimodality and transition location.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import stats

UNIMODAL_THRESHOLD = 5.0 / 9.0
ZERO_SIGMAS = 2.0
MIN_L = 8


@dataclass(frozen=True)
class FitResult:
    c_eff: float
    intercept: float
    stderr_c: float
    stderr_intercept: float
    residual_norm: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)

    def consistent_with_zero(self, sigmas: float = ZERO_SIGMAS) -> bool:
        return self.c_eff <= sigmas * self.stderr_c


def fit_central_charge(points, min_L: int = MIN_L, weighted: bool = False) -> FitResult:
    """Least-squares fit of ``S = (c/3) ln L + a``.

    ``points`` holds ``(L, S)`` or ``(L, S, stderr)`` tuples; sizes below
    ``min_L`` are dropped. With ``weighted=True`` each point is weighted by
    ``1/stderr^2`` and the parameter errors come from those stderrs alone;
    otherwise errors use the residual variance.
    """
    pts = [p for p in points if p[0] >= min_L]
    if len({p[0] for p in pts}) < 3:
        raise ValueError(f"need at least 3 distinct L >= {min_L}, got {sorted({p[0] for p in pts})}")
    L = np.array([p[0] for p in pts], dtype=float)
    s = np.array([p[1] for p in pts], dtype=float)
    design = np.column_stack([np.log(L) / 3.0, np.ones_like(L)])
    if weighted:
        if any(len(p) < 3 for p in pts):
            raise ValueError("weighted fit needs (L, S, stderr) points")
        se = np.array([p[2] for p in pts], dtype=float)
        if np.any(se <= 0):
            raise ValueError("weighted fit needs positive stderrs")
        w = 1.0 / se
    else:
        w = np.ones_like(L)
    a = design * w[:, None]
    if np.linalg.matrix_rank(a) < 2:
        raise ValueError("degenerate design matrix")
    coef, *_ = np.linalg.lstsq(a, s * w, rcond=None)
    resid = s - design @ coef
    cov = np.linalg.inv(a.T @ a)
    n = len(s)
    if not weighted:
        cov = cov * (resid @ resid / (n - 2) if n > 2 else 0.0)
    err = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return FitResult(float(coef[0]), float(coef[1]), float(err[0]), float(err[1]), float(np.linalg.norm(resid)), n)


def bimodality_coefficient(samples) -> float:
    """Sarle's coefficient ``(g1^2 + 1) / (g2 + 3 (n-1)^2 / ((n-2)(n-3)))``.

    ``g1`` and ``g2`` are the bias-corrected sample skewness and excess
    kurtosis. Values above 5/9 point to bimodality or strong skew.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 20:
        raise ValueError(f"bimodality coefficient needs >= 20 samples, got {n}")
    if np.ptp(x) <= 1e-14 * max(1.0, np.max(np.abs(x))):
        raise ValueError("zero-variance samples")
    g1 = stats.skew(x, bias=False)
    g2 = stats.kurtosis(x, fisher=True, bias=False)
    return float((g1**2 + 1.0) / (g2 + 3.0 * (n - 1) ** 2 / ((n - 2) * (n - 3))))


def locate_transition(c_of_gamma, sigmas: float = ZERO_SIGMAS) -> float:
    """Smallest gamma at which ``c_eff <= sigmas * stderr``.

    The crossing of ``f = c_eff - sigmas * stderr`` is interpolated linearly
    between the first grid point with ``f <= 0`` and its predecessor.
    """
    rows = sorted((float(g), float(c), float(e)) for g, c, e in c_of_gamma)
    if len(rows) < 2:
        raise ValueError("need at least two gamma points")
    g = np.array([r[0] for r in rows])
    f = np.array([r[1] - sigmas * r[2] for r in rows])
    below = np.flatnonzero(f <= 0)
    if below.size == 0:
        raise ValueError("c_eff stays distinguishable from 0 over the whole grid; no crossing")
    i = int(below[0])
    if i == 0:
        raise ValueError("c_eff is already indistinguishable from 0 at the first grid point; no crossing")
    g0, g1, f0, f1 = g[i - 1], g[i], f[i - 1], f[i]
    return float(g0 + (g1 - g0) * f0 / (f0 - f1))


def is_monotone_decreasing(values, tol: float = 0.0) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) <= tol))


def saturation_time(times, series, fraction: float = 0.9, plateau: Optional[float] = None) -> float:
    """First time the series reaches ``fraction * plateau`` (linear interpolation).

    ``plateau`` defaults to the mean over the last quarter of the samples.
    """
    t = np.asarray(times, dtype=float)
    s = np.asarray(series, dtype=float)
    if plateau is None:
        plateau = float(np.mean(s[-max(1, len(s) // 4) :]))
    target = fraction * plateau
    hit = np.flatnonzero(s >= target)
    if hit.size == 0:
        raise ValueError("series never reaches the requested fraction of its plateau")
    i = int(hit[0])
    if i == 0:
        return float(t[0])
    return float(t[i - 1] + (t[i] - t[i - 1]) * (target - s[i - 1]) / (s[i] - s[i - 1]))


def log_growth(times, series, t_min: float, t_max: float) -> tuple[float, float]:
    """Slope of ``series`` against ``ln t`` on ``[t_min, t_max]`` and the fit's R^2."""
    t = np.asarray(times, dtype=float)
    s = np.asarray(series, dtype=float)
    sel = (t >= t_min) & (t <= t_max)
    if sel.sum() < 3:
        raise ValueError("fewer than 3 samples in the growth window")
    res = stats.linregress(np.log(t[sel]), s[sel])
    return float(res.slope), float(res.rvalue**2)
