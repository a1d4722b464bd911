"""
Trajectory ensembles with deterministic seeding, plus their statistics.

Trajectory ``i`` of an ensemble uses the seed ``split_seed(master_seed, i)``.
Trajectories are grouped into fixed blocks of ``BLOCK`` consecutive indices;
blocks are independent work units and results are merged in index order, so
the output does not depend on the number of workers or on scheduling.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import StepError, TrajectoryRecord, evolve_batch, split_seed
from .model import ModelParams

BLOCK = 32
ZERO_FLOOR = 1e-12
WORKERS_ENV = "MONITORED_ISING_WORKERS"


class EnsembleError(RuntimeError):
    """Some trajectories failed; ``failures`` lists ``(index, seed, message)``."""

    def __init__(self, failures: list[tuple[int, Optional[int], str]]):
        first = failures[0]
        super().__init__(
            f"{len(failures)} trajectory(ies) failed; first: index {first[0]}, seed {first[1]}: {first[2]}"
        )
        self.failures = failures


@dataclass(frozen=True)
class Estimators:
    mean: float
    median: float
    typical: float
    n_zero: int


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    density: np.ndarray
    n_clipped: int = 0

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def mass(self) -> float:
        return float(np.sum(self.density * self.widths))


@dataclass
class EnsembleStats:
    fingerprint: str
    protocol: str
    seeds: list
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    median: np.ndarray
    typical: np.ndarray
    n_zero: np.ndarray
    t_sat: float
    t_end: float
    stationary: float
    stationary_stderr: float
    saturation_slope: float
    samples: np.ndarray
    histogram: Histogram
    mean_occupations: np.ndarray = field(repr=False)
    stderr_occupations: np.ndarray = field(repr=False)
    entropy: np.ndarray = field(repr=False)

    @property
    def n_traj(self) -> int:
        return len(self.seeds)


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1, got {env!r}")
        return n
    return os.cpu_count() or 1


def estimators(samples) -> Estimators:
    """Mean, median and typical value ``exp(mean ln S)``.

    Samples at or below ``ZERO_FLOOR`` are left out of the typical value and
    counted in ``n_zero``; the typical value is NaN if no sample is positive.
    """
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise ValueError("estimators need at least one sample")
    pos = s[s > ZERO_FLOOR]
    typical = float(np.exp(np.mean(np.log(pos)))) if pos.size else float("nan")
    return Estimators(float(np.mean(s)), float(np.median(s)), typical, int(s.size - pos.size))


def histogram(samples, n_bins: Optional[int] = None, range: Optional[tuple[float, float]] = None) -> Histogram:
    """Normalized density of ``samples``.

    Bins follow the Freedman-Diaconis rule unless ``n_bins`` is given. Samples
    outside an explicit ``range`` are clipped into the edge bins and counted
    in ``n_clipped``.
    """
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("histogram of an empty sample set")
    if n_bins is not None and n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    n_clipped = 0
    if range is not None:
        lo, hi = range
        if not hi > lo:
            raise ValueError(f"range must be increasing, got {range}")
        n_clipped = int(np.sum((s < lo) | (s > hi)))
        s = np.clip(s, lo, hi)
    edges = np.histogram_bin_edges(s, bins="fd" if n_bins is None else n_bins, range=range)
    counts, edges = np.histogram(s, bins=edges)
    density = counts / (s.size * np.diff(edges))
    return Histogram(edges, density, n_clipped)


def _window(times, series, t_sat: float, t_end: float):
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    if not t_sat < t_end:
        raise ValueError(f"empty averaging window [{t_sat}, {t_end}]")
    if t_sat < times[0] or t_end > times[-1] + 1e-12:
        raise ValueError(f"window [{t_sat}, {t_end}] outside sampled times [{times[0]}, {times[-1]}]")
    inside = (times > t_sat) & (times < t_end)
    t = np.concatenate([[t_sat], times[inside], [t_end]])
    return t, np.interp(t, times, series)


def stationary_average(times, series, t_sat: float, t_end: float) -> float:
    """Time average of ``series`` over ``[t_sat, t_end]`` by the trapezoidal rule."""
    t, s = _window(times, series, t_sat, t_end)
    return float(np.trapezoid(s, t) / (t_end - t_sat))


def saturation_slope(times, series, t_sat: float, t_end: float) -> float:
    """Least-squares slope of ``series`` against ``ln t`` inside the window."""
    t, s = _window(times, series, max(t_sat, 1e-12), t_end)
    if len(t) < 2:
        return 0.0
    return float(np.polyfit(np.log(t), s, 1)[0])


def _run_block(params: ModelParams, protocol: str, start: int, seeds, stride, log_samples):
    """Worker entry: returns ``(records, failures)`` for one block."""
    try:
        return evolve_batch(params, protocol, seeds, stride, log_samples), []
    except StepError:
        pass
    # locate the failing trajectories one by one
    records, failures = [], []
    for i, s in enumerate(seeds):
        try:
            records.append(evolve_batch(params, protocol, [s], stride, log_samples)[0])
        except StepError as exc:
            failures.append((start + i, s, str(exc)))
    return records, failures


def run_records(
    params: ModelParams,
    protocol: str,
    n_traj: int,
    master_seed: int,
    stride: int = 10,
    log_samples: Optional[int] = None,
    workers: Optional[int] = None,
) -> list[TrajectoryRecord]:
    """Raw trajectory records in index order (see module docstring for seeding)."""
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    if protocol == "noclick":
        seeds: Sequence[Optional[int]] = [None]
    else:
        seeds = [split_seed(master_seed, i) for i in range(n_traj)]
    blocks = [(i, list(seeds[i : i + BLOCK])) for i in range(0, len(seeds), BLOCK)]
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    args = [(params, protocol, start, blk, stride, log_samples) for start, blk in blocks]
    if workers == 1 or len(blocks) == 1:
        results = [_run_block(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(blocks))) as pool:
            futures = [pool.submit(_run_block, *a) for a in args]
            results = [f.result() for f in futures]
    records, failures = [], []
    for recs, fails in results:
        records.extend(recs)
        failures.extend(fails)
    if failures:
        raise EnsembleError(failures)
    return records


def aggregate(
    records: list[TrajectoryRecord],
    protocol: str,
    t_sat: Optional[float] = None,
    t_end: Optional[float] = None,
    L: Optional[int] = None,
    gamma: Optional[float] = None,
    n_bins: Optional[int] = None,
) -> EnsembleStats:
    """Statistics of records listed in trajectory index order.

    ``t_end`` defaults to the last sample and ``t_sat`` to ``4 L / gamma``,
    capped at ``t_end / 2``. Stationary samples (histogram) are the
    per-trajectory entropies at ``t_end``; the stationary value is the window
    average of the mean curve.
    """
    times = records[0].times
    ent = np.array([r.entropy for r in records])  # (n_traj, n_t)
    occ = np.array([r.occupations for r in records])  # (n_traj, n_t, L)
    n = len(records)
    t_end = float(times[-1]) if t_end is None else float(t_end)
    if t_sat is None:
        t_sat = 0.5 * t_end
        if L is not None and gamma:
            t_sat = min(4.0 * L / gamma, t_sat)
    est = [estimators(col) for col in ent.T]
    mean = np.array([e.mean for e in est])
    err = ent.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(len(times))
    occ_err = occ.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(occ.shape[1:])
    samples = np.array([np.interp(t_end, times, s) for s in ent])
    # per-trajectory window averages; their spread sets the error of the stationary value
    window = np.array([stationary_average(times, s, t_sat, t_end) for s in ent])
    window_err = float(window.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return EnsembleStats(
        fingerprint=records[0].fingerprint,
        protocol=protocol,
        seeds=[r.seed for r in records],
        times=times,
        mean=mean,
        stderr=err,
        median=np.array([e.median for e in est]),
        typical=np.array([e.typical for e in est]),
        n_zero=np.array([e.n_zero for e in est]),
        t_sat=float(t_sat),
        t_end=t_end,
        stationary=stationary_average(times, mean, t_sat, t_end),
        stationary_stderr=window_err,
        saturation_slope=saturation_slope(times, mean, t_sat, t_end),
        samples=samples,
        histogram=histogram(samples, n_bins),
        mean_occupations=occ.mean(axis=0),
        stderr_occupations=occ_err,
        entropy=ent,
    )


def run_ensemble(
    params: ModelParams,
    protocol: str,
    n_traj: int,
    master_seed: int,
    stride: int = 10,
    log_samples: Optional[int] = None,
    t_sat: Optional[float] = None,
    t_end: Optional[float] = None,
    workers: Optional[int] = None,
    n_bins: Optional[int] = None,
) -> EnsembleStats:
    """Run ``n_traj`` trajectories (one for the deterministic no-click protocol) and aggregate."""
    records = run_records(params, protocol, n_traj, master_seed, stride, log_samples, workers)
    return aggregate(records, protocol, t_sat, t_end, params.L, params.gamma, n_bins)
