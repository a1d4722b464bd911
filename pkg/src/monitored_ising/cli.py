"""
Command line front end: run specs, sweeps and output files.

Run specs are TOML documents, for example::

    protocol = "qsd"
    L = [8, 16, 32]
    gamma = {start = 0.25, stop = 6.0, step = 0.25}   # or a list
    n_traj = 200
    master_seed = 1
    dt = 0.02
    t_max = 40.0
    l_a = "L/4"          # or an integer
    anchor = "boundary"  # or "center"
    record_stride = 10
    t_sat_factor = 4.0   # t_sat = factor * L / gamma, capped at t_max / 2
    out = "runs/qsd"

For every (gamma, L) point ``execute`` writes ``<tag>_traj.csv``,
``<tag>_stationary.csv``, ``<tag>_hist.csv`` and ``<tag>_summary.json`` with
``tag = <protocol>_g<gamma>_L<L>``. Failed trajectories are listed in
``failures.json``.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import tomli_w

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .analysis import bimodality_coefficient, fit_central_charge, locate_transition
from .dynamics import PROTOCOLS
from .ensemble import EnsembleError, EnsembleStats, estimators, run_ensemble
from .model import ModelParams, imaginary_gap, k_grid, quasiparticle_energy

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class SpecError(ValueError):
    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


@dataclass(frozen=True)
class RunSpec:
    protocol: str
    L: tuple[int, ...]
    gamma: tuple[float, ...]
    n_traj: int = 100
    master_seed: int = 0
    dt: float = 0.02
    t_max: float = 20.0
    l_a: Union[str, int] = "L/4"
    anchor: str = "boundary"
    record_stride: int = 10
    t_sat_factor: float = 4.0
    out: str = "out"

    def params(self, L: int, gamma: float) -> ModelParams:
        l_a = max(1, L // 4) if self.l_a == "L/4" else int(self.l_a)
        return ModelParams(L=L, gamma=gamma, dt=self.dt, t_max=self.t_max, l_a=l_a, anchor=self.anchor)

    def hash(self) -> str:
        """Hash of the normalized spec; the output directory is left out."""
        blob = dump_spec(dataclasses.replace(self, out=""))
        return hashlib.sha256(blob.encode()).hexdigest()


_FIELDS = {f.name for f in dataclasses.fields(RunSpec)}
_REQUIRED = ("protocol", "L", "gamma")


def gamma_range(start: float, stop: float, step: float) -> tuple[float, ...]:
    """Inclusive grid ``start, start + step, ..., stop``."""
    if not step > 0:
        raise SpecError("range step must be positive", "gamma")
    if stop < start:
        raise SpecError("range stop is below start", "gamma")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 12) for i in range(n))


def _int(value, name: str, lo: int, hi: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SpecError(f"expected an integer, got {value!r}", name)
    if value < lo or (hi is not None and value > hi):
        raise SpecError(f"out of range, got {value}", name)
    return value


def _float(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecError(f"expected a number, got {value!r}", name)
    return float(value)


def spec_from_dict(doc: dict) -> RunSpec:
    for key in doc:
        if key not in _FIELDS:
            raise SpecError(f"unknown key {key!r}", key)
    for key in _REQUIRED:
        if key not in doc:
            raise SpecError("missing required key", key)
    kw = dict(doc)
    if kw["protocol"] not in PROTOCOLS:
        raise SpecError(f"expected one of {PROTOCOLS}, got {kw['protocol']!r}", "protocol")
    ls = kw["L"] if isinstance(kw["L"], list) else [kw["L"]]
    kw["L"] = tuple(_int(v, "L", 2) for v in ls)
    g = kw["gamma"]
    if isinstance(g, dict):
        extra = set(g) - {"start", "stop", "step"}
        if extra or len(g) != 3:
            raise SpecError("range needs exactly start, stop and step", "gamma")
        kw["gamma"] = gamma_range(*(_float(g[k], "gamma") for k in ("start", "stop", "step")))
    else:
        gs = g if isinstance(g, list) else [g]
        kw["gamma"] = tuple(_float(v, "gamma") for v in gs)
    if not kw["L"] or not kw["gamma"]:
        raise SpecError("must not be empty", "L" if not kw["L"] else "gamma")
    if min(kw["gamma"]) < 0:
        raise SpecError("must be >= 0", "gamma")
    if "n_traj" in kw:
        _int(kw["n_traj"], "n_traj", 1)
    if "master_seed" in kw:
        _int(kw["master_seed"], "master_seed", 0, 2**64 - 1)
    if "record_stride" in kw:
        _int(kw["record_stride"], "record_stride", 1)
    for name in ("dt", "t_max", "t_sat_factor"):
        if name in kw:
            kw[name] = _float(kw[name], name)
    if kw.get("dt", 1.0) <= 0:
        raise SpecError(f"must be positive, got {kw['dt']}", "dt")
    if kw.get("t_sat_factor", 1.0) <= 0:
        raise SpecError(f"must be positive, got {kw['t_sat_factor']}", "t_sat_factor")
    if "l_a" in kw and kw["l_a"] != "L/4":
        la = _int(kw["l_a"], "l_a", 1)
        if la > min(kw["L"]):
            raise SpecError(f"exceeds the smallest L ({min(kw['L'])})", "l_a")
    if kw.get("anchor", "boundary") not in ("boundary", "center"):
        raise SpecError(f"expected 'boundary' or 'center', got {kw['anchor']!r}", "anchor")
    if "out" in kw and not isinstance(kw["out"], str):
        raise SpecError("expected a path string", "out")
    spec = RunSpec(**kw)
    # let ModelParams check the remaining bounds, reporting its field name
    for L in spec.L:
        for gamma in spec.gamma:
            try:
                spec.params(L, gamma)
            except ValueError as exc:
                name = str(exc).split(":")[0]
                raise SpecError(str(exc).split(":", 1)[-1].strip(), name) from None
    return spec


def parse_spec(text: str) -> RunSpec:
    """Parse and validate a TOML run spec."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"TOML parse error: {exc}") from None
    return spec_from_dict(doc)


def dump_spec(spec: RunSpec) -> str:
    """Normalized TOML form; ``parse_spec(dump_spec(s)) == s``."""
    doc = dataclasses.asdict(spec)
    doc["L"] = list(spec.L)
    doc["gamma"] = list(spec.gamma)
    return tomli_w.dumps(doc)


# ----------------------------------------------------------------- output files


def _fmt(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else format(x, ".17g")


def _json_float(x):
    x = float(x)
    return None if math.isnan(x) or math.isinf(x) else x


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def point_tag(protocol: str, gamma: float, L: int) -> str:
    return f"{protocol}_g{gamma!r}_L{L}"


def write_point(out: Path, spec: RunSpec, params: ModelParams, stats: EnsembleStats) -> dict:
    tag = point_tag(spec.protocol, params.gamma, params.L)
    _write_csv(
        out / f"{tag}_traj.csv",
        ["time", "mean_S", "stderr_S", "median_S", "typical_S"],
        zip(stats.times, stats.mean, stats.stderr, stats.median, stats.typical),
    )
    _write_csv(
        out / f"{tag}_stationary.csv",
        ["index", "seed", "S_inf"],
        ((str(i), "" if s is None else str(s), v) for i, (s, v) in enumerate(zip(stats.seeds, stats.samples))),
    )
    h = stats.histogram
    _write_csv(out / f"{tag}_hist.csv", ["bin_left", "bin_right", "density"], zip(h.edges[:-1], h.edges[1:], h.density))
    est = estimators(stats.samples)
    try:
        bimod = bimodality_coefficient(stats.samples)
    except ValueError:
        bimod = float("nan")
    summary = {
        "spec_hash": spec.hash(),
        "code_version": __version__,
        "protocol": spec.protocol,
        "gamma": params.gamma,
        "L": params.L,
        "l_a": params.l_a,
        "anchor": params.anchor,
        "dt": params.dt,
        "t_max": params.t_max,
        "fingerprint": params.fingerprint(),
        "n_traj": stats.n_traj,
        "master_seed": spec.master_seed,
        "seeds": stats.seeds,
        "t_sat": stats.t_sat,
        "t_end": stats.t_end,
        "stationary_S": stats.stationary,
        "stationary_stderr": stats.stationary_stderr,
        "saturation_slope": stats.saturation_slope,
        "samples": {
            "mean": est.mean,
            "median": est.median,
            "typical": _json_float(est.typical),
            "n_zero": est.n_zero,
            "bimodality": _json_float(bimod),
            "n_clipped": h.n_clipped,
        },
    }
    _write_json(out / f"{tag}_summary.json", summary)
    return summary


def execute(spec: RunSpec, workers: Optional[int] = None, log=None) -> int:
    """Run every (gamma, L) point of the spec and write its files; returns an exit code."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = []
    for gamma in spec.gamma:
        for L in spec.L:
            params = spec.params(L, gamma)
            t_sat = spec.t_sat_factor * L / gamma if gamma > 0 else None
            t_end = params.n_steps * params.dt
            if t_sat is not None:
                t_sat = min(t_sat, 0.5 * t_end)
            try:
                stats = run_ensemble(
                    params, spec.protocol, spec.n_traj, spec.master_seed,
                    stride=spec.record_stride, t_sat=t_sat, workers=workers,
                )
            except EnsembleError as exc:
                failures += [
                    {"gamma": gamma, "L": L, "index": i, "seed": s, "error": msg} for i, s, msg in exc.failures
                ]
                continue
            write_point(out, spec, params, stats)
            if log:
                log(f"gamma={gamma!r} L={L}: S_inf={stats.stationary:.6f} +- {stats.stationary_stderr:.2g}")
    if failures:
        _write_json(out / "failures.json", {"spec_hash": spec.hash(), "failures": failures})
        return EXIT_RUNTIME
    return EXIT_OK


# ------------------------------------------------------------------------- fit


def load_summaries(directory: Path) -> list[dict]:
    files = sorted(Path(directory).glob("*_summary.json"))
    if not files:
        raise SpecError(f"no *_summary.json files in {directory}")
    return [json.loads(f.read_text()) for f in files]


def fit_report(summaries: list[dict], min_L: int = 8, weighted: bool = False) -> dict:
    """Central charge per (protocol, gamma) and the transition estimate per protocol."""
    hashes = {s["spec_hash"] for s in summaries}
    if len(hashes) > 1:
        raise SpecError(f"inputs come from {len(hashes)} different specs; refusing to mix them")
    groups: dict = {}
    for s in summaries:
        groups.setdefault((s["protocol"], s["gamma"]), []).append((s["L"], s["stationary_S"], s["stationary_stderr"]))
    rows = []
    for (protocol, gamma), pts in sorted(groups.items()):
        try:
            fit = fit_central_charge(sorted(pts), min_L=min_L, weighted=weighted)
        except ValueError:
            continue
        rows.append({"protocol": protocol, "gamma": gamma, **fit.to_dict()})
    transitions = {}
    for protocol in sorted({r["protocol"] for r in rows}):
        table = [(r["gamma"], r["c_eff"], r["stderr_c"]) for r in rows if r["protocol"] == protocol]
        try:
            transitions[protocol] = locate_transition(table)
        except ValueError as exc:
            transitions[protocol] = str(exc)
    return {"spec_hash": hashes.pop(), "min_L": min_L, "weighted": weighted, "fits": rows, "gamma_c": transitions}


# -------------------------------------------------------------------- spectrum


def spectrum_tables(gammas: Sequence[float], n_k: int) -> tuple[list, list]:
    k, _ = k_grid(n_k)
    gap_rows, lam_rows = [], []
    for g in gammas:
        lam = quasiparticle_energy(k, g)
        exact = 2.0 * math.sqrt(g * g / 16.0 - 1.0) if g > 4 else 0.0
        gap_rows.append((g, imaginary_gap(g, n_k), exact))
        lam_rows += [(g, kk, z.real, z.imag) for kk, z in zip(k, lam)]
    return gap_rows, lam_rows


# ------------------------------------------------------------------------ main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="monitored-ising", description="Monitored Ising chain trajectory simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in PROTOCOLS:
        r = sub.add_parser(name, help=f"run a {name} sweep from a spec file")
        r.add_argument("--spec", required=True, help="TOML run spec")
        r.add_argument("--out", help="output directory (overrides the spec)")
        r.add_argument("--workers", type=int, help="worker processes (default: $MONITORED_ISING_WORKERS or CPU count)")
        r.add_argument("--seed", type=int, help="master seed (overrides the spec)")
    s = sub.add_parser("spectrum", help="quasiparticle spectrum and imaginary gap vs gamma")
    s.add_argument("--spec", help="take the gamma grid from this spec")
    s.add_argument("--gamma", type=float, nargs="+", help="gamma values")
    s.add_argument("--n-k", type=int, default=1001)
    s.add_argument("--out", required=True)
    f = sub.add_parser("fit", help="central-charge fits and transition from run outputs")
    f.add_argument("inputs", nargs="+", help="output directories of qsd/noclick runs")
    f.add_argument("--min-L", type=int, default=8)
    f.add_argument("--weighted", action="store_true")
    f.add_argument("--out", help="write the JSON report here")
    o = sub.add_parser("oracle-check", help="compare the Gaussian engine with the dense simulator")
    o.add_argument("--L", type=int, nargs="+", default=[2, 3, 4])
    o.add_argument("--steps", type=int, default=100)
    o.add_argument("--gamma", type=float, default=1.0)
    o.add_argument("--dt", type=float, default=0.05)
    o.add_argument("--seed", type=int, default=1)
    return p


def _run(args) -> int:
    if args.command in PROTOCOLS:
        spec = parse_spec(Path(args.spec).read_text())
        if spec.protocol != args.command:
            raise SpecError(f"spec says {spec.protocol!r} but the {args.command!r} command was used", "protocol")
        if args.out:
            spec = dataclasses.replace(spec, out=args.out)
        if args.seed is not None:
            spec = spec_from_dict({**dataclasses.asdict(spec), "master_seed": args.seed, "L": list(spec.L), "gamma": list(spec.gamma)})
        if args.workers is not None and args.workers < 1:
            raise SpecError("must be >= 1", "workers")
        return execute(spec, args.workers, log=lambda m: print(m, file=sys.stderr))
    if args.command == "spectrum":
        if args.spec:
            gammas = parse_spec(Path(args.spec).read_text()).gamma
        elif args.gamma:
            gammas = tuple(args.gamma)
        else:
            raise SpecError("give --gamma or --spec", "gamma")
        if args.n_k < 2:
            raise SpecError("must be >= 2", "n_k")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        gap_rows, lam_rows = spectrum_tables(gammas, args.n_k)
        _write_csv(out / "gap.csv", ["gamma", "gap_grid", "gap_exact"], gap_rows)
        _write_csv(out / "spectrum.csv", ["gamma", "k", "re_lambda", "im_lambda"], lam_rows)
        for g, gap, exact in gap_rows:
            print(f"gamma={g!r:<8} gap={gap:.10f} exact={exact:.10f}")
        return EXIT_OK
    if args.command == "fit":
        summaries = [s for d in args.inputs for s in load_summaries(Path(d))]
        report = fit_report(summaries, args.min_L, args.weighted)
        for r in report["fits"]:
            print(f"{r['protocol']:8s} gamma={r['gamma']!r:<6} c_eff={r['c_eff']:+.4f} +- {r['stderr_c']:.4f}")
        for protocol, gc in report["gamma_c"].items():
            print(f"{protocol}: gamma_c = {gc}")
        if args.out:
            _write_json(Path(args.out), report)
        return EXIT_OK
    # oracle-check
    from .oracle import MAX_L, oracle_check

    worst = 0.0
    for L in args.L:
        if not 2 <= L <= MAX_L:
            raise SpecError(f"must lie in [2, {MAX_L}]", "L")
        params = ModelParams(L=L, gamma=args.gamma, dt=args.dt, t_max=args.steps * args.dt)
        for protocol in PROTOCOLS:
            r = oracle_check(params, protocol, seed=args.seed)
            print(f"L={L} {protocol:8s} steps={r['steps']} max|dS|={r['max_dS']:.3e} max|dG|={r['max_dG']:.3e}")
            worst = max(worst, r["max_dS"] / 1e-6, r["max_dG"] / 1e-7)
    return EXIT_OK if worst < 1 else EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (SpecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report any runtime failure with exit code 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
