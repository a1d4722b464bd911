import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monitored_ising.analysis import is_monotone_decreasing
from monitored_ising.cli import (
    RunSpec,
    SpecError,
    dump_spec,
    execute,
    fit_report,
    load_summaries,
    main,
    parse_spec,
    point_tag,
)

MINIMAL = 'protocol = "qsd"\nL = [8]\ngamma = [1.0]\n'


def _tiny(tmp_path, **kw) -> RunSpec:
    base = dict(protocol="qsd", L=(6, 8), gamma=(1.0,), n_traj=40, master_seed=3, dt=0.02, t_max=1.0, record_stride=5)
    base.update(kw)
    return dataclasses.replace(RunSpec(**base), out=str(tmp_path))


def test_minimal_spec_fills_defaults():
    spec = parse_spec(MINIMAL)
    assert spec == RunSpec(protocol="qsd", L=(8,), gamma=(1.0,))
    assert parse_spec(dump_spec(spec)) == spec
    assert "n_traj = 100" in dump_spec(spec)


def test_gamma_range_has_24_points():
    spec = parse_spec('protocol = "noclick"\nL = [16]\ngamma = { start = 0.25, stop = 6.0, step = 0.25 }\n')
    assert len(spec.gamma) == 24
    assert spec.gamma[0] == 0.25 and spec.gamma[-1] == 6.0
    np.testing.assert_allclose(np.diff(spec.gamma), 0.25)


def test_negative_dt_names_field():
    with pytest.raises(SpecError) as info:
        parse_spec(MINIMAL + "dt = -0.01\n")
    assert info.value.field == "dt" and "dt" in str(info.value)


def test_unknown_key_named():
    with pytest.raises(SpecError) as info:
        parse_spec(MINIMAL + "n_trajectories = 5\n")
    assert "n_trajectories" in str(info.value)


def test_parse_error_has_position():
    with pytest.raises(SpecError) as info:
        parse_spec('protocol = "qsd"\nL = [8\ngamma = 1\n')
    assert "line" in str(info.value) and "column" in str(info.value)


@pytest.mark.parametrize(
    "extra, field",
    [
        ("n_traj = 0\n", "n_traj"),
        ("t_max = -1.0\n", "t_max"),
        ("l_a = 9\n", "l_a"),
        ("record_stride = 0\n", "record_stride"),
        ("master_seed = -1\n", "master_seed"),
        ('anchor = "left"\n', "anchor"),
    ],
)
def test_field_validation(extra, field):
    with pytest.raises(SpecError) as info:
        parse_spec(MINIMAL + extra)
    assert info.value.field == field


def test_bad_protocol_and_gamma():
    with pytest.raises(SpecError) as info:
        parse_spec('protocol = "jump"\nL = [8]\ngamma = [1.0]\n')
    assert info.value.field == "protocol"
    with pytest.raises(SpecError) as info:
        parse_spec('protocol = "qsd"\nL = [8]\ngamma = [-1.0]\n')
    assert info.value.field == "gamma"


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(["qsd", "noclick"]),
    st.lists(st.integers(4, 256), min_size=1, max_size=4),
    st.lists(st.floats(0, 20, allow_nan=False), min_size=1, max_size=5),
    st.integers(1, 10**6),
    st.integers(0, 2**64 - 1),
    st.floats(1e-4, 0.5),
    st.floats(0, 100),
)
def test_spec_round_trip(protocol, Ls, gammas, n_traj, seed, dt, t_max):
    t_max = 0.0 if t_max < dt else t_max
    spec = RunSpec(protocol, tuple(Ls), tuple(gammas), n_traj=n_traj, master_seed=seed, dt=dt, t_max=t_max)
    assert parse_spec(dump_spec(spec)) == spec


def test_execute_writes_files_and_is_byte_identical(tmp_path):
    a = _tiny(tmp_path / "a")
    b = _tiny(tmp_path / "b")
    assert execute(a, workers=1) == 0 and execute(b, workers=2) == 0
    names = sorted(p.name for p in Path(a.out).iterdir())
    assert len(names) == 8
    assert names == sorted(p.name for p in Path(b.out).iterdir())
    for n in names:
        assert (Path(a.out) / n).read_bytes() == (Path(b.out) / n).read_bytes()
    tag = point_tag("qsd", 1.0, 8)
    header = (Path(a.out) / f"{tag}_traj.csv").read_text().splitlines()[0]
    assert header == "time,mean_S,stderr_S,median_S,typical_S"
    summary = json.loads((Path(a.out) / f"{tag}_summary.json").read_text())
    assert summary["spec_hash"] == a.hash() and summary["n_traj"] == 40 and len(summary["seeds"]) == 40
    rows = (Path(a.out) / f"{tag}_stationary.csv").read_text().splitlines()
    assert rows[0] == "index,seed,S_inf" and len(rows) == 41


def test_csv_floats_round_trip(tmp_path):
    spec = _tiny(tmp_path, L=(6,))
    execute(spec, workers=1)
    tag = point_tag("qsd", 1.0, 6)
    rows = (Path(spec.out) / f"{tag}_traj.csv").read_text().splitlines()[1:]
    for r in rows:
        for field in r.split(","):
            x = float(field)
            if not np.isnan(x):
                assert format(x, ".17g") == field


def test_spec_hash_ignores_output_dir(tmp_path):
    assert _tiny(tmp_path / "x").hash() == _tiny(tmp_path / "y").hash()
    assert _tiny(tmp_path).hash() != _tiny(tmp_path, master_seed=4).hash()


def test_fit_rejects_mixed_hashes(tmp_path):
    a = _tiny(tmp_path / "a", L=(8, 12, 16), t_max=0.5)
    b = _tiny(tmp_path / "b", L=(8, 12, 16), t_max=0.5, master_seed=99)
    execute(a, workers=1)
    execute(b, workers=1)
    report = fit_report(load_summaries(Path(a.out)))
    assert report["spec_hash"] == a.hash() and len(report["fits"]) == 1
    with pytest.raises(SpecError):
        fit_report(load_summaries(Path(a.out)) + load_summaries(Path(b.out)))
    assert main(["fit", a.out, b.out]) == 1
    assert main(["fit", a.out, "--out", str(tmp_path / "fit.json")]) == 0
    assert json.loads((tmp_path / "fit.json").read_text())["fits"][0]["n_points"] == 3


def test_exit_codes(tmp_path, capsys):
    spec_file = tmp_path / "spec.toml"
    spec_file.write_text(MINIMAL + "dt = -1.0\n")
    assert main(["qsd", "--spec", str(spec_file)]) == 1
    assert "dt" in capsys.readouterr().err
    assert main(["qsd", "--spec", str(tmp_path / "missing.toml")]) == 1
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 1
    # protocol mismatch between command and spec
    spec_file.write_text(MINIMAL)
    assert main(["noclick", "--spec", str(spec_file)]) == 1
    # a diverging run reports its failed seeds and exits with 2
    spec_file.write_text('protocol = "qsd"\nL = [4]\ngamma = [400.0]\ndt = 0.5\nt_max = 50.0\nn_traj = 2\n')
    assert main(["qsd", "--spec", str(spec_file), "--out", str(tmp_path / "bad"), "--workers", "1"]) == 2
    failures = json.loads((tmp_path / "bad" / "failures.json").read_text())["failures"]
    assert {f["index"] for f in failures} <= {0, 1} and all(f["seed"] for f in failures)


def test_seed_and_out_overrides(tmp_path):
    spec_file = tmp_path / "spec.toml"
    spec_file.write_text('protocol = "qsd"\nL = [6]\ngamma = [1.0]\nn_traj = 3\nt_max = 0.2\n')
    assert main(["qsd", "--spec", str(spec_file), "--out", str(tmp_path / "o"), "--seed", "5", "--workers", "1"]) == 0
    summary = json.loads(next((tmp_path / "o").glob("*_summary.json")).read_text())
    assert summary["master_seed"] == 5


def test_spectrum_subcommand(tmp_path, capsys):
    assert main(["spectrum", "--gamma", "2", "6", "--n-k", "1001", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "gap.csv").read_text().splitlines()
    assert rows[0] == "gamma,gap_grid,gap_exact"
    g2, g6 = (list(map(float, r.split(","))) for r in rows[1:])
    assert g2[1] == 0.0 and abs(g6[1] - 2 * np.sqrt(36 / 16 - 1)) < 1e-6
    assert len((tmp_path / "spectrum.csv").read_text().splitlines()) == 1 + 2 * 1001
    assert main(["spectrum", "--out", str(tmp_path)]) == 1


def test_oracle_check_subcommand(capsys):
    assert main(["oracle-check", "--L", "2", "3", "--steps", "50"]) == 0
    out = capsys.readouterr().out
    assert out.count("max|dS|") == 4
    assert main(["oracle-check", "--L", "12"]) == 1


@pytest.mark.slow
def test_noclick_sweep_area_vs_log(tmp_path):
    spec_file = tmp_path / "spec.toml"
    spec_file.write_text(
        'protocol = "noclick"\nL = [16, 32]\ngamma = [1.0, 6.0]\ndt = 0.25\nt_max = 256.0\nrecord_stride = 1\n'
    )
    out = tmp_path / "nc"
    assert main(["noclick", "--spec", str(spec_file), "--out", str(out)]) == 0
    assert len(list(out.glob("*_summary.json"))) == 4
    s = {(d["gamma"], d["L"]): d["stationary_S"] for d in load_summaries(out)}
    assert abs(s[(6.0, 32)] - s[(6.0, 16)]) < 0.05
    assert s[(1.0, 32)] - s[(1.0, 16)] > 0.2, s


@pytest.mark.slow
def test_fit_table_decreases_for_noclick(tmp_path):
    spec_file = tmp_path / "spec.toml"
    spec_file.write_text(
        'protocol = "noclick"\nL = [16, 32, 64]\ngamma = [1.0, 2.0, 3.0, 5.0]\ndt = 0.25\nt_max = 256.0\n'
        "record_stride = 1\n"
    )
    out = tmp_path / "nc"
    assert main(["noclick", "--spec", str(spec_file), "--out", str(out)]) == 0
    report = fit_report(load_summaries(out))
    c = [r["c_eff"] for r in report["fits"]]
    assert is_monotone_decreasing(c), c
