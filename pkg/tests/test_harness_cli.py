import json
import math
import os
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lp_ends
from lp_ends import harness as hx
from lp_ends.cli import main
from lp_ends.errors import ConfigError


def _row(value=0.5, passed=True, **kw):
    base = dict(suite="partition", warp="hyperbolic", n=2, N=256, param_name="K", param_value="10",
                quantity="residual", value=value, threshold=1e-12, passed=passed, seed=0)
    base.update(kw)
    return hx.ReportRow(**base)


def test_default_config_round_trip():
    cfg = hx.ExperimentConfig()
    again = hx.ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.to_json() == cfg.to_json()


def test_replace_nested_field():
    cfg = hx.ExperimentConfig().replace(geometry__N=64, warp__kind="conical", warp__params=[])
    assert cfg.geometry.N == 64 and cfg.warp.kind == "conical"


@pytest.mark.parametrize(
    "patch, path",
    [
        ({"geometry": {"N": 2}}, "geometry.N"),
        ({"geometry": {"R": 5.0, "R_max": 4.0}}, "geometry.R_max"),
        ({"warp": {"kind": "gaussian"}}, "warp.kind"),
        ({"p_list": [0.5]}, "p_list"),
        ({"cz": {"D": 1.0}}, "cz.D"),
        ({"bogus": 1}, "bogus"),
        ({"geometry": {"bogus": 1}}, "geometry.bogus"),
    ],
)
def test_config_errors_name_the_field(patch, path):
    d = hx.ExperimentConfig().to_dict()
    for key, val in patch.items():
        if isinstance(val, dict) and isinstance(d.get(key), dict):
            d[key].update(val)
        else:
            d[key] = val
    with pytest.raises(ConfigError) as exc:
        hx.ExperimentConfig.from_dict(d)
    assert exc.value.path.startswith(path)


def test_bad_json_is_config_error():
    with pytest.raises(ConfigError):
        hx.ExperimentConfig.from_json("{not json")
    with pytest.raises(ConfigError):
        hx.ExperimentConfig.from_json("[1, 2]")


def test_single_row_csv_has_two_lines(tmp_path):
    path = hx.emit_report([_row()], "csv", tmp_path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0].split(",") == list(hx.COLUMNS)


def test_csv_uses_seventeen_digits(tmp_path):
    v = 1.0 / 3.0
    text = hx.emit_report([_row(value=v)], "csv", tmp_path).read_text()
    assert "%.17g" % v in text
    assert hx.rows_from_csv(text)[0].value == v


def test_json_round_trip(tmp_path):
    rows = [_row(value=math.pi), _row(value=2.0, passed=False, quantity="other")]
    text = hx.emit_report(rows, "json", tmp_path).read_text()
    assert hx.rows_from_json(text) == rows
    assert json.loads(text)[1]["pass"] is False


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IOError):
        hx.emit_report([_row()], "csv", blocker / "sub")


def test_empty_rows_rejected(tmp_path):
    with pytest.raises(ValueError):
        hx.emit_report([], "csv", tmp_path)


@settings(max_examples=50, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False), st.booleans())
def test_csv_round_trip_is_exact(value, passed):
    row = _row(value=value, passed=passed)
    assert hx.rows_from_csv(hx.rows_to_csv([row])) == [row]


def test_rng_streams_are_deterministic_and_distinct():
    a = hx.rng_for(7, "cz", 3).standard_normal(5)
    b = hx.rng_for(7, "cz", 3).standard_normal(5)
    c = hx.rng_for(7, "cz", 4).standard_normal(5)
    d = hx.rng_for(7, "spectrum", 3).standard_normal(5)
    e = hx.rng_for(2**40 + 7, "cz", 3).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    assert not np.array_equal(a, e)


def test_corpus_is_reproducible():
    cfg = hx.ExperimentConfig().replace(geometry__N=32, corpus__size=6)
    end = hx.end_of(cfg)
    one = [m(end) for m in hx.make_corpus(cfg, "equivalence")]
    two = [m(end) for m in hx.make_corpus(cfg, "equivalence")]
    assert all(np.array_equal(x, y) for x, y in zip(one, two))


def test_parallel_map_preserves_order(monkeypatch):
    monkeypatch.setenv("LP_ENDS_THREADS", "4")
    assert hx.parallel_map(lambda x: x * x, range(20)) == [x * x for x in range(20)]


def test_partition_suite_single_passing_row(tmp_path):
    rows = hx.run_experiment(hx.ExperimentConfig(), "partition", out_dir=tmp_path)
    assert len(rows) == 1
    assert rows[0].passed and rows[0].value <= 1e-12
    assert (tmp_path / "report.csv").exists() and (tmp_path / "report.json").exists()


def test_cz_flat_rows_all_pass():
    cfg = hx.ExperimentConfig().replace(warp__kind="flat", cz__instances=10)
    rows = hx.suite_cz(cfg)
    flat = [r for r in rows if r.warp == "flat"]
    assert len(flat) >= 9
    assert all(r.passed for r in flat)


def test_unknown_suite_rejected():
    with pytest.raises(ConfigError):
        hx.run_experiment(hx.ExperimentConfig(), "nope")


def test_each_verifier_belongs_to_one_suite():
    names = [v for vs in hx.SUITE_VERIFIERS.values() for v in vs]
    assert len(names) == len(set(names))
    assert set(hx.SUITE_VERIFIERS) == set(hx.SUITES) == set(hx.SUITE_FUNCTIONS)
    modules = [getattr(lp_ends, m) for m in ("warp_geometry", "dyadic_partition", "spectral_calculus",
                                            "cz_cover", "singular_kernels")]
    source = Path(hx.__file__).read_text()
    for name in names:
        assert any(hasattr(m, name) for m in modules), name
        assert re.search(rf"\b{name}\(", source), name


def _write_config(tmp_path, **changes):
    cfg = hx.ExperimentConfig().replace(**changes) if changes else hx.ExperimentConfig()
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    return path


def test_cli_validate_ok_and_bad(tmp_path, capsys):
    path = _write_config(tmp_path)
    assert main(["validate", "--config", str(path)]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"geometry": {"N": 1}}))
    assert main(["validate", "--config", str(bad)]) == 2
    assert "geometry.N" in capsys.readouterr().err


def test_cli_run_partition(tmp_path):
    path = _write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(path), "--suite", "partition", "--seed", "3", "--out", str(out)]) == 0
    rows = hx.rows_from_csv((out / "report.csv").read_text())
    assert rows[0].seed == 3


def test_cli_run_reports_failures(tmp_path, monkeypatch, capsys):
    path = _write_config(tmp_path)
    monkeypatch.setitem(hx.SUITE_FUNCTIONS, "partition", lambda cfg: [_row(passed=False)])
    assert main(["run", "--config", str(path), "--suite", "partition", "--out", str(tmp_path / "o")]) == 1
    assert "FAIL partition" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    path = _write_config(tmp_path)
    env = dict(os.environ)
    res = subprocess.run([sys.executable, "-m", "lp_ends", "validate", "--config", str(path)],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0, res.stderr
