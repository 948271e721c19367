import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nilflow_lab import cli
from nilflow_lab.config import ConfigError, ExperimentConfig, coerce, load, parse_int_list, rng, validate
from nilflow_lab.io import FIXTURES, envelope, fixture, load_observable, read_csv, write_csv, write_json


# config

def test_parse_int_list_forms():
    assert parse_int_list("1..6") == (1, 2, 3, 4, 5, 6)
    assert parse_int_list("1,2, 5") == (1, 2, 5)
    assert parse_int_list("1..3,7") == (1, 2, 3, 7)
    for bad in ("", "3..1", "a"):
        with pytest.raises(ValueError):
            parse_int_list(bad)


@given(st.lists(st.integers(-50, 50), min_size=1, max_size=10))
def test_parse_int_list_round_trip(xs):
    assert parse_int_list(",".join(map(str, xs))) == tuple(xs)


def test_defaults_are_valid():
    cfg = load()
    validate(cfg, need_parity=True)
    assert cfg.matrix == (2, 1, 3, 2)


def test_load_text_without_header_and_round_trip():
    cfg = load(text="a = 2\nb = 1\nc = 1\nd = 1\nE = 2\nmodes = 1..3\n")
    assert cfg.modes == (1, 2, 3) and cfg.E == 2
    again = load(text=cfg.to_text())
    assert again == cfg and again.config_hash() == cfg.config_hash()


def test_hash_depends_on_content():
    a = ExperimentConfig()
    assert a.config_hash() == ExperimentConfig().config_hash()
    assert a.config_hash() != a.with_overrides(seed=1).config_hash()
    assert len(a.config_hash()) == 16


def test_errors_name_every_bad_field():
    with pytest.raises(ConfigError) as exc:
        load(text="r = 0.5\nt_points = 3\nmethod = fast\n")
    names = {e["field"] for e in exc.value.errors}
    assert {"r", "t_points", "method"} <= names
    assert exc.value.to_dict()["error"] == "config"


@pytest.mark.parametrize("text,field", [
    ("a = 2\nb = 1\nc = 1\nd = 2\n", "a,b,c,d"),
    ("a = 1\nb = 1\nc = 0\nd = 1\n", "a,b,c,d"),
    ("bogus = 3\n", "bogus"),
    ("cutoff = 2.5\n", "cutoff"),
    ("seed = -1\n", "seed"),
    ("schema_version = 9\n", "schema_version"),
    ("a = 2\nb = 1\nc = 1\nd = 1\n", "E"),
    ("norm_modes = 0,1\n", "norm_modes"),
])
def test_specific_config_errors(text, field):
    with pytest.raises(ConfigError) as exc:
        load(text=text)
    assert field in {e["field"] for e in exc.value.errors}


def test_parity_only_for_spectra():
    cfg = coerce({"a": 2, "b": 1, "c": 1, "d": 1, "E": 2})
    with pytest.raises(ConfigError):
        validate(cfg, need_parity=True)


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load("/nonexistent/dir/cfg.ini")


def test_rng_is_reproducible():
    assert np.array_equal(rng(7).uniform(size=5), rng(7).uniform(size=5))
    assert not np.array_equal(rng(7).uniform(size=5), rng(8).uniform(size=5))


# io

def test_csv_round_trip_with_stamp(tmp_path):
    cfg = ExperimentConfig()
    path = write_csv(str(tmp_path / "t.csv"), ["a", "b"], [(1, 0.1), {"a": 2, "b": 1 / 3}], cfg)
    stamp, rows = read_csv(path)
    assert stamp == {"schema_version": "1", "config_hash": cfg.config_hash()}
    assert float(rows[1]["b"]) == 1 / 3
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")]


def test_envelope_and_json(tmp_path):
    cfg = ExperimentConfig()
    doc = envelope(cfg, "x", {"z": 1 + 2j, "v": np.arange(3)}, {"ok": True, "bad": False}, 0.5)
    assert doc["passed"] is False and doc["config_hash"] == cfg.config_hash()
    write_json(str(tmp_path / "d.json"), doc)
    back = json.loads((tmp_path / "d.json").read_text())
    assert back["payload"] == {"z": [1.0, 2.0], "v": [0, 1, 2]}


@pytest.mark.parametrize("name", FIXTURES)
def test_fixtures_load(name):
    h = fixture(name)
    assert np.isfinite(h(np.array([0.1, 0.2, 0.3])))


def test_observable_from_file(tmp_path):
    h = fixture("theta_n1")
    p = tmp_path / "h.json"
    p.write_text(json.dumps(h.to_dict()))
    x = np.array([0.4, 0.1, 0.9])
    assert load_observable(str(p))(x) == pytest.approx(h(x))
    assert load_observable("fixture:theta_n1")(x) == pytest.approx(h(x))
    with pytest.raises(FileNotFoundError):
        fixture("nope")


# command line

def run(tmp_path, *args):
    return cli.main([*args, "--out", str(tmp_path), "--quiet"])


def test_cli_selftest(tmp_path):
    assert run(tmp_path, "selftest", "--set", "samples=50") == cli.EXIT_OK
    doc = json.loads((tmp_path / "selftest_result.json").read_text())
    assert doc["passed"] and doc["command"] == "selftest"


def test_cli_cohomology_small(tmp_path):
    code = run(tmp_path, "cohomology", "fixture:coboundary_trig", "--set", "site_grid=2",
               "--set", "verify_samples=4")
    assert code == cli.EXIT_OK
    stamp, rows = read_csv(str(tmp_path / "cohomology_solution.csv"))
    assert len(rows) == 8 and stamp["schema_version"] == "1"


def test_cli_config_error_is_json(tmp_path, capsys):
    assert run(tmp_path, "selftest", "--seed", "-3") == cli.EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["fields"][0]["field"] == "seed"


def test_cli_zero_mode_spectrum_is_config_error(tmp_path):
    assert run(tmp_path, "spectrum", "--N", "0", "--method", "exact") == cli.EXIT_CONFIG


def test_cli_bad_override(tmp_path):
    assert run(tmp_path, "selftest", "--set", "noequals") == cli.EXIT_CONFIG
    assert run(tmp_path, "selftest", "--jobs", "0") == cli.EXIT_CONFIG


def test_cli_missing_observable_file(tmp_path):
    assert run(tmp_path, "cohomology", str(tmp_path / "missing.json")) == cli.EXIT_IO
    assert run(tmp_path, "cohomology", "fixture:nope") == cli.EXIT_IO


def test_cli_underresolved_grid(tmp_path):
    assert run(tmp_path, "norm", "--set", "norm_modes=1", "--set", "norm_points=8") == cli.EXIT_NUMERIC


def test_cli_exact_spectrum(tmp_path):
    assert run(tmp_path, "spectrum", "--N", "1,2", "--method", "exact") == cli.EXIT_OK
    _, rows = read_csv(str(tmp_path / "spectrum_exact_N2.csv"))
    assert sum(int(r["multiplicity"]) for r in rows if r["band"] == "0") == 2
