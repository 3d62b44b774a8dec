"""Spec validation, deterministic serialization, and end-to-end runs."""

import json
import os
from fractions import Fraction

import pytest

from ordwalk.cli import (
    SpecError,
    _fmt_float,
    _to_json,
    main,
    run_experiment,
    serialize_spec,
    validate_spec,
)

GOOD_KM = """
kind: exact-km
walk:
  k: 2
  start: [0, 1]
  dist: rademacher
seed: 0
params:
  n: 4
"""


def test_validate_good_spec():
    spec = validate_spec(GOOD_KM)
    assert spec.kind == "exact-km" and spec.k == 2
    assert spec.start == (0, 1) and spec.params == {"n": 4}


def test_validate_json_subset():
    doc = json.dumps({"kind": "exact-km",
                      "walk": {"k": 2, "start": [0, 1], "dist": "rademacher"},
                      "seed": 3, "params": {"n": 2}})
    spec = validate_spec(doc)
    assert spec.seed == 3


def test_validate_collects_all_errors():
    bad = """
kind: nonsense
walk:
  k: 1
  start: [3, 1]
  dist: cauchy
seed: -2
params:
  n: -4
"""
    with pytest.raises(SpecError) as exc:
        validate_spec(bad)
    msgs = "\n".join(exc.value.errors)
    assert len(exc.value.errors) >= 4
    assert "kind" in msgs and "seed" in msgs and "n" in msgs


def test_validate_rejects_garbage():
    with pytest.raises(SpecError):
        validate_spec("just a string")
    with pytest.raises(SpecError):
        validate_spec("kind: [unclosed")


def test_validate_noninteger_lattice_start():
    bad = GOOD_KM.replace("[0, 1]", "[0.5, 1.5]")
    with pytest.raises(SpecError, match="integer start"):
        validate_spec(bad)


def test_spec_roundtrip():
    spec = validate_spec(GOOD_KM)
    assert validate_spec(serialize_spec(spec)) == spec


def test_float_formatting():
    assert _fmt_float(0.1) == "0.10000000000000001"
    assert _fmt_float(float("nan")) == "NaN"
    assert _fmt_float(float("inf")) == "Infinity"


def test_json_writer_deterministic_and_exact():
    obj = {"b": Fraction(1, 3), "a": [1, 2.5], "c": {"nested": True, "x": None}}
    text = _to_json(obj)
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert '"1/3"' in text
    assert "2.5" in text
    parsed = json.loads(text)
    assert parsed["c"]["nested"] is True and parsed["c"]["x"] is None


def test_run_exact_km_end_to_end(tmp_path):
    spec = validate_spec(GOOD_KM)
    manifest, code = run_experiment(spec, out_dir=str(tmp_path))
    assert code == 0 and manifest.passed
    assert manifest.checks == {"km_identity": True}
    for fname in ("exact_km.json", "summary.txt", "manifest.json",
                  "timing.json"):
        assert (tmp_path / fname).exists()
    assert "exact_km.json" in manifest.files
    assert "timing.json" not in manifest.files  # wall clock stays undigested
    assert "PASS" in (tmp_path / "summary.txt").read_text()


def test_run_exact_v_tables(tmp_path):
    doc = GOOD_KM.replace("exact-km", "exact-v")
    manifest, code = run_experiment(validate_spec(doc), out_dir=str(tmp_path))
    assert code == 0
    csv = (tmp_path / "v_exact.csv").read_text().splitlines()
    assert csv[0] == "n,v_exact,v_float"
    assert csv[1].startswith("1,5/4,1.25")


def test_run_is_byte_identical_across_threads(tmp_path):
    doc = """
kind: tail
walk:
  k: 2
  start: [0, 1]
  dist: rademacher
seed: 1
params:
  horizons: [16, 32, 64, 128]
  paths: 40000
  exponent_tol: 0.2
"""
    spec = validate_spec(doc)
    out1, out4 = tmp_path / "t1", tmp_path / "t4"
    m1, c1 = run_experiment(spec, out_dir=str(out1), threads=1)
    m4, c4 = run_experiment(spec, out_dir=str(out4), threads=4)
    assert c1 == c4 == 0
    assert m1.files == m4.files
    for fname in m1.files:
        assert (out1 / fname).read_bytes() == (out4 / fname).read_bytes()


def test_run_failed_check_exits_one(tmp_path):
    doc = """
kind: tail
walk:
  k: 2
  start: [0, 1]
  dist: rademacher
seed: 1
params:
  horizons: [2, 4]
  paths: 5000
  exponent_tol: 0.0001
"""
    manifest, code = run_experiment(validate_spec(doc), out_dir=str(tmp_path))
    assert code == 1 and not manifest.passed
    assert "FAIL" in (tmp_path / "summary.txt").read_text()


def test_run_refusal_exits_two(tmp_path):
    doc = """
kind: hermite
walk:
  k: 3
  start: [0, 1, 2]
  dist: rademacher
seed: 0
params:
  n: 64
  paths: 100
"""
    manifest, code = run_experiment(validate_spec(doc), out_dir=str(tmp_path))
    assert code == 2
    assert manifest.error and "FeasibilityError" in manifest.error


def test_main_validate_and_run(tmp_path, capsys):
    spec_path = tmp_path / "km.yaml"
    spec_path.write_text(GOOD_KM)
    assert main(["validate", str(spec_path)]) == 0
    out = capsys.readouterr().out
    assert "ok: exact-km" in out
    rc = main(["run", str(spec_path), "--out", str(tmp_path / "res")])
    assert rc == 0
    assert "PASS" in capsys.readouterr().out


def test_main_validate_bad_spec(tmp_path, capsys):
    spec_path = tmp_path / "bad.yaml"
    spec_path.write_text("kind: nonsense\nwalk: {k: 2, start: [0, 1]}\n")
    assert main(["validate", str(spec_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_main_suite(tmp_path, capsys):
    (tmp_path / "specs").mkdir()
    (tmp_path / "specs" / "a_km.yaml").write_text(GOOD_KM)
    (tmp_path / "specs" / "b_v.yaml").write_text(
        GOOD_KM.replace("exact-km", "exact-v"))
    rc = main(["suite", str(tmp_path / "specs"),
               "--out", str(tmp_path / "suite")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "a_km.yaml: PASS" in out and "b_v.yaml: PASS" in out
    assert (tmp_path / "suite" / "a_km" / "manifest.json").exists()


def test_seed_override(tmp_path):
    spec_path = tmp_path / "km.yaml"
    spec_path.write_text(GOOD_KM)
    rc = main(["run", str(spec_path), "--out", str(tmp_path / "r"),
               "--seed", "9"])
    assert rc == 0
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["spec"]["seed"] == 9
