import json

import numpy as np
import pytest

from conftest import band_limited
from mhdlab.cli import EXIT_OK, EXIT_TOLERANCE, EXIT_VALIDATION, RunConfig, main
from mhdlab.errors import ValidationError
from mhdlab.fsnap import read_fsnap, write_fsnap
from mhdlab.grid import FieldSnapshot, Grid

SMALL = {"data": {"n": 16, "nt": 9, "dt": 0.2}}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def _report(out, name):
    return json.loads((out / f"{name}.json").read_text())


class TestArguments:
    def test_unknown_flag_and_command(self, tmp_path, capsys):
        assert main(["synth", "--bogus", "--out", str(tmp_path)]) == EXIT_VALIDATION
        assert main(["frobnicate"]) == EXIT_VALIDATION
        assert "usage" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"morrey": {"p": 3.0, "colour": "red"}}))
        assert main(["norms", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_VALIDATION
        with pytest.raises(ValidationError, match="morrey.colour"):
            RunConfig.load(str(cfg), out=str(tmp_path))

    def test_window_too_short_for_norms(self, tmp_path, capsys):
        g = Grid.cube(16, nt=5, dt=0.01)
        path = write_fsnap(tmp_path / "w.fsnap", FieldSnapshot.zeros(g), "w")
        assert main(["norms", "--input", str(path), "--out", str(tmp_path)]) == EXIT_VALIDATION
        assert "too short" in capsys.readouterr().err

    def test_missing_input_file(self, tmp_path):
        assert main(["norms", "--input", str(tmp_path / "nope.fsnap"), "--out", str(tmp_path)]) == EXIT_VALIDATION

    def test_radii_ordering_rejected(self, tmp_path, small_config, capsys):
        code = main(["correct", "--config", small_config, "--radii", "1.3,1.0,1.1,1.2,2.5", "--out", str(tmp_path)])
        assert code == EXIT_VALIDATION
        assert "rho0 < rho3 < rho2 < rho1 < rho" in capsys.readouterr().err

    def test_bundled_config_resolves(self, tmp_path):
        cfg = RunConfig.load("demo.json", out=str(tmp_path))
        assert cfg.section("data")["name"] == "taylor-green"
        assert "threads" not in json.dumps(cfg.to_dict())


class TestCommands:
    def test_synth_writes_fields(self, tmp_path, small_config):
        assert main(["synth", "--config", small_config, "--out", str(tmp_path)]) == EXIT_OK
        rep = _report(tmp_path, "synth")
        assert rep["tool"]["name"] == "mhdlab" and rep["command"] == "synth"
        assert sorted(rep["report"]["files"]) == ["P.fsnap", "b.fsnap", "f.fsnap", "g.fsnap", "u.fsnap"]
        assert read_fsnap(tmp_path / "u.fsnap").grid.nt == 9

    def test_zero_field_norms(self, tmp_path):
        g = Grid.cube(16, nt=9, dt=0.2)
        path = write_fsnap(tmp_path / "zero.fsnap", FieldSnapshot.zeros(g), "w")
        assert main(["norms", "--input", str(path), "--out", str(tmp_path)]) == EXIT_OK
        body = _report(tmp_path, "norms")["report"]["w"]
        assert body["morrey"]["norm"] == 0.0 and body["holder"]["seminorm"] == 0.0

    def test_elsasser_roundtrip(self, tmp_path, rng):
        g = Grid.cube(16, nt=3, dt=0.1)
        U, B = (FieldSnapshot(g, band_limited(g, rng, 3.0, nt=3)) for _ in range(2))
        src = tmp_path / "src"
        src.mkdir()
        paths = [str(write_fsnap(src / f"{k}.fsnap", X, k)) for k, X in (("U", U), ("B", B))]
        fwd, back = tmp_path / "fwd", tmp_path / "back"
        assert main(["elsasser", "--input", *paths, "--out", str(fwd), "--strict"]) == EXIT_OK
        assert (fwd / "P.fsnap").is_file()
        assert main(["elsasser", "--inverse", "--input", str(fwd / "u.fsnap"), str(fwd / "b.fsnap"),
                     "--out", str(back)]) == EXIT_OK
        np.testing.assert_allclose(read_fsnap(back / "U.fsnap").data, U.data, atol=1e-15)
        np.testing.assert_allclose(read_fsnap(back / "B.fsnap").data, B.data, atol=1e-15)

    def test_elsasser_rejects_divergent(self, tmp_path, rng):
        g = Grid.cube(16)
        X = FieldSnapshot(g, band_limited(g, rng, 3.0, nt=1, solenoidal=False))
        paths = [str(write_fsnap(tmp_path / f"{k}.fsnap", X, k)) for k in ("U", "B")]
        assert main(["elsasser", "--input", *paths, "--out", str(tmp_path / "o")]) == EXIT_VALIDATION

    def test_strict_tolerance_failure(self, tmp_path):
        cfg = tmp_path / "tight.json"
        cfg.write_text(json.dumps({**SMALL, "tolerances": {"solenoidal": -1.0}}))
        args = ["synth", "--config", str(cfg), "--out", str(tmp_path)]
        assert main(["norms", *args[1:]]) == EXIT_OK
        assert main(["norms", *args[1:], "--strict"]) == EXIT_OK  # norms checks only finiteness
        assert main(["correct", "--config", str(cfg), "--radii", "0.9,1.0,1.1,1.2,2.5", "--out", str(tmp_path), "--strict"]) == EXIT_TOLERANCE
        failed = [c for c in _report(tmp_path, "localization")["checks"] if not c["ok"]]
        assert {c["name"] for c in failed} >= {"divergence_u", "divergence_b"}
