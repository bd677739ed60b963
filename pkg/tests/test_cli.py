import json
import logging

import numpy as np
import pytest

from probescope import cli
from probescope.errors import SolverError

SMALL = {
    "task": "verify",
    "seed": 7,
    "domain": {"type": "disk", "center": [0, 0], "radius": 1.0},
    "obstacle": {"components": [{"type": "disk", "center": [0.1, 0.0], "radius": 0.3}],
                 "impedance": {"re": 0.2, "im": 1.0}},
    "k": 1.0,
    "mesh": {"h_target": 0.12},
    "verify": {"n_random": 3},
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _manifest(d):
    return json.loads((d / "manifest.json").read_text())


def test_verify_writes_report_and_manifest(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["verify", "--config", _write(tmp_path, SMALL), "--out", str(out)]) == 0
    rep = json.loads((out / "verify.json").read_text())
    assert rep["max_rel_err"] < 1e-8 and len(rep["samples"]) == 3
    man = _manifest(out)
    assert man["status"] == "ok"
    assert man["config_hash"] == cli.config_hash(man["config"])
    assert "verify.json" in {f["name"] for f in man["files"]}


def test_unknown_key_is_a_config_error(tmp_path):
    bad = dict(SMALL, bogus=1)
    assert cli.main(["verify", "--config", _write(tmp_path, bad), "--out", str(tmp_path / "o")]) == 2


def test_schema_violation_is_a_config_error(tmp_path):
    bad = dict(SMALL, k=-1.0)
    assert cli.main(["verify", "--config", _write(tmp_path, bad)]) == 2
    assert cli.main(["verify", "--config", str(tmp_path / "missing.json")]) == 2


def test_invalid_geometry_exit_code(tmp_path):
    bad = json.loads(json.dumps(SMALL))
    bad["obstacle"]["components"][0]["center"] = [0.85, 0.0]
    out = tmp_path / "o"
    assert cli.main(["verify", "--config", _write(tmp_path, bad), "--out", str(out)]) == 3
    assert _manifest(out)["status"].startswith("geometry error")


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    def boom(cfg, out, threads):
        raise SolverError("singular system")

    monkeypatch.setitem(cli.TASK_FUNCS, "verify", boom)
    out = tmp_path / "o"
    assert cli.main(["verify", "--config", _write(tmp_path, SMALL), "--out", str(out)]) == 4
    assert _manifest(out)["status"].startswith("solver failure")


def test_overrides_are_applied_and_recorded(tmp_path):
    out = tmp_path / "o"
    argv = ["verify", "--config", _write(tmp_path, SMALL), "--out", str(out),
            "--override", "verify.n_random=2", "--override", "mesh.h_target=0.15"]
    assert cli.main(argv) == 0
    man = _manifest(out)
    assert man["config"]["overrides"] == ["verify.n_random=2", "mesh.h_target=0.15"]
    assert man["config"]["mesh"]["h_target"] == 0.15
    assert len(json.loads((out / "verify.json").read_text())["samples"]) == 2


def test_apply_override_parses_json_with_string_fallback():
    cfg = {"a": {"b": 1}}
    cli.apply_override(cfg, "a.b=[1, 2]")
    cli.apply_override(cfg, "a.c=plane_wave")
    assert cfg == {"a": {"b": [1, 2], "c": "plane_wave"}}
    with pytest.raises(cli.ConfigError):
        cli.apply_override(cfg, "no_equals_sign")


def test_subcommand_wins_over_config_task(tmp_path, caplog):
    cfg = dict(SMALL, task="forward")
    out = tmp_path / "o"
    with caplog.at_level(logging.WARNING):
        assert cli.main(["verify", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    assert "overridden by subcommand" in caplog.text
    assert (out / "verify.json").exists()


def test_output_directory_precedence(tmp_path, monkeypatch):
    cfg = dict(SMALL, output_dir=str(tmp_path / "from_config"))
    path = _write(tmp_path, cfg)
    monkeypatch.setenv("PROBESCOPE_OUT", str(tmp_path / "from_env"))
    assert cli.main(["verify", "--config", path]) == 0
    assert (tmp_path / "from_env" / "manifest.json").exists()
    assert cli.main(["verify", "--config", path, "--out", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "manifest.json").exists()
    assert not (tmp_path / "from_config").exists()


def test_reruns_are_byte_identical(tmp_path):
    path = _write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert cli.main(["verify", "--config", path, "--out", str(tmp_path / d)]) == 0
    fa = {f["name"]: f["sha256"] for f in _manifest(tmp_path / "a")["files"]}
    fb = {f["name"]: f["sha256"] for f in _manifest(tmp_path / "b")["files"]}
    assert fa == fb and fa


def test_seed_flag_changes_random_data(tmp_path):
    path = _write(tmp_path, SMALL)
    cli.main(["verify", "--config", path, "--out", str(tmp_path / "a")])
    cli.main(["verify", "--config", path, "--out", str(tmp_path / "b"), "--seed", "8"])
    a = json.loads((tmp_path / "a" / "verify.json").read_text())["samples"][0]["lhs"]
    b = json.loads((tmp_path / "b" / "verify.json").read_text())["samples"][0]["lhs"]
    assert a != b


def test_empty_obstacle_probe_reports_everything_outside(tmp_path):
    cfg = {k: v for k, v in SMALL.items() if k not in ("obstacle", "verify")}
    cfg.update(task="probe", probe={"mode": "reconstruct", "delta": 0.25})
    out = tmp_path / "o"
    assert cli.main(["probe", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "probe.json").read_text())
    assert rep["n_inside"] == 0 and rep["n_undecided"] == 0 and rep["n_outside"] == rep["n_points"] > 0


def test_uncertified_probe_is_refused_without_opt_in(tmp_path):
    cfg = dict(SMALL, task="probe", probe={"mode": "points", "points": [[0.6, 0.0]]})
    cfg.pop("verify")
    assert cli.main(["probe", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 3


def test_enclosure_outputs(tmp_path):
    cfg = dict(SMALL, task="enclosure", enclosure={"directions": 4, "tau": [2.0, 8.0], "n_tau": 7})
    cfg.pop("verify")
    cfg["mesh"] = {"h_target": 0.06}
    out = tmp_path / "o"
    assert cli.main(["enclosure", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    hull = json.loads((out / "hull.json").read_text())
    assert len(hull["vertices"]) >= 3
    assert sorted(p.name for p in out.glob("direction_*.csv")) == [f"direction_{i:02d}.csv" for i in range(4)]


def test_constants_and_forward_tasks(tmp_path):
    cfg = dict(SMALL, task="constants")
    cfg.pop("verify")
    out = tmp_path / "c"
    assert cli.main(["constants", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "constants.json").read_text())
    assert rep["constants"]["C0"] > 0 and "conditions" in rep["constants"]
    cfg = dict(SMALL, task="forward", forward={"data": "constant", "value": 1.0, "h_levels": [0.08]})
    cfg.pop("verify")
    cfg["obstacle"] = {"components": [{"type": "disk", "center": [0, 0], "radius": 0.3}],
                       "impedance": {"re": 0.2, "im": 1.0}}  # concentric, so the annulus reference applies
    out = tmp_path / "f"
    assert cli.main(["forward", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "forward.json").read_text())
    assert rep["reference"] == "annulus"
    errs = [lvl["rel_l2_error"] for lvl in rep["levels"]]
    assert errs[1] < errs[0]
    assert np.isfinite(errs).all()


def test_verbose_flag_in_either_position():
    ap = cli.build_parser()
    assert ap.parse_args(["-v", "verify", "--config", "c"]).verbose == 1
    assert ap.parse_args(["verify", "--config", "c", "-vv"]).verbose == 2
    assert ap.parse_args(["verify", "--config", "c"]).verbose == 0
