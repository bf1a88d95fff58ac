import csv
import io
import json
import os
import subprocess
import sys

import pytest

from hdgal.cli import (ConfigError, RunConfig, atomic_write, build_parser, config_from_args, load_config, main,
                       parse_config_text, render_config)
from hdgal.mesh import generate_unit_square, read_mesh


def _cfg(argv):
    return config_from_args(build_parser().parse_args(argv))


def test_solve_example_rows(capsys):
    rc = main(["solve", "--case", "lid", "--nx", "8", "--k", "2", "--precond", "GM", "--re-max", "100",
               "--no-timings"])
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["re"] for r in rows] == ["1", "10", "100"]
    assert all(int(r["max_inner"]) == 1 for r in rows)


def test_solve_output_files_byte_identical(tmp_path):
    outs = []
    for i in range(2):
        p = tmp_path / f"run{i}.csv"
        assert main(["solve", "--nx", "4", "--k", "1", "--schedule", "1,10", "--no-timings", "--threads", "1",
                     "-o", str(p)]) == 0
        outs.append(p.read_bytes())
        js = json.loads((tmp_path / f"run{i}.json").read_text())
        assert [r["re"] for r in js] == [1.0, 10.0]
    assert outs[0] == outs[1]


def test_verify_exit_zero(capsys):
    assert main(["verify", "--seed", "7", "--instances", "10"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["passed"] and rep["seed"] == 7


def test_study_small(tmp_path, capsys):
    out = tmp_path / "study.json"
    assert main(["study", "--k", "1", "--levels", "2,4", "-o", str(out)]) == 0
    assert capsys.readouterr().out.splitlines()[-1].startswith("rate")
    data = json.loads(out.read_text())
    assert data["levels"] == [2, 4] and "v_gamma" in data["rates"]


def test_mesh_output(tmp_path):
    out = tmp_path / "m.txt"
    assert main(["mesh", "--case", "lid", "--nx", "3", "-o", str(out)]) == 0
    with open(out) as fh:
        assert read_mesh(fh) == generate_unit_square(3)


def test_empty_config_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    cfg = load_config(p)
    assert cfg.gamma == 1e4 and cfg.rtol_outer == 1e-4 and cfg.precond == "GM"
    assert cfg.alpha_value == 10.0 * cfg.k**2 == 40.0


def test_flag_beats_file(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("gamma=100  # file value\nk = 1\n")
    cfg = _cfg(["solve", "--config", str(p), "--gamma", "1000"])
    assert cfg.gamma == 1000.0 and cfg.k == 1


def test_schedule_flag_overrides_file_re_max(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("re_max=500\n")
    cfg = _cfg(["solve", "--config", str(p), "--schedule", "1,2"])
    assert cfg.schedule == (1.0, 2.0) and cfg.re_max is None


def test_bad_values_are_config_errors(tmp_path, capsys):
    assert main(["solve", "--precond", "Z"]) == 2
    assert "precond" in capsys.readouterr().err
    p = tmp_path / "bad.cfg"
    p.write_text("gamma=1\nspeed=3\n")
    assert main(["solve", "--config", str(p)]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "speed" in err
    with pytest.raises(ConfigError, match="line 1: bad value for nx"):
        parse_config_text("nx=eight")
    with pytest.raises(ConfigError, match="key=value"):
        parse_config_text("gamma 3")
    with pytest.raises(ConfigError, match="k:"):
        RunConfig(k=7).validate()


def test_mutually_exclusive_flags():
    assert main(["solve", "--nx", "3", "--n", "2"]) == 2
    assert main(["solve", "--re-max", "10", "--schedule", "1,2"]) == 2


def test_unwritable_output(tmp_path):
    assert main(["mesh", "-o", str(tmp_path / "missing" / "m.txt")]) == 2


def test_render_parse_round_trip():
    cfg = RunConfig(case="bfs", nx=3, gamma=123.5, alpha=7.0, schedule=(1.0, 20.0), levels=(2, 4),
                    threads=2, timings=False, output="x.csv")
    back = RunConfig(**parse_config_text(render_config(cfg)))
    assert back == cfg
    assert RunConfig(**parse_config_text(render_config(RunConfig()))) == RunConfig()


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "f.txt"
    p.write_text("old")
    atomic_write(str(p), "new")
    assert p.read_text() == "new"
    atomic_write(str(p), b"\x00bytes")
    assert p.read_bytes() == b"\x00bytes"
    assert sorted(os.listdir(tmp_path)) == ["f.txt"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "hdgal", "mesh", "--nx", "1"], capture_output=True, text=True)
    assert r.returncode == 0
    assert read_mesh(io.StringIO(r.stdout)) == generate_unit_square(1)
