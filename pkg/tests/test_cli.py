import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from equikernel import so3
from equikernel.cli import main
from equikernel.graph import format_xyz, parse_xyz
from equikernel.model import ModelConfig

WATER = "3\nwater\nO 0 0 0\nH 0.7578125 0.5859375 0\nH -0.7578125 0.5859375 0\n"


@pytest.fixture
def water(tmp_path):
    p = tmp_path / "water.xyz"
    p.write_text(WATER)
    return p


def test_predict_json_byte_stable(water, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["predict", str(water), "--random-seed", "3", "--out", str(a)]) == 0
    assert main(["predict", str(water), "--random-seed", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["energy_unit"] == "eV" and doc["forces_unit"] == "eV/A"
    assert np.array(doc["forces"]).shape == (3, 3)


def test_predict_with_config_and_checkpoint(water, tmp_path):
    cfg = tmp_path / "cfg.json"
    ModelConfig.tiny(num_blocks=1).dump(cfg)
    ck = tmp_path / "w.json"
    assert main(["init-checkpoint", "--config", str(cfg), "--random-seed", "4", "--out", str(ck)]) == 0
    out1, out2 = tmp_path / "1.json", tmp_path / "2.json"
    assert main(["predict", str(water), "--checkpoint", str(ck), "--out", str(out1)]) == 0
    assert main(["predict", str(water), "--config", str(cfg), "--random-seed", "4", "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_checkpoint_and_seed_exclusive(water):
    with pytest.raises(SystemExit) as exc:
        main(["predict", str(water), "--checkpoint", "x.json", "--random-seed", "1"])
    assert exc.value.code == 2


def test_bad_xyz_is_usage_error(tmp_path, capsys):
    p = tmp_path / "bad.xyz"
    p.write_text("4\n\nH 0 0 0\nH 1 0 0\nH 2 0 0\n")
    assert main(["predict", str(p)]) == 2
    assert "line 5" in capsys.readouterr().err


def test_relax_outputs(water, tmp_path):
    trace, final, traj = tmp_path / "t.csv", tmp_path / "f.xyz", tmp_path / "traj.xyz"
    rc = main(["relax", str(water), "--max-steps", "4", "--out", str(trace), "--final-xyz", str(final), "--trajectory", str(traj)])
    assert rc == 0
    rows = list(csv.reader(trace.read_text().splitlines()))
    assert rows[0] == ["step", "energy", "fmax"] and len(rows) == 5
    assert len(parse_xyz(final.read_text())) == 3
    assert traj.read_text().count("step=") == 4


def test_relax_rotated_trajectory(water, tmp_path, rng):
    R = so3.random_rotation(rng)
    s = parse_xyz(WATER)
    rot = tmp_path / "rot.xyz"
    rot.write_text(format_xyz(s.with_positions(s.positions @ R.T)))
    fa, fb = tmp_path / "a.xyz", tmp_path / "b.xyz"
    main(["relax", str(water), "--max-steps", "6", "--final-xyz", str(fa), "--out", str(tmp_path / "a.csv")])
    main(["relax", str(rot), "--max-steps", "6", "--final-xyz", str(fb), "--out", str(tmp_path / "b.csv")])
    pa, pb = parse_xyz(fa.read_text()).positions, parse_xyz(fb.read_text()).positions
    assert np.abs(pb - pa @ R.T).max() <= 1e-5


def test_relax_argument_errors(water):
    assert main(["relax", str(water), "--max-steps", "0"]) == 2
    assert main(["relax", str(water), "--fmax", "-1"]) == 2


def test_check_oracle(capsys):
    assert main(["check-oracle", "--lmax", "2", "--edges", "5"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["check-oracle", "--lmax", "4"]) == 2


def test_check_equivariance_pass_and_corrupt(tmp_path, capsys):
    report = tmp_path / "r.json"
    assert main(["check-equivariance", "--trials", "1", "--out", str(report)]) == 0
    assert all(r["passed"] for r in json.loads(report.read_text()))
    capsys.readouterr()
    assert main(["check-equivariance", "--trials", "1", "--corrupt-cg"]) == 1
    out = capsys.readouterr().out
    assert "FAIL clebsch_gordan" in out and "FAILED:" in out
    assert not so3.cg_corrupted()


def test_check_equivariance_zero_trials():
    assert main(["check-equivariance", "--trials", "0"]) == 2


def test_bench_cli(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["bench", "--lmax", "1", "2", "--channels", "2", "--edges", "2", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "kernel,L_max,M_max,channels,reps,median_s"
    assert "slope[so3_full]" in capsys.readouterr().out
    assert main(["bench", "--reps", "1"]) == 2


def test_bench_single_lmax_not_available(capsys):
    assert main(["bench", "--lmax", "2", "--channels", "2", "--edges", "2"]) == 0
    captured = capsys.readouterr()
    assert captured.out.startswith("kernel,L_max")
    assert "n/a" in captured.err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_console_entry_point(water):
    out = subprocess.run(
        [sys.executable, "-m", "equikernel", "predict", str(water), "--random-seed", "3"],
        capture_output=True, text=True, check=True,
    )
    assert json.loads(out.stdout)["energy_unit"] == "eV"
