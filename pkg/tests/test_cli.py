import re
import subprocess
import sys

import numpy as np
import pytest

from planefuse import io
from planefuse.cli import EXIT_USAGE, main
from planefuse.geometry import PointCloud, Pose, RigidTransform, Trajectory


@pytest.fixture
def room_files(tmp_path):
    assert main(["synth", "room", "--noise", "0.005", "--seed", "1",
                 "--outdir", str(tmp_path / "room")]) == 0
    return tmp_path / "room"


def test_synth_pipes_into_segment():
    synth = subprocess.run([sys.executable, "-m", "planefuse", "synth", "room", "--noise", "0.01"],
                           capture_output=True, check=True)
    seg = subprocess.run([sys.executable, "-m", "planefuse", "segment"], input=synth.stdout,
                         capture_output=True, check=True)
    assert len(seg.stdout.decode().strip().splitlines()) == 6


def test_synth_is_deterministic(tmp_path):
    for name in ("a.ply", "b.ply"):
        assert main(["synth", "two-rooms", "--noise", "0.01", "--seed", "3", "--pose",
                     "2,3,1.2,5", "-o", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_register_cloud_to_itself(room_files, tmp_path, capsys):
    laser = str(room_files / "laser.xyz")
    out = tmp_path / "T.txt"
    assert main(["register", "--source", laser, "--target", laser, "-o", str(out)]) == 0
    assert capsys.readouterr().out.strip() == "rank=3 pairs=6"
    assert np.array_equal(io.load_transform(out).matrix(), np.eye(4))


def test_register_laser_to_vision(room_files, tmp_path):
    out = tmp_path / "T.txt"
    assert main(["register", "--source", str(room_files / "laser.xyz"), "--target",
                 str(room_files / "vision.xyz"), "--preprocess", "-o", str(out)]) == 0
    T = io.load_transform(out)
    truth = io.load_transform(room_files / "truth.txt")
    assert np.abs(T.matrix() - truth.matrix()).max() < 0.02


def test_register_failure_exit_code(tmp_path, capsys):
    # a floor seen from above cannot match a lone wall
    main(["synth", "rectangle", "-o", str(tmp_path / "floor.xyz"), "--pose", "0,0,2"])
    (tmp_path / "wall.txt").write_text("rect 3 -2 -1 3 2 2\n")
    main(["synth", "--scene", str(tmp_path / "wall.txt"), "-o", str(tmp_path / "wall.xyz")])
    assert main(["register", "--source", str(tmp_path / "floor.xyz"),
                 "--target", str(tmp_path / "wall.xyz")]) == 1
    assert "failed" in capsys.readouterr().err


def test_evaluate_identical(tmp_path, capsys):
    traj = Trajectory(tuple(Pose(float(k), RigidTransform.from_translation([k, k * k, 0.5 * k]))
                            for k in range(6)))
    io.save_trajectory(traj, tmp_path / "t.txt")
    t = str(tmp_path / "t.txt")
    for metric in ("ate", "rpe"):
        assert main(["evaluate", "--est", t, "--ref", t, "--metric", metric]) == 0
        assert capsys.readouterr().out.strip() == "rmse=0 min=0 max=0"


def test_verbose_timing_lines(room_files, capsys):
    assert main(["--verbose", "segment", str(room_files / "laser.xyz"), "-o", "/dev/null"]) == 0
    lines = capsys.readouterr().err.strip().splitlines()
    assert lines and all(re.fullmatch(r"stage=\w+ seconds=\d+(\.\d+)?(e-?\d+)?", l) for l in lines)
    assert any(l.startswith("stage=segmentation ") for l in lines)


def test_usage_errors_exit_64(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["register", "--source", "x"])
    assert exc.value.code == EXIT_USAGE
    assert main(["synth"]) == EXIT_USAGE


def test_domain_errors_exit_1(tmp_path, capsys):
    (tmp_path / "bad.xyz").write_text("1 2 3\n4 5\n")
    assert main(["segment", str(tmp_path / "bad.xyz")]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["segment", str(tmp_path / "missing.xyz")]) == 1
    (tmp_path / "c.cfg").write_text("no_such_key = 1\n")
    assert main(["--config", str(tmp_path / "c.cfg"), "synth", "room", "-o", "/dev/null"]) == 1


def test_missing_config_warns(capsys):
    assert main(["--config", "/nonexistent.cfg", "synth", "rectangle", "-o", "/dev/null"]) == 0
    assert "warning" in capsys.readouterr().err


def test_init_pose_not_found_exit_3(tmp_path, capsys):
    main(["synth", "room", "--noise", "0.005", "-o", str(tmp_path / "scan.xyz")])
    # a map without any planar surface
    pts = np.random.default_rng(0).uniform([0, 0, 0], [20, 20, 5], (4000, 3))
    io.save_cloud(PointCloud(pts, None, "vision"), tmp_path / "map.xyz")
    assert main(["init-pose", "--map", str(tmp_path / "map.xyz"), str(tmp_path / "scan.xyz")]) == 3
    assert "NOT_FOUND" in capsys.readouterr().err


def test_localize_sequence(tmp_path, capsys):
    d = tmp_path / "seq"
    assert main(["synth", "two-rooms", "--sequence", "--noise", "0.005", "--seed", "2",
                 "--odom-noise", "0.02", "--outdir", str(d)]) == 0
    scans = [str(d / f"scan_{k:03d}.xyz") for k in range(5)]
    est = tmp_path / "est.txt"
    assert main(["localize", "--map", str(d / "map.xyz"), "--odom", str(d / "odom.txt"),
                 "-o", str(est), "--fused", str(tmp_path / "fused.ply")] + scans) == 0
    capsys.readouterr()
    assert main(["evaluate", "--est", str(est), "--ref", str(d / "truth.txt")]) == 0
    rmse = float(capsys.readouterr().out.split()[0].split("=")[1])
    assert rmse < 0.05
    assert "# alpha = 0.3" in est.read_text().splitlines()
    assert "property uchar source" in (tmp_path / "fused.ply").read_text()


def test_scale_command(tmp_path, capsys):
    gps = Trajectory.from_positions(np.arange(15.0).reshape(5, 3) * [1, 2, 0], np.arange(5.0))
    vis = Trajectory.from_positions(gps.positions / 4.0, gps.timestamps)
    io.save_trajectory(gps, tmp_path / "g.txt")
    io.save_trajectory(vis, tmp_path / "v.txt")
    assert main(["scale", "--vision", str(tmp_path / "v.txt"), "--gps", str(tmp_path / "g.txt"),
                 "--trajectory-out", str(tmp_path / "s.txt")]) == 0
    assert capsys.readouterr().out.strip() == "scale=4"
    assert np.allclose(io.load_trajectory(tmp_path / "s.txt").positions, gps.positions)
