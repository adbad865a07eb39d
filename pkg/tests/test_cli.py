import json
import subprocess
import sys

import pytest

from vidage.cli import main
from vidage.io import read_video

SMALL = ["--entries", "12", "--videos", "1", "--frames", "4", "--size", "8"]


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    assert main(["bench", "gen", "--out", str(out), "--seed", "3", "--k", "2", "--n", "2"]
                + SMALL) == 0
    return out


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_named(capsys):
    assert main(["video", "synth", "--bogus", "1"]) == 1
    assert "--bogus" in capsys.readouterr().err


def test_missing_subcommand_and_required_args(capsys):
    assert main(["video"]) == 1
    assert main(["video", "synth", "--video", "x"]) == 1
    assert main(["gallery", "build"]) == 1


def test_help_and_version(capsys):
    assert main(["--version"]) == 0
    assert main(["video", "synth", "--help"]) == 0


def test_invert_and_negative_values(bench_dir, tmp_path, capsys):
    cfg = str(bench_dir / "config.json")
    frame = bench_dir / "videos" / "video_00" / "frame_0000.pgm"
    args = ["invert", "--config", cfg, "--frame", str(frame), "--out", str(tmp_path / "aged.pgm")]
    assert main(args + ["--alpha", "0.5"]) == 0
    rec = json.loads((tmp_path / "aged.json").read_text())
    assert rec["inversion_iterations"] >= 1
    # a negative number is a value, not an unknown flag; it fails validation instead
    assert main(args + ["--alpha", "-0.5"]) == 2
    err = capsys.readouterr().err
    assert "alpha" in err and "unrecognized" not in err


def test_gallery_build_summary(bench_dir, tmp_path):
    out = tmp_path / "summary.json"
    assert main(["gallery", "build", "--config", str(bench_dir / "config.json"),
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["entries"] == 24
    assert doc["groups"] == {"1": 12, "9": 12}
    assert len(doc["fingerprint"]) == 64


def test_synth_writes_manifest(bench_dir, tmp_path):
    cfg = str(bench_dir / "config.json")
    video = str(bench_dir / "videos" / "video_00")
    out = tmp_path / "aged"
    assert main(["video", "synth", "--config", cfg, "--video", video, "--out", str(out),
                 "--no-rl"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["frames"]) == 4 == len(read_video(out))
    assert manifest["config"]["K"] == 2 and manifest["mode"] == "no-rl"
    assert main(["video", "eval", "--config", cfg, "--original", video, "--synth",
                 str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["consistency"] == manifest["metrics"]["consistency"]
    assert set(metrics["matching"]) == {"mean", "std"}


def test_runtime_failures_exit_2(bench_dir, tmp_path, capsys):
    cfg = str(bench_dir / "config.json")
    assert main(["video", "synth", "--config", cfg, "--video", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "o"), "--no-rl"]) == 2
    # no checkpoint has been trained in this directory yet
    assert main(["video", "synth", "--config", cfg, "--video",
                 str(bench_dir / "videos" / "video_00"), "--out", str(tmp_path / "o")]) == 2
    # config K no longer matches a checkpoint trained with K=2
    ckpt = tmp_path / "p.json"
    assert main(["policy", "train", "--config", cfg, "--episodes", "4", "--out",
                 str(ckpt)]) == 0
    doc = json.loads((bench_dir / "config.json").read_text())
    doc["policy_checkpoint"] = str(ckpt)
    doc["K"] = 1
    other = tmp_path / "config.json"
    other.write_text(json.dumps(doc))
    assert main(["video", "synth", "--config", str(other), "--video",
                 str(bench_dir / "videos" / "video_00"), "--out", str(tmp_path / "o2")]) == 2
    assert "error" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "vidage"], capture_output=True, text=True)
    assert proc.returncode == 1
    assert "usage" in proc.stderr
