import json

import pytest

from poselab.dataset_io import read_manifest
from poselab.harness import cli
from poselab.harness.config import ExperimentConfig
from poselab.loss_optim import NumericalError

SCENE = ["width=96", "height=64", "focal=60"]
TRAJ = ["length=10", "test_length=6"]


@pytest.fixture()
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("POSELAB_OUTPUT", str(tmp_path / "runs"))
    return tmp_path


def _config(path, **kw):
    base = dict(name="cli", backbone="fast", fc_hidden=16, epochs=1, batch_size=8,
                scene={"width": 96, "height": 64, "focal": 60.0}, trajectory={"length": 10, "test_length": 6})
    base.update(kw)
    path.write_text(ExperimentConfig(**base).to_text())
    return str(path)


def test_synth_augment_train_eval_report(out_root, capsys):
    data = out_root / "data"
    assert cli.main(["synth", "--scene", *SCENE, "--trajectory", *TRAJ, "--seed", "2", "-o", str(data)]) == 0
    train = read_manifest(data / "train.manifest", check_paths=True)
    assert len(train) == 10 and train.provenance["scene.width"] == "96"

    assert cli.main(["augment", "--manifest", str(data / "train.manifest"), "--range", "-20", "20",
                     "--seed", "1", "-o", str(out_root / "aug")]) == 0
    aug = read_manifest(out_root / "aug" / "train.manifest", check_paths=True)
    assert len(aug) == 20 and sum(e.synthetic for e in aug.entries) == 10
    assert [e.pose.position for e in aug.entries[10:]] == [e.pose.position for e in train.entries]

    cfg = _config(out_root / "c.txt", dataset="manifest", train_manifest=str(out_root / "aug" / "train.manifest"),
                  test_manifest=str(data / "test.manifest"), preprocessing="centered_crop")
    assert cli.main(["train", "--config", cfg]) == 0
    run = out_root / "runs" / "cli"
    assert (run / "checkpoint.npz").exists() and (run / "report.json").exists()
    assert cli.main(["train", "--config", cfg, "--set", "name=cli2", "--set", "preprocessing=whole_fov"]) == 0

    assert cli.main(["eval", "--checkpoint", str(run / "checkpoint.npz"), "--manifest", str(data / "test.manifest"),
                     "-o", str(out_root / "eval.json")]) == 0
    ev = json.loads((out_root / "eval.json").read_text())
    stored = json.loads((run / "report.json").read_text())
    assert ev["preprocessing"] == "centered_crop"
    assert ev["report"]["median_position_m"] == stored["test"]["median_position_m"]

    capsys.readouterr()
    assert cli.main(["report", "--layout", "table1", "--runs", str(out_root / "runs"),
                     "-o", str(out_root / "t1")]) == 0
    md = capsys.readouterr().out
    assert "| Dataset | Centered Crop | Whole Field of View | Improvement |" in md
    assert "| aug |" in md
    assert (out_root / "t1.csv").read_text().startswith("group,row,column")


def test_eval_renders_synthetic_manifest_without_images(out_root):
    data = out_root / "data"
    assert cli.main(["synth", "--scene", *SCENE, "--trajectory", *TRAJ, "--no-images", "-o", str(data)]) == 0
    assert not (data / "train").exists()
    assert cli.main(["train", "--config", _config(out_root / "c.txt", epochs=0)]) == 0
    assert cli.main(["eval", "--checkpoint", str(out_root / "runs" / "cli" / "checkpoint.npz"),
                     "--manifest", str(data / "test.manifest")]) == 0


def test_ingest_cambridge(out_root):
    root = out_root / "KingsCollege"
    (root / "seq1").mkdir(parents=True)
    lines = ["Visual Landmark Dataset V1", "ImageFile, Camera Position [X Y Z W P Q R]", ""]
    for i in range(3):
        (root / "seq1" / f"frame{i:05d}.png").write_bytes(b"")
        lines.append(f"seq1/frame{i:05d}.png {i}.0 2.0 3.0 1.0 0.0 0.0 0.0")
    lines.append("seq1/broken.png 1 2 3")
    (root / "dataset_train.txt").write_text("\n".join(lines) + "\n")
    out = out_root / "kings.manifest"
    assert cli.main(["ingest", "cambridge", str(root), "-o", str(out)]) == 0
    m = read_manifest(out, check_paths=True)
    assert len(m) == 3 and m.source_format == "cambridge"


@pytest.mark.parametrize("argv", [[], ["fly"], ["train"], ["synth", "--scene", "colour=red"],
                                  ["report", "--layout", "table9", "--runs", "x"]])
def test_usage_errors_exit_1(out_root, argv, capsys):
    assert cli.main(argv) == 1
    assert capsys.readouterr().err


def test_bad_config_value_exit_1(out_root):
    cfg = out_root / "c.txt"
    cfg.write_text("epochs = lots\n")
    assert cli.main(["train", "--config", str(cfg)]) == 1


def test_data_errors_exit_2(out_root):
    assert cli.main(["eval", "--checkpoint", str(out_root / "none.npz"), "--manifest", "x"]) == 2
    assert cli.main(["report", "--runs", str(out_root / "empty")]) == 2
    bad = out_root / "bad.manifest"
    bad.write_text("not a manifest\n")
    assert cli.main(["augment", "--manifest", str(bad)]) == 2
    cfg = _config(out_root / "c.txt", dataset="manifest", train_manifest=str(bad), test_manifest=str(bad))
    assert cli.main(["train", "--config", cfg]) == 2


def test_numerical_failure_exit_3(out_root, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("11 optimizer steps rejected for non-finite values")
    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["train", "--config", _config(out_root / "c.txt")]) == 3
