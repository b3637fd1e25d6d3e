import json

import numpy as np
import pytest

from noisyfss.core import PointCloud, SupportShot
from noisyfss.harness import cli
from noisyfss.harness.train import NumericalError


def small_config(tmp_path, **extra):
    values = {"base_scenes": 30, "novel_scenes": 30, "pretrain_epochs": 1, "train_iterations": 2,
              "test_episodes": 2, "n_query": 1, "hidden": 8, "feat_dim": 8, "proj_dim": 8, **extra}
    path = tmp_path / "cfg.yaml"
    path.write_text("".join(f"{k}: {json.dumps(v)}\n" for k, v in values.items()))
    return str(path)


def test_full_cli_pipeline(tmp_path, capsys):
    cfg = small_config(tmp_path)
    out = str(tmp_path / "run")
    data = str(tmp_path / "data")
    assert cli.main(["gen-data", "--config", cfg, "--out", data]) == 0
    manifest = json.loads((tmp_path / "data" / "base" / "manifest.json").read_text())
    assert manifest["point_count"] == 512 and len(manifest["clouds"]) == 30
    assert json.loads((tmp_path / "data" / "split.json").read_text())["novel"] == [7, 8, 9, 10, 11, 12]
    assert cli.main(["pretrain", "--config", cfg, "--data", data, "--out", out]) == 0
    assert cli.main(["train", "--config", cfg, "--data", data, "--out", out]) == 0
    assert cli.main(["eval", "--config", cfg, "--data", data, "--out", out]) == 0
    metrics = json.loads((tmp_path / "run" / "metrics.json").read_text())
    assert metrics["episodes"] == 2 and 0 <= metrics["mean_miou"] <= 1
    assert (tmp_path / "run" / "metrics_episodes.csv").exists()
    assert "mIoU" in (tmp_path / "run" / "metrics.txt").read_text()


def test_filter_demo_roundtrip(tmp_path, capsys):
    rng = np.random.default_rng(0)
    u = np.array([1.0, 0.0, 0.0])
    shots, feats = [], []
    for k, true in enumerate([1, 1, 2, 1, 3]):
        coords = rng.uniform(size=(20, 3))
        cloud = PointCloud(coords, np.zeros((20, 3)), np.full(20, true))
        shots.append(SupportShot(cloud, np.ones(20, bool), 1, true))
        direction = u if true == 1 else np.eye(3)[true - 1]
        feats.append(direction + rng.normal(0, 0.05, (20, 3)))
    cli.write_feature_file(tmp_path / "f.bin", tmp_path / "f.json", shots, feats)
    assert (tmp_path / "f.bin").stat().st_size == 5 * 20 * 7 * 4
    code = cli.main(["filter-demo", "--features", str(tmp_path / "f.bin"), "--descriptor", str(tmp_path / "f.json"),
                     "--out", str(tmp_path / "r.json")])
    assert code == 0
    result = json.loads((tmp_path / "r.json").read_text())
    assert result["retained"] == [0, 1, 3]


def test_filter_demo_bad_descriptor(tmp_path):
    (tmp_path / "f.bin").write_bytes(np.zeros(10, "<f4").tobytes())
    (tmp_path / "f.json").write_text(json.dumps({"dim": 2, "shots": [{"n_points": 5}]}))
    assert cli.main(["filter-demo", "--features", str(tmp_path / "f.bin"), "--descriptor", str(tmp_path / "f.json")]) == 2


def test_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("nonsense_key: 3\n")
    assert cli.main(["gen-data", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_numerical_error_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise NumericalError("loss diverged")

    monkeypatch.setattr(cli, "run_pretrain", boom)
    assert cli.main(["pretrain", "--config", small_config(tmp_path), "--out", str(tmp_path)]) == 3


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args([])
