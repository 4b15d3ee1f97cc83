import subprocess
import sys

import numpy as np
import pytest

from ucc import io as uio
from ucc.bags import InstancePool
from ucc.cli import main
from ucc.config import load_config
from ucc.model import build_model
from ucc.pipeline import model_from_config

SMALL = ["--set", "gen.per_class=40"]
QUICK = ["--set", "train.max_iterations=60", "--set", "train.patience=40",
         "--set", "train.validation_period=20", "--set", "data.bags_per_label=20",
         "--set", "data.val_bags_per_label=5", "--set", "data.bag_size=8",
         "--set", "model.ucc_hi=3"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "data"), *SMALL]) == 0
    pool = root / "data" / "pool.txt"
    assert main(["train", "--out", str(root / "run"), "--pool", str(pool), *QUICK]) == 0
    return root, pool, root / "run" / "model.uccm"


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def test_gen_data_is_seeded(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "a"), "--seed", "3", *SMALL]) == 0
    assert main(["gen-data", "--out", str(tmp_path / "b"), "--seed", "3", *SMALL]) == 0
    assert main(["gen-data", "--out", str(tmp_path / "c"), "--seed", "4", *SMALL]) == 0
    a, b, c = (files(tmp_path / d) for d in "abc")
    assert a == b and a["pool.txt"] != c["pool.txt"]


def test_train_outputs(trained):
    root, _, ckpt = trained
    run = root / "run"
    assert ckpt.exists()
    assert (run / "train_report.tsv").read_text().startswith("iteration\ttrain_loss")
    snapshot = (run / "config.txt").read_text()
    assert "train.max_iterations = 60" in snapshot
    assert "val_accuracy=" in (run / "train_summary.txt").read_text()


def test_zero_iterations_writes_initial_weights(tmp_path, trained):
    _, pool, _ = trained
    args = ["--set", "train.max_iterations=0", "--set", "model.ucc_hi=3", "--seed", "2",
            "--set", "data.bag_size=8"]
    assert main(["train", "--out", str(tmp_path), "--pool", str(pool), *args]) == 0
    cfg = load_config(None, ["model.ucc_hi=3"], seed=2)
    expect = uio.checkpoint_bytes(model_from_config(cfg, 8))
    assert (tmp_path / "model.uccm").read_bytes() == expect


def test_missing_pool_exits_2(tmp_path, capsys):
    missing = tmp_path / "absent_pool.txt"
    assert main(["train", "--out", str(tmp_path), "--pool", str(missing)]) == 2
    assert "absent_pool.txt" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path), "--set", "model.alpha=7"]) == 2
    assert "model.alpha" in capsys.readouterr().err


def test_divergence_exits_3(tmp_path, trained):
    _, pool, _ = trained
    args = [*QUICK, "--set", "train.learning_rate=1e300"]
    with np.errstate(all="ignore"):
        assert main(["train", "--out", str(tmp_path), "--pool", str(pool), *args]) == 3


def test_cluster_is_deterministic(tmp_path, trained):
    _, pool, ckpt = trained
    for name in ("a", "b"):
        assert main(["cluster", "--out", str(tmp_path / name), "--checkpoint", str(ckpt),
                     "--pool", str(pool), "--seed", "5"]) == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b
    assert set(a) == {"assignments.txt", "cluster_metrics.txt", "js_matrix.tsv"}
    assert len(a["assignments.txt"].splitlines()) == 160
    assert b"clustering_accuracy=" in a["cluster_metrics.txt"]


def test_spectral_cluster(tmp_path, trained):
    _, pool, ckpt = trained
    assert main(["cluster", "--out", str(tmp_path), "--checkpoint", str(ckpt), "--pool", str(pool),
                 "--method", "spectral"]) == 0


def test_unlabelled_pool_omits_accuracy(tmp_path, trained):
    _, pool, ckpt = trained
    unl = tmp_path / "unl.txt"
    uio.write_pool(unl, InstancePool(uio.read_pool(pool).instances, None, 0))
    assert main(["cluster", "--out", str(tmp_path / "o"), "--checkpoint", str(ckpt),
                 "--pool", str(unl), "--k", "4"]) == 0
    out = files(tmp_path / "o")
    assert b"clustering_accuracy" not in out["cluster_metrics.txt"]
    assert "js_matrix.tsv" not in out and len(out["assignments.txt"].splitlines()) == 160


def test_dimension_mismatch_exits_2(tmp_path, trained, rng):
    _, _, ckpt = trained
    other = tmp_path / "wide.txt"
    uio.write_pool(other, InstancePool(rng.uniform(size=(4, 5)), [1, 2, 1, 2], 2))
    assert main(["cluster", "--out", str(tmp_path), "--checkpoint", str(ckpt), "--pool", str(other)]) == 2


def test_eval_ucc_confusion(tmp_path, trained):
    _, pool, ckpt = trained
    assert main(["eval-ucc", "--out", str(tmp_path), "--checkpoint", str(ckpt), "--pool", str(pool),
                 "--trials", "12", "--set", "eval.bag_size=8"]) == 0
    rows = (tmp_path / "confusion_matrix.tsv").read_text().splitlines()[1:]
    assert len(rows) == 3
    assert all(sum(int(v) for v in r.split("\t")[1:]) == 12 for r in rows)


def test_eval_ucc_single_class(tmp_path, rng):
    pool = tmp_path / "one.txt"
    uio.write_pool(pool, InstancePool(rng.uniform(size=(20, 3)), np.ones(20), 1))
    args = ["--set", "model.ucc_hi=1", "--set", "train.max_iterations=0", "--set", "data.bag_size=4"]
    assert main(["train", "--out", str(tmp_path / "r"), "--pool", str(pool), *args]) == 0
    assert main(["eval-ucc", "--out", str(tmp_path / "e"), "--pool", str(pool),
                 "--checkpoint", str(tmp_path / "r" / "model.uccm"), "--trials", "10",
                 "--set", "data.bag_size=4"]) == 0
    assert "ucc_accuracy=1.000000" in (tmp_path / "e" / "ucc_eval.txt").read_text()


def test_eval_ucc_infeasible_range(tmp_path, rng):
    pool = tmp_path / "two.txt"
    uio.write_pool(pool, InstancePool(rng.uniform(size=(20, 3)), np.arange(20) % 2 + 1, 2))
    uio.save_model(tmp_path / "m.uccm", build_model(3, 2, ucc_hi=4, rng=0))
    assert main(["eval-ucc", "--out", str(tmp_path / "e"), "--pool", str(pool),
                 "--checkpoint", str(tmp_path / "m.uccm")]) == 2


def test_verify_props(tmp_path, trained):
    _, pool, ckpt = trained
    assert main(["verify-props", "--out", str(tmp_path / "raw"), "--pool", str(pool),
                 "--trials", "50", "--universe", "80"]) == 0
    report = (tmp_path / "raw" / "props_report.txt").read_text().splitlines()
    assert [line.split(":")[0] for line in report] == ["prop2", "prop1", "prop3", "propB1", "propB3"]
    code = main(["verify-props", "--out", str(tmp_path / "m"), "--pool", str(pool),
                 "--checkpoint", str(ckpt), "--trials", "50", "--universe", "80"])
    assert code in (0, 1)


def test_verify_props_failure_exits_1(tmp_path):
    pool = tmp_path / "same.txt"
    uio.write_pool(pool, InstancePool(np.full((20, 2), 0.5), np.arange(20) % 2 + 1, 2))
    assert main(["verify-props", "--out", str(tmp_path), "--pool", str(pool), "--trials", "20"]) == 1
    assert "prop3: FAIL" in (tmp_path / "props_report.txt").read_text()


def test_segmentation_flow(tmp_path):
    gen = ["--set", "gen.kind=textures", "--set", "gen.image_size=32", "--set", "gen.images=4",
           "--set", "gen.train_images=12", "--set", "gen.val_images=6"]
    assert main(["gen-data", "--out", str(tmp_path / "d"), *gen]) == 0
    seg = ["--set", "seg.patch_size=8", "--set", "model.ucc_hi=2"]
    assert main(["train", "--out", str(tmp_path / "r"), "--set", f"data.images={tmp_path / 'd' / 'train'}",
                 "--set", "train.max_iterations=40", "--set", "train.patience=20",
                 "--set", "train.validation_period=20", *seg]) == 0
    assert main(["eval-seg", "--out", str(tmp_path / "s"), "--checkpoint", str(tmp_path / "r" / "model.uccm"),
                 "--images", str(tmp_path / "d" / "test"), "--reference-images", str(tmp_path / "d" / "train"),
                 "--write-masks", *seg]) == 0
    table = (tmp_path / "s" / "seg_metrics.tsv").read_text().splitlines()
    assert table[0] == "image\tTPR\tFPR\tTNR\tFNR\tPA" and table[-1].startswith("mean")
    assert len(table) == 6
    assert len(list((tmp_path / "s" / "masks").glob("*.ucck"))) == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ucc", "cluster", "--out", str(tmp_path),
                           "--checkpoint", str(tmp_path / "missing.uccm"), "--pool", "x"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "missing.uccm" in proc.stderr
