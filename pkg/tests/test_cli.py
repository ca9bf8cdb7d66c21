import filecmp
import re

import numpy as np
import pytest

from bolt.cli import main
from bolt.explain import read_relevancy

SMALL = ["--n-train", "32", "--n-val", "16", "--t", "24", "--n", "8"]

RUN_CFG = """\
# tiny run
n_channels = 8
dim = 8
heads = 2
blocks = 2
window = 8
max_len = 24
epochs = 2
batch_size = 16
crop_len = 24
"""


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    # dircmp compares shallowly; confirm byte equality
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_same_tree(a / d, b / d) for d in cmp.common_dirs)


def test_synth_is_byte_identical(tmp_path, capsys):
    assert main(["synth", "--seed", "7", "--out", str(tmp_path / "a"), *SMALL]) == 0
    assert main(["synth", "--seed", "7", "--out", str(tmp_path / "b"), *SMALL]) == 0
    assert _same_tree(tmp_path / "a", tmp_path / "b")
    assert main(["synth", "--seed", "8", "--out", str(tmp_path / "c"), *SMALL]) == 0
    assert not _same_tree(tmp_path / "a", tmp_path / "c")
    assert (tmp_path / "a" / "events.csv").read_text().startswith("scan_id,start,end\n")


def test_train_eval_explain_roundtrip(tmp_path, capsys):
    data, run = tmp_path / "data", tmp_path / "run"
    main(["synth", "--seed", "1", "--out", str(data), *SMALL])
    cfg = tmp_path / "run.cfg"
    cfg.write_text(RUN_CFG)
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(run)]) == 0
    out = capsys.readouterr().out
    logged = float(re.search(r"val_acc=(\S+)", out).group(1))
    rows = (run / "metrics.csv").read_text().splitlines()
    assert rows[0] == "epoch,lr,train_loss,ce,cwr,val_acc,val_auroc"
    assert len(rows) == 3
    assert "n_channels=8" in (run / "run.cfg").read_text()

    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data", str(data / "val")]) == 0
    out = capsys.readouterr().out
    assert float(re.search(r"accuracy=(\S+)", out).group(1)) == logged

    scan = data / "val" / "val00000.rois"
    rel = tmp_path / "rel.csv"
    assert main(["explain", "--checkpoint", str(run / "model.ckpt"), "--scan", str(scan), "--out", str(rel)]) == 0
    R, w, meta = read_relevancy(rel)
    assert meta["T"] == 24 and meta["M"] == 2
    assert R.shape == (meta["F"] + 24,) * 2 and w.shape == (24,) and np.all(w >= 0)


def test_bench_prints_ratio(capsys):
    assert main(["bench", "--t", "300", "--t", "600", "--repeats", "1"]) == 0
    out = capsys.readouterr().out
    ratio = float(re.search(r"flop_ratio\(T=600/T=300\)\t(\S+)", out).group(1))
    assert 1.9 <= ratio <= 2.1


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"), "--data", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.cfg"
    bad.write_text("dim = 8\nwarp_speed = 9\n")
    assert main(["bench", "--config", str(bad)]) == 1
    assert "unknown key 'warp_speed'" in capsys.readouterr().err
    bad.write_text("dim = eight\n")
    assert main(["bench", "--config", str(bad)]) == 1
    with pytest.raises(SystemExit) as e:
        main(["train", "--bogus"])
    assert e.value.code == 2
