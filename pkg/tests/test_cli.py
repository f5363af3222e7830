import json
import os

import numpy as np
import pytest

from sphvox.cli import main
from sphvox.geometry import PointCloud
from sphvox.io import read_tensors, write_tensors, write_xyz
from sphvox.netkit.data import DatasetParams, gen_synthetic_dataset

TINY_MODEL = {"bandwidth": 4, "h_res": 2, "delta": 0.4, "channels": [2], "fc": [4]}
TINY = {"model": TINY_MODEL, "data": {"per_class": 1, "n_points": 32}, "epochs": 1, "test_per_class": 1}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def prepare_workdir(d):
    """Tiny config plus two labelled objects in ``d``."""
    (d / "tiny.json").write_text(json.dumps(TINY))
    ds = gen_synthetic_dataset(DatasetParams(per_class=1, n_points=32), seed=5)
    for i, c in enumerate(ds.clouds[:2]):
        write_xyz(d / f"obj{i}.xyz", c)


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    prepare_workdir(tmp_path)
    return tmp_path


def _train_seg(capsys):
    code, _, err = run(capsys, "train", "--task", "seg", "--config", "tiny.json", "--out", "seg.bin")
    assert code == 0, err


def _session(capsys):
    """Every command once; returns stdout per command."""
    outs = {}
    cmds = {
        "gen": ["gen-data", "--out-dir", "data", "--per-class", "1", "--points", "32", "--seed", "2"],
        "feat": ["featurize", "--input", "obj0.xyz", "--bandwidth", "4", "--h-res", "2", "--delta", "0.4",
                 "--normalize", "--out", "feat.bin"],
        "train": ["train", "--task", "seg", "--config", "tiny.json", "--out", "seg.bin", "--metrics", "train.tsv",
                  "--figure", "train.png"],
        "feat_model": ["featurize", "--input", "obj0.xyz", "--model", "seg.bin", "--normalize", "--out", "pf.bin"],
        "eval": ["eval", "--ckpt", "seg.bin", "--config", "tiny.json", "--rotate", "haar", "--metrics", "eval.tsv",
                 "--figure", "eval.png"],
        "ablate": ["ablate", "--task", "cls", "--axis", "bandwidth", "--config", "tiny.json",
                   "--metrics", "abl.tsv", "--figure", "abl.png"],
        "verify": ["verify-invariance", "--input", "obj0.xyz", "--bandwidth", "4", "--trials", "3"],
        "match": ["match", "--db-objects", "obj0.xyz", "obj1.xyz", "--query", "obj1.xyz", "--ckpt", "seg.bin",
                  "--k", "2", "--table", "table.tsv", "--db-out", "db.bin"],
    }
    for name, argv in cmds.items():
        code, out, err = run(capsys, *argv)
        assert code == 0, (name, err)
        outs[name] = out
    return outs


def _snapshot(root):
    files = {}
    for dirpath, _, names in os.walk(root):
        for n in names:
            p = os.path.join(dirpath, n)
            files[os.path.relpath(p, root)] = open(p, "rb").read()
    return files


def test_every_command_is_byte_deterministic(tmp_path, monkeypatch, capsys):
    snaps = []
    for run_dir in ("a", "b"):
        d = tmp_path / run_dir
        d.mkdir()
        monkeypatch.chdir(d)
        prepare_workdir(d)
        outs = _session(capsys)
        snaps.append((outs, _snapshot(d)))
    (out_a, files_a), (out_b, files_b) = snaps
    assert out_a == out_b
    assert sorted(files_a) == sorted(files_b)
    for name in files_a:
        assert files_a[name] == files_b[name], name
    for png in ("train.png", "eval.png", "abl.png"):
        assert files_a[png].startswith(b"\x89PNG")


def test_featurize_grid_shape(work, capsys):
    code, _, _ = run(capsys, "featurize", "--input", "obj0.xyz", "--bandwidth", "4", "--h-res", "3",
                     "--delta", "0.3", "--normalize", "--out", "g.bin")
    assert code == 0
    assert read_tensors("g.bin")["signal"].shape == (1, 8, 8, 3)


def test_train_output_table(work, capsys):
    code, out, _ = run(capsys, "train", "--task", "cls", "--config", "tiny.json", "--epochs", "2", "--out", "c.bin")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "epoch\tloss\taccuracy"
    assert [line.split("\t")[0] for line in lines[1:]] == ["0", "1"]


def test_verify_invariance_grid_exact(work, capsys):
    code, out, _ = run(capsys, "verify-invariance", "--input", "obj0.xyz", "--trials", "4", "--grid-exact")
    assert code == 0
    fields = dict(kv.split("=") for kv in out.strip().split("\t"))
    assert fields["mode"] == "grid-exact"
    assert float(fields["point_max"]) < 1e-5
    assert float(fields["global_max"]) < 1e-6


def test_match_self_retrieval(work, capsys):
    # wide enough that no two points share a descriptor
    cfg = dict(TINY, model=dict(TINY_MODEL, channels=[8], fc=[32]), epochs=3)
    (work / "wide.json").write_text(json.dumps(cfg))
    assert run(capsys, "train", "--task", "seg", "--config", "wide.json", "--out", "wide.bin")[0] == 0
    code, out, _ = run(capsys, "match", "--db-objects", "obj0.xyz", "--query", "obj0.xyz", "--ckpt", "wide.bin",
                       "--rotate", "none")
    assert code == 0
    assert out.splitlines()[0] == "accuracy\t1.000000"


# exit codes


def test_parse_errors_exit_2(work, capsys):
    (work / "bad.xyz").write_text("1 2\n")
    (work / "bad.bin").write_bytes(b"nope")
    (work / "bad.json").write_text("{")
    (work / "list.json").write_text("[]")
    write_tensors(work / "other.bin", {"x": np.ones(2)})
    cases = [
        ["featurize", "--input", "bad.xyz", "--out", "o.bin"],
        ["featurize", "--input", "missing.xyz", "--out", "o.bin"],
        ["featurize", "--input", "obj0.xyz", "--model", "bad.bin", "--out", "o.bin"],
        ["featurize", "--input", "obj0.xyz", "--model", "other.bin", "--out", "o.bin"],
        ["train", "--task", "cls", "--config", "bad.json", "--out", "o.bin"],
        ["train", "--task", "cls", "--config", "list.json", "--out", "o.bin"],
        ["featurize"],
        ["no-such-command"],
    ]
    for argv in cases:
        assert run(capsys, *argv)[0] == 2, argv


def test_match_needs_labels_exit_2(work, capsys):
    _train_seg(capsys)
    write_xyz(work / "plain.xyz", PointCloud(np.eye(3) * 0.5))
    code, _, _ = run(capsys, "match", "--db-objects", "plain.xyz", "--query", "obj0.xyz", "--ckpt", "seg.bin")
    assert code == 2


def test_invalid_parameters_exit_3(work, capsys):
    (work / "unknown.json").write_text(json.dumps({"model": {"nope": 1}}))
    write_xyz(work / "far.xyz", PointCloud(np.array([[2.0, 0, 0], [0, 0, 0.1]])))
    cases = [
        ["train", "--task", "cls", "--config", "unknown.json", "--out", "o.bin"],
        ["train", "--task", "cls", "--config", "tiny.json", "--epochs", "-1", "--out", "o.bin"],
        ["featurize", "--input", "far.xyz", "--out", "o.bin"],
        ["featurize", "--input", "obj0.xyz", "--bandwidth", "1", "--normalize", "--out", "o.bin"],
        ["gen-data", "--out-dir", "d", "--noise", "0.5"],
        ["verify-invariance", "--input", "obj0.xyz", "--trials", "-1"],
    ]
    for argv in cases:
        assert run(capsys, *argv)[0] == 3, argv
    _train_seg(capsys)
    assert run(capsys, "match", "--db-objects", "obj0.xyz", "--query", "obj0.xyz", "--ckpt", "seg.bin",
               "--k", "0")[0] == 3
    assert run(capsys, "match", "--db-objects", "obj0.xyz", "--query", "obj0.xyz", "--ckpt", "seg.bin",
               "--k", "33")[0] == 3


def test_model_grid_mismatch_exit_4(work, capsys):
    _train_seg(capsys)
    cases = [
        ["featurize", "--input", "obj0.xyz", "--model", "seg.bin", "--bandwidth", "8", "--normalize", "--out", "o"],
        ["featurize", "--input", "obj0.xyz", "--model", "seg.bin", "--delta", "0.2", "--normalize", "--out", "o"],
        ["featurize", "--input", "obj0.xyz", "--model", "seg.bin", "--no-daas", "--normalize", "--out", "o"],
        ["eval", "--ckpt", "seg.bin", "--task", "cls"],
    ]
    for argv in cases:
        assert run(capsys, *argv)[0] == 4, argv
    assert run(capsys, "train", "--task", "cls", "--config", "tiny.json", "--out", "c.bin")[0] == 0
    assert run(capsys, "match", "--db-objects", "obj0.xyz", "--query", "obj0.xyz", "--ckpt", "c.bin")[0] == 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_5(work, capsys):
    cfg = dict(TINY, optimizer={"lr": 1e300}, epochs=3)
    (work / "hot.json").write_text(json.dumps(cfg))
    code, _, err = run(capsys, "train", "--task", "cls", "--config", "hot.json", "--out", "o.bin")
    assert code == 5, err
    assert not (work / "o.bin").exists()
