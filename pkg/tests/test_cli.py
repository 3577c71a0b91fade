import json

import numpy as np
import pytest

from prismquant.cli import main
from prismquant.dataset import write_dataset


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def summary(out):
    lines = out.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture
def synth(tmp_path, capsys):
    code, out, _ = run(
        capsys, "synth", "--K", 3, "--n", 4, "--count", 3000, "--seed", 2,
        "--dict", tmp_path / "d.pqd", "--samples", tmp_path / "x.npy", "--labels", tmp_path / "l.npy",
    )
    assert code == 0 and summary(out)["K"] == 3
    return tmp_path


def test_encode_decode_cycle(synth, capsys):
    t = synth
    code, out, _ = run(capsys, "encode", "--samples", t / "x.npy", "--dict", t / "d.pqd", "--rate", 1.5, "--out", t / "s.pqbs")
    enc = summary(out)
    assert code == 0 and abs(enc["bits_per_dim"] - 1.5) < 0.1
    code, out, _ = run(capsys, "decode", "--input", t / "s.pqbs", "--dict", t / "d.pqd", "--out", t / "y.npy", "--reference", t / "x.npy")
    dec = summary(out)
    assert code == 0 and dec["nmse"] == enc["nmse"]
    first = (t / "s.pqbs").read_bytes()
    run(capsys, "encode", "--samples", t / "x.npy", "--dict", t / "d.pqd", "--rate", 1.5, "--out", t / "s.pqbs")
    assert (t / "s.pqbs").read_bytes() == first
    code, out, _ = run(
        capsys, "encode", "--samples", t / "x.npy", "--dict", t / "d.pqd", "--level", 0.5, "--tau", "inf",
        "--mode", "prismquant-genie", "--labels", t / "l.npy", "--out", t / "g.pqbs",
    )
    assert code == 0 and summary(out)["mode"] == "prismquant-genie"


def test_sweep_bounds_prune_fit(synth, capsys):
    t = synth
    code, out, _ = run(capsys, "sweep", "--dict", t / "d.pqd", "--samples", t / "x.npy", "--labels", t / "l.npy", "--levels", "1e-2:10:4", "--out", t / "a.csv")
    assert code == 0 and summary(out)["rows"] == 16
    run(capsys, "sweep", "--dict", t / "d.pqd", "--samples", t / "x.npy", "--labels", t / "l.npy", "--levels", "1e-2:10:4", "--out", t / "b.csv")
    assert (t / "a.csv").read_bytes() == (t / "b.csv").read_bytes()
    code, out, _ = run(capsys, "bounds", "--dict", t / "d.pqd", "--levels", "0.1,1", "--labels", t / "l.npy")
    b = summary(out)
    assert code == 0 and b["label_rate"] <= b["log2K_over_n"] and len(b["points"]) == 2
    assert "empirical_label_entropy_bits" in b
    code, out, _ = run(capsys, "prune", "--dict", t / "d.pqd", "--level", 100)
    assert code == 0 and summary(out)["memory_ratio"] == 0.0
    code, out, _ = run(capsys, "fit", "--samples", t / "x.npy", "--K", 2, "--restarts", 1, "--dict", t / "f.pqd", "--json", t / "f.json")
    assert code == 0 and summary(out)["K"] == 2
    assert json.loads((t / "f.json").read_text())["priors"]


def test_ingest(tmp_path, capsys):
    rec = np.random.default_rng(0).normal(size=(3, 10)) + 0j
    write_dataset(tmp_path / "r.bin", rec)
    code, out, _ = run(capsys, "ingest", "--input", tmp_path / "r.bin", "--n", 8, "--out", tmp_path / "b.npy")
    s = summary(out)
    assert code == 0 and s["blocks"] == 9 and s["padding"] == 4
    assert np.load(tmp_path / "b.npy").shape == (9, 8)


def test_errors_are_one_line(synth, capsys):
    t = synth
    code, out, err = run(capsys, "encode", "--samples", t / "x.npy", "--dict", t / "d.pqd", "--rate", 0.01, "--out", t / "s.pqbs")
    assert code != 0 and out == "" and len(err.strip().splitlines()) == 1
    assert "InfeasibleBudgetError" in err
    (t / "bad.pqbs").write_bytes(b"PQBS1garbage")
    code, _, err = run(capsys, "decode", "--input", t / "bad.pqbs", "--dict", t / "d.pqd", "--out", t / "y.npy")
    assert code != 0 and "CorruptStreamError" in err
    code, _, err = run(capsys, "decode", "--input", t / "missing.pqbs", "--dict", t / "d.pqd", "--out", t / "y.npy")
    assert code != 0 and len(err.strip().splitlines()) == 1
