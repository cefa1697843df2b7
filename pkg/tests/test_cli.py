import hashlib
import json

import numpy as np
import pytest

from arflow import cli
from arflow import data as dt
from arflow import flowpath as fp
from arflow import selfcheck


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "data.jsonl"
    assert run("gen-data", "--pairs", "60", "--frames", "8", "--seed", "3",
               "--contact-fraction", "0.5", "--out", str(path)) == 0
    return path


@pytest.fixture(scope="module")
def small_model(small_data, tmp_path_factory):
    path = tmp_path_factory.mktemp("cli-model") / "model.json"
    assert run("train", "--data", str(small_data), "--out", str(path),
               "--steps", "150", "--batch", "8", "--width", "32", "--layers", "1",
               "--seed", "5") == 0
    return path


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def test_gen_data_record_count_and_checksum(tmp_path):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    assert run("gen-data", "--pairs", "12", "--frames", "6", "--seed", "9",
               "--out", str(a)) == 0
    assert run("gen-data", "--pairs", "12", "--frames", "6", "--seed", "9",
               "--out", str(b)) == 0
    assert len(a.read_text().splitlines()) == 12
    assert sha(a) == sha(b)
    manifest = json.loads((tmp_path / "a.jsonl.manifest.json").read_text())
    assert manifest["command"] == "gen-data"
    assert str(a) in manifest["outputs"]


def test_gen_data_zero_pairs_exits_2(tmp_path):
    assert run("gen-data", "--pairs", "0",
               "--out", str(tmp_path / "x.jsonl")) == 2


def test_unknown_flag_is_an_error(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("gen-data", "--pairs", "2", "--out", str(tmp_path / "x.jsonl"),
            "--frobnicate")
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_train_smoke_and_loss_csv(small_data, tmp_path):
    out = tmp_path / "m.json"
    assert run("train", "--data", str(small_data), "--out", str(out),
               "--steps", "40", "--batch", "4", "--width", "16", "--layers", "1",
               "--seed", "1") == 0
    rows = (tmp_path / "m.json.loss.csv").read_text().splitlines()
    assert len(rows) == 40
    assert all(len(r.split(",")) == 4 for r in rows)


def test_train_lambda_inter_changes_losses(small_data, tmp_path):
    outs = []
    for lam in ("0", "1"):
        out = tmp_path / f"m{lam}.json"
        assert run("train", "--data", str(small_data), "--out", str(out),
                   "--steps", "25", "--batch", "4", "--width", "16",
                   "--layers", "1", "--lambda-inter", lam, "--seed", "2") == 0
        last = (tmp_path / f"m{lam}.json.loss.csv").read_text().splitlines()[-1]
        outs.append(float(last.split(",")[3]))
    assert outs[0] != outs[1]


def test_train_seed_reproducible_checksum(small_data, tmp_path):
    sums = []
    for name in ("r1.json", "r2.json"):
        out = tmp_path / name
        assert run("train", "--data", str(small_data), "--out", str(out),
                   "--steps", "30", "--batch", "4", "--width", "16",
                   "--layers", "1", "--seed", "7") == 0
        sums.append(sha(out))
    assert sums[0] == sums[1]


def test_train_missing_data_exits_2(tmp_path):
    assert run("train", "--data", str(tmp_path / "nope.jsonl"),
               "--out", str(tmp_path / "m.json"), "--steps", "1") == 2


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def test_sample_guidance_reduction_parity(small_model, small_data, tmp_path):
    outa = tmp_path / "euler.jsonl"
    outb = tmp_path / "improved0.jsonl"
    assert run("sample", "--model", str(small_model), "--data", str(small_data),
               "--out", str(outa), "--guidance", "none", "--seed", "4") == 0
    assert run("sample", "--model", str(small_model), "--data", str(small_data),
               "--out", str(outb), "--guidance", "improved", "--lambda-pene", "0",
               "--w", "1.0", "--seed", "4") == 0
    a, _ = dt.load_samples(str(outa))
    b, _ = dt.load_samples(str(outb))
    worst = max(np.max(np.abs(x.reactor - y.reactor)) for x, y in zip(a, b))
    assert worst < 1e-12


def test_sample_checksum_reproducible(small_model, small_data, tmp_path):
    sums = []
    for name in ("s1.jsonl", "s2.jsonl"):
        out = tmp_path / name
        assert run("sample", "--model", str(small_model), "--data",
                   str(small_data), "--out", str(out), "--beta", "0.02",
                   "--seed", "11") == 0
        sums.append(sha(out))
    assert sums[0] == sums[1]


def test_sample_missing_model_exits_4(small_data, tmp_path):
    assert run("sample", "--model", str(tmp_path / "missing.json"),
               "--data", str(small_data), "--out", str(tmp_path / "s.jsonl")) == 4


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def test_eval_ground_truth_penetration(small_data, tmp_path, capsys):
    out = tmp_path / "report.txt"
    assert run("eval", "--inputs", str(small_data), "--metrics", "iv,if",
               "--voxel", "0.02", "--out", str(out)) == 0
    text = out.read_text()
    values = dict(line.split(": ") for line in text.splitlines())
    assert float(values["iv_cm3"]) > 0.0
    assert 0.0 < float(values["if_frac"]) < 1.0
    assert int(values["n_total"]) == 60


def test_eval_fid_self_near_zero(small_data, tmp_path):
    out = tmp_path / "fid.txt"
    assert run("eval", "--inputs", str(small_data), "--ref", str(small_data),
               "--metrics", "fid", "--features", "proj", "--out", str(out)) == 0
    values = dict(line.split(": ") for line in out.read_text().splitlines())
    assert float(values["fid"]) < 1e-6


def test_eval_div_multimod(small_data, tmp_path):
    out = tmp_path / "dm.txt"
    assert run("eval", "--inputs", str(small_data), "--metrics", "div,multimod",
               "--sd", "10", "--sl", "4", "--allow-replacement",
               "--out", str(out)) == 0
    values = dict(line.split(": ") for line in out.read_text().splitlines())
    assert float(values["diversity"]) > 0.0
    assert float(values["multimodality"]) > 0.0


def test_eval_empty_input_exits_5(tmp_path):
    empty = tmp_path / "empty.jsonl"
    dt.save_samples(str(empty), [], dt.default_skeleton())
    assert run("eval", "--inputs", str(empty)) == 5


def test_guided_iv_not_worse_than_unguided(small_model, small_data, tmp_path):
    results = {}
    for guidance in ("none", "improved"):
        out = tmp_path / f"g_{guidance}.jsonl"
        assert run("sample", "--model", str(small_model), "--data",
                   str(small_data), "--out", str(out), "--guidance", guidance,
                   "--split", "all", "--limit", "20", "--seed", "3") == 0
        report = tmp_path / f"g_{guidance}.txt"
        assert run("eval", "--inputs", str(out), "--metrics", "iv",
                   "--out", str(report)) == 0
        values = dict(line.split(": ")
                      for line in report.read_text().splitlines())
        results[guidance] = float(values["iv_cm3"])
    assert results["improved"] <= results["none"]


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def test_verify_passes_on_fresh_checkout(capsys):
    import time
    started = time.time()
    assert run("verify") == 0
    assert time.time() - started < 60.0
    out = capsys.readouterr().out
    assert "all 15 properties passed" in out


def test_verify_catches_corrupted_duality(monkeypatch, capsys):
    # mutation harness: break x1_from_v and confirm the suite names the
    # duality property
    real = fp.x1_from_v
    monkeypatch.setattr(fp, "x1_from_v",
                        lambda v, x_t, t, s: real(v, x_t, t, s) + 1e-6)
    results = selfcheck.run_all(seed=0)
    by_name = {r.name: r.ok for r in results}
    assert by_name["x1-v-duality"] is False
    assert run("verify") == 1
    assert "x1-v-duality" in capsys.readouterr().out
