import json
import os
import subprocess

import numpy as np
import pytest

import slidegcd

SMALL_SPEC = {"slides_per_class": 40, "test_per_class": 10}
SMALL_CONFIG = {"warmup_epochs": 2, "total_epochs": 6, "L": 32, "k": 4}


@pytest.fixture(scope="module")
def dataset():
    return slidegcd.generate_synthetic(SMALL_SPEC)


@pytest.fixture(scope="module")
def checkpoint(dataset):
    return slidegcd.train(SMALL_CONFIG, dataset)


def test_synthetic_dataset_shapes(dataset):
    assert dataset.num_classes == 2
    assert len(dataset.bags) == 80
    assert len(dataset.test) == 20
    bag = dataset.bags[0]
    assert bag.embeddings.dtype == np.float32
    assert bag.embeddings.shape[1] == dataset.patch_dim == 32


def test_train_log_and_buffer(checkpoint):
    log = checkpoint.log
    assert {r["stage"] for r in log} == {"warmup", "formal"}
    first_formal = next(r for r in log if r["stage"] == "formal")
    assert first_formal["lr"] == 1e-4
    assert checkpoint.buffer_embeddings.shape == (32, 32)
    assert sorted(set(checkpoint.buffer_labels)) == [0, 1]
    assert checkpoint.config["k"] == 4


def test_infer_is_frozen(checkpoint, dataset):
    bag = dataset.split("test")[0]
    before = checkpoint.to_bytes()
    a = checkpoint.infer(bag)
    b = checkpoint.infer(bag)
    assert a == b
    assert checkpoint.to_bytes() == before
    assert abs(sum(a["probabilities"]) - 1.0) < 1e-9
    assert len(a["neighbors"]) == 4
    with pytest.raises(slidegcd.ConfigError):
        checkpoint.infer(bag, conv="gcn")


def test_evaluate_and_round_trip(checkpoint, dataset, tmp_path):
    bags = dataset.split("test")
    metrics = checkpoint.evaluate(bags)
    assert 0.0 <= metrics["accuracy"] <= 1.0
    assert set(metrics["branches"]) == {"graph", "mil"}
    path = tmp_path / "model.sgck"
    checkpoint.save(path)
    loaded = slidegcd.Checkpoint.load(path)
    assert loaded.evaluate(bags) == metrics
    assert loaded.buffer_checksum == checkpoint.buffer_checksum
    with pytest.raises(slidegcd.FormatError):
        slidegcd.Checkpoint.from_bytes(checkpoint.to_bytes()[:100])


def test_bag_files_round_trip(tmp_path):
    emb = np.arange(12, dtype=np.float32).reshape(3, 4)
    bag = slidegcd.PatchBag(emb, label=1, slide_id="s1")
    slidegcd.write_bag(bag, tmp_path / "s1.sgcd")
    back = slidegcd.load_bag(tmp_path / "s1.sgcd")
    np.testing.assert_array_equal(back.embeddings, emb)


def test_hyperedges_match_bruteforce():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 5))
    w = rng.normal(size=(5, 3))
    edges = slidegcd.build_hyperedges(x, w, 4)
    p = x @ w
    d = ((p[:, None, :] - p[None, :, :]) ** 2).sum(-1)
    for i, e in enumerate(edges):
        order = [j for j in np.argsort(d[i], kind="stable") if j != i][:4]
        assert e == [i] + order


def test_config_errors_raise(dataset):
    with pytest.raises(slidegcd.ConfigError):
        slidegcd.train({"L": 31}, dataset)
    with pytest.raises(slidegcd.ConfigError):
        slidegcd.train({"no_such_key": 1}, dataset)


def test_run_cli_in_process(tmp_path):
    code, out, _ = slidegcd.run_cli(["--help"])
    assert code == 0
    assert "train" in out
    code, _, err = slidegcd.run_cli(["train", "--bogus"])
    assert code == 2
    assert err


@pytest.mark.skipif("SLIDEGCD_CLI" not in os.environ, reason="executable path not provided")
def test_executable_generate(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synthetic": SMALL_SPEC}))
    subprocess.run([os.environ["SLIDEGCD_CLI"], "generate", "--config", str(cfg), "--out",
                    str(tmp_path / "data")], check=True, capture_output=True)
    bags = slidegcd.load_manifest(tmp_path / "data" / "test.tsv")
    assert len(bags) == 20
