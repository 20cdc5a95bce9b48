import json
import math

import numpy as np
import pytest

import asft


def test_projection_examples():
    v = np.eye(2) / math.sqrt(2.0)
    proj, orth = asft.project(v, np.ones((2, 2)))
    np.testing.assert_allclose(proj, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(orth, [[0, 1], [1, 0]], atol=1e-12)
    e11 = np.zeros((2, 2))
    e11[0, 0] = 1.0
    x = np.zeros((2, 2))
    x[0, 1] = 2.0
    assert asft.penalty(e11, x) == pytest.approx(4.0)


def test_projection_matches_numpy_oracle():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(5, 4))
    x = rng.normal(size=(5, 4))
    vhat = v / np.linalg.norm(v)
    expect = np.sum(x * vhat) * vhat
    proj, orth = asft.project(v, x)
    np.testing.assert_allclose(proj, expect, atol=1e-12)
    u = np.linalg.svd(v)[0][:, :2]
    proj_c, _ = asft.project(v, x, mode="colspace", k=2)
    np.testing.assert_allclose(proj_c, u @ u.T @ x, atol=1e-10)


def test_degenerate_anchor_raises():
    with pytest.raises(asft.AsftError, match="degenerate-anchor"):
        asft.project(np.zeros((2, 2)), np.ones((2, 2)))


def test_checkpoint_round_trip(tmp_path):
    w = np.arange(6, dtype=float).reshape(2, 3)
    b = np.array([0.5, -1.5])
    path = tmp_path / "m.ckpt"
    asft.save_checkpoint([("w", w), ("b", b)], path, "toy")
    tensors, meta = asft.load_checkpoint(path)
    assert list(tensors) == ["w", "b"]
    np.testing.assert_array_equal(tensors["w"], w)
    np.testing.assert_array_equal(tensors["b"], b)
    assert meta["model_kind"] == "toy"


def test_mix_poison_counts():
    assert asft.mix_poison_counts(0, 0.1, 1000, 1) == (900, 100)
    assert asft.mix_poison_counts(0, 0.0, 50, 1) == (50, 0)


def test_epl():
    safety = [1.0 if abs(a) <= 0.3 + 1e-12 else 0.0 for a in np.linspace(-1, 1, 21)]
    value, tau = asft.epl(safety)
    assert value == pytest.approx(0.3)
    assert tau == pytest.approx(0.9)
    with pytest.raises(asft.AsftError, match="undefined-epl"):
        asft.epl(safety, tau=1.5)


def test_cli_pipeline(tmp_path):
    corpus = str(tmp_path / "corpus")
    base = str(tmp_path / "base.ckpt")
    aligned = str(tmp_path / "aligned.ckpt")
    assert asft.run_cli(["gen-data", "--seed", "2", "--out", corpus])[0] == 0
    assert asft.run_cli(["train-base", "--data", corpus, "--out", base])[0] == 0
    code, _, err = asft.run_cli(
        ["align", "--base", base, "--data", corpus, "--epochs", "2", "--n", "200", "--out", aligned])
    assert code == 0, err
    code, out, _ = asft.run_cli(["eval", aligned, "--data", corpus])
    assert code == 0
    report = json.loads(out)
    assert {"hs", "fa"} <= set(report)
    direct = asft.evaluate(aligned, corpus)
    assert direct["hs"] == report["hs"]
    assert direct["fa"] == report["fa"]


def test_cli_error_is_json():
    code, _, err = asft.run_cli(["eval", "/nonexistent.ckpt", "--data", "/nonexistent"])
    assert code != 0
    assert json.loads(err)["error"] == "io"
