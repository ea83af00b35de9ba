import json
import math

import numpy as np
import pytest

import bangla_t2i as t2i


def test_tokenize_normalises_and_splits():
    assert t2i.tokenize("একটি  লাল বৃত্ত।") == ["একটি", "লাল", "বৃত্ত"]
    # Decomposed and composed forms tokenize alike.
    assert t2i.tokenize("ো") == t2i.tokenize(t2i.nfc("ো"))


def test_split_counts():
    assert t2i.split_counts(11788, 0.7) == (8252, 3536)
    assert sum(t2i.split_counts(240, 0.7)) == 240


def test_fid_closed_form_and_self():
    eye = np.eye(2)
    assert t2i.fid([0.0, 0.0], eye, [3.0, 4.0], eye) == pytest.approx(25.0, abs=1e-9)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 4))
    mu, sigma = t2i.gaussian_stats(x)
    np.testing.assert_allclose(mu, x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(sigma, np.cov(x, rowvar=False), atol=1e-12)
    assert t2i.fid(mu, sigma, mu, sigma) <= 1e-6


def test_inception_score_closed_forms():
    mean, std = t2i.inception_score(np.full((40, 8), 1 / 8), 4)
    assert mean == 1.0 and std == 0.0
    onehot = np.eye(10)[np.arange(100) % 10]
    assert t2i.inception_score(onehot, 1)[0] == pytest.approx(10.0, abs=1e-9)
    with pytest.raises(t2i.StatsError):
        t2i.inception_score(np.full((3, 2), 0.5), 4)


def test_word_context_masks_and_normalises():
    rng = np.random.default_rng(1)
    e = rng.normal(size=(2, 3, 4))
    h = rng.normal(size=(2, 3, 5))
    mask = np.array([[1, 1, 1, 0], [1, 0, 0, 0]], dtype=bool)
    context, alpha = t2i.word_context(e, mask, h)
    assert context.shape == (2, 3, 5) and alpha.shape == (2, 4, 5)
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(alpha[0, 3] == 0.0)
    assert np.all(alpha[1, 0] == 1.0)
    top = t2i.top_attended(alpha, mask, [["a", "b", "c", "d"], ["x", "y", "z", "w"]], 5)
    assert len(top[0]) == 3 and top[1] == [("x", 0, 1.0)]
    scores = [s for _, _, s in top[0]]
    assert scores == sorted(scores, reverse=True)


def test_tensor_roundtrip(tmp_path):
    a = np.arange(24, dtype=float).reshape(2, 3, 4) / 7
    t2i.save_tensor(tmp_path / "a.t2it", a)
    np.testing.assert_array_equal(t2i.load_tensor(tmp_path / "a.t2it"), a)


def test_cli_toygen_and_usage(tmp_path):
    code, out, err = t2i.run(["toygen", "--out", str(tmp_path / "toy"), "--n", "6", "--captions", "2"])
    assert code == 0, err
    assert len(list((tmp_path / "toy" / "images").iterdir())) == 6
    manifest = json.loads((tmp_path / "toy" / "manifest.json").read_text())
    assert manifest["command"] == "toygen"
    assert t2i.run(["toygen", "--out", str(tmp_path / "bad"), "--n", "0"])[0] == 2
    assert t2i.run(["train-damsm", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")])[0] == 3
