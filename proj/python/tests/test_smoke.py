import math
import os
import subprocess

import numpy as np
import pytest

import scot


def test_normalize_and_logsumexp():
    v = scot.l2_normalize(np.array([3.0, 4.0]))
    assert np.allclose(v, [0.6, 0.8])
    assert scot.logsumexp(np.array([0.0, 0.0])) == pytest.approx(math.log(2))
    assert scot.logsumexp(np.array([1000.0, 1000.0])) == pytest.approx(1000 + math.log(2))


def test_errors_carry_kind_and_exit_code():
    with pytest.raises(scot.ScotError) as info:
        scot.l2_normalize(np.zeros(3))
    assert info.value.kind == "ZeroVector"
    assert info.value.exit_code == 4


def test_total_loss_single_pair():
    e1 = np.array([[1.0, 0.0, 0.0]])
    r = scot.total_loss(e1, e1, np.array([[0.0, 1.0, 0.0]]))
    assert r["total"] == pytest.approx(-10.0)
    assert r["grad"].shape == (1, 3)
    assert r["neg_doubleprime"] == pytest.approx(r["neg_prime"] + r["caption_neg"])


def test_clip_probe_utility():
    i2 = np.eye(2)
    assert scot.clip_i2t_loss(i2, i2, 1.0) == pytest.approx(math.log(1 + math.exp(-1)))


def test_compose_and_checkpoint_round_trip(tmp_path):
    params = scot.init_params(8, seed=3)
    assert (params.d, params.p, params.h) == (8, 32, 64)
    rng = np.random.default_rng(0)
    v = rng.normal(size=8).astype(np.float32)
    t = rng.normal(size=8).astype(np.float32)
    v /= np.linalg.norm(v)
    t /= np.linalg.norm(t)
    q, s = scot.compose_query(params, v, t)
    assert abs(np.linalg.norm(q) - 1) < 1e-6
    assert 0 < s < 1

    path = tmp_path / "p.ckpt"
    scot.save_checkpoint(params, path)
    back = scot.load_checkpoint(path)
    assert back == params
    q2, s2 = scot.compose_query(back, v, t)
    assert np.array_equal(q, q2) and s == s2
    with pytest.raises(scot.ScotError):
        scot.load_checkpoint(path, expected_dim=16)


def test_table_round_trip_and_search(tmp_path):
    rng = np.random.default_rng(1)
    m = rng.normal(size=(20, 6)).astype(np.float32)
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    ids = [f"g{i:03d}" for i in range(20)]
    path = tmp_path / "g.semb"
    scot.write_table(path, ids, m, "unit-test")
    ids2, m2, tag = scot.read_table(path)
    assert ids2 == ids and tag == "unit-test"
    assert np.array_equal(m, m2)

    index = scot.GalleryIndex(ids, m)
    top = index.search(m[7], 3)
    assert top[0][0] == "g007"
    assert top[0][1] == pytest.approx(1.0, abs=1e-6)
    scores = m @ m[7]
    assert [i for i, _ in top] == [ids[j] for j in np.argsort(-scores, kind="stable")[:3]]
    assert index.search(m[7], 3, exclude="g007")[0][0] != "g007"


def test_recall_at_k():
    gt = {"a": "t", "b": "t", "c": "t"}
    ranked = {
        "a": ["t"] + [f"x{i}" for i in range(11)],
        "b": [f"x{i}" for i in range(10)] + ["t"],
        "c": ["x0", "x1", "t"],
    }
    assert scot.recall_at_k(ranked, gt, 10) == pytest.approx(2 / 3)


@pytest.mark.skipif("SCOT_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_probe_prefers_matched_pairs(tmp_path):
    rng = np.random.default_rng(2)
    img = rng.normal(size=(10, 16)).astype(np.float32)
    img /= np.linalg.norm(img, axis=1, keepdims=True)
    txt = img + 0.05 * rng.normal(size=img.shape).astype(np.float32)
    txt /= np.linalg.norm(txt, axis=1, keepdims=True)
    ids = [f"i{k}" for k in range(10)]
    scot.write_table(tmp_path / "img.semb", ids, img, "enc")
    scot.write_table(tmp_path / "txt.semb", ids, txt, "enc")
    scot.write_table(tmp_path / "shuf.semb", ids, txt[np.roll(np.arange(10), 3)], "enc")

    def probe(texts):
        out = subprocess.run(
            [os.environ["SCOT_CLI"], "probe", "--images", str(tmp_path / "img.semb"), "--texts", str(texts)],
            check=True, capture_output=True, text=True,
        ).stdout
        return float(out.strip().split("=")[1])

    assert probe(tmp_path / "txt.semb") < probe(tmp_path / "shuf.semb")
