import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowbox import diffcore as dc
from flowbox.jointembed import (
    JointEmbedConfig,
    JointEmbedder,
    contrastive_loss,
    rerank,
    retrieval_metrics,
    write_retrieval_csv,
)


def _unit(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_two_pair_orthonormal_value():
    e = np.eye(2)
    assert abs(float(contrastive_loss(e, e, 1.0).data) - np.log(1 + np.exp(-1))) < 1e-9


def test_single_pair_zero():
    assert float(contrastive_loss(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), 0.5).data) == 0.0


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        contrastive_loss(np.zeros((0, 3)), np.zeros((0, 3)), 1.0)


@given(st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_symmetry_and_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    a, t = _unit(rng, 6, 4), _unit(rng, 6, 4)
    base = float(contrastive_loss(a, t, 0.7).data)
    assert float(contrastive_loss(t, a, 0.7).data) == pytest.approx(base, abs=1e-12)
    p = rng.permutation(6)
    assert float(contrastive_loss(a[p], t[p], 0.7).data) == pytest.approx(base, abs=1e-12)
    assert base > 0


def test_loss_vanishes_as_tau_shrinks():
    e = np.eye(4)
    assert float(contrastive_loss(e, e, 1e-2).data) < 1e-30


def test_contrastive_gradient_finite_differences():
    rng = np.random.default_rng(0)
    a = dc.Parameter(_unit(rng, 5, 3), name="a")
    t = dc.Parameter(_unit(rng, 5, 3), name="t")
    log_tau = dc.Parameter(np.array(-0.3), name="tau")
    err = dc.finite_diff_check(lambda: contrastive_loss(a, t, dc.exp(log_tau)), [a, t, log_tau], eps=1e-3)
    assert err < 1e-4


def test_retrieval_identity_and_ties():
    e = np.eye(12)
    m = retrieval_metrics(e, e)
    assert m["A2T@1"] == m["T2A@1"] == 1.0
    const = np.tile(np.array([[1.0, 0.0]]), (10, 1))
    m = retrieval_metrics(const, _unit(np.random.default_rng(0), 10, 2))
    assert m["T2A@1"] == pytest.approx(1 / 10)


def test_retrieval_csv(tmp_path):
    e = np.eye(10)
    write_retrieval_csv(retrieval_metrics(e, e), tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].split(",") == ["direction", "k", "recall"] and len(lines) == 7


def _model(seed=0):
    return JointEmbedder(JointEmbedConfig(feat_dim=3, desc_vocab=15, hidden=16, embed_dim=8), np.random.default_rng(seed))


def test_encoders_unit_norm_and_deterministic():
    m = _model()
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(4, 7, 3))
    mask = np.ones((4, 7), bool)
    mask[1, 5:] = False
    e1 = m.encode_sequence(frames, mask).data
    e2 = m.encode_sequence(frames, mask).data
    np.testing.assert_allclose(np.linalg.norm(e1, axis=1), 1.0, atol=1e-6)
    assert e1.tobytes() == e2.tobytes()
    et = m.encode_text(rng.integers(0, 15, size=(4, 4))).data
    np.testing.assert_allclose(np.linalg.norm(et, axis=1), 1.0, atol=1e-6)
    assert float(m.tau().data) == pytest.approx(1.0)


def test_padding_does_not_change_sequence_embedding():
    m = _model()
    x = np.random.default_rng(1).normal(size=(1, 5, 3))
    padded = np.concatenate([x, np.full((1, 3, 3), 9.0)], axis=1)
    mask = np.array([[True] * 5 + [False] * 3])
    np.testing.assert_allclose(m.encode_sequence(x).data, m.encode_sequence(padded, mask).data, atol=1e-12)


def test_rerank_contract():
    m = _model()
    rng = np.random.default_rng(2)
    cands = [rng.normal(size=(6, 3)) for _ in range(5)]
    desc = np.array([1, 6, 10, 13])
    idx, scores = rerank(cands, desc, m)
    assert scores[idx] == scores.max() and len(scores) == 5
    assert rerank(cands[:1], desc, m)[0] == 0
    perm = [3, 1, 4, 0, 2]
    idx2, _ = rerank([cands[i] for i in perm], desc, m)
    assert perm[idx2] == idx
