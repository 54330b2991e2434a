import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewdiv.losses import (
    ContrastiveBatch,
    DistillPair,
    NonFiniteLogits,
    dino_ce,
    info_nce,
)


def unit(v):
    return v / np.linalg.norm(v)


def make_batch(rng, k, d=8, tau=0.2):
    # Queries and keys are unit-normalized, as the embeddings feeding this
    # loss are; that keeps logits bounded by 1/tau.
    negs = rng.normal(size=(k, d))
    if k:
        negs = negs / np.linalg.norm(negs, axis=1, keepdims=True)
    return ContrastiveBatch(
        q=unit(rng.normal(size=d)),
        k_pos=unit(rng.normal(size=d)),
        k_negs=negs,
        tau=tau,
    )


def test_info_nce_uniform_logits_is_log_k_plus_one():
    # With all keys equal to the query's dual, every logit coincides and the
    # softmax is uniform over K+1 entries, so the loss is exactly ln(K+1).
    d = 6
    q = np.full(d, 0.3)
    k = np.full(d, -0.7)
    for K in (1, 2, 5, 64):
        batch = ContrastiveBatch(q=q, k_pos=k, k_negs=np.tile(k, (K, 1)), tau=0.07)
        loss, _ = info_nce(batch)
        assert loss == pytest.approx(math.log(K + 1.0), abs=1e-12)


def test_info_nce_zero_negatives():
    rng = np.random.default_rng(0)
    batch = make_batch(rng, 0)
    loss, grad = info_nce(batch)
    assert loss == 0.0
    assert np.array_equal(grad, np.zeros_like(batch.q))


def test_info_nce_dominant_positive_drives_loss_down():
    d = 4
    q = np.zeros(d)
    q[0] = 1.0
    k_pos = q * 50.0
    k_negs = -np.tile(q, (3, 1)) * 50.0
    loss, _ = info_nce(ContrastiveBatch(q=q, k_pos=k_pos, k_negs=k_negs, tau=1.0))
    assert loss < 1e-20


def central_difference_grad(batch, h=1e-5):
    # Independent oracle: per-coordinate central differences of the loss.
    grad = np.zeros_like(batch.q)
    for i in range(batch.q.size):
        e = np.zeros_like(batch.q)
        e[i] = h
        plus, _ = info_nce(
            ContrastiveBatch(q=batch.q + e, k_pos=batch.k_pos, k_negs=batch.k_negs, tau=batch.tau)
        )
        minus, _ = info_nce(
            ContrastiveBatch(q=batch.q - e, k_pos=batch.k_pos, k_negs=batch.k_negs, tau=batch.tau)
        )
        grad[i] = (plus - minus) / (2.0 * h)
    return grad


def test_info_nce_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    for _ in range(25):
        batch = make_batch(rng, int(rng.integers(1, 9)), tau=float(rng.uniform(0.07, 1.0)))
        _, grad = info_nce(batch)
        numeric = central_difference_grad(batch)
        denom = max(np.linalg.norm(numeric), 1e-12)
        assert np.linalg.norm(grad - numeric) / denom <= 1e-5


def test_info_nce_stable_for_large_logits():
    d = 4
    q = np.full(d, 100.0)
    k = np.full(d, 100.0)
    batch = ContrastiveBatch(q=q, k_pos=k, k_negs=np.tile(-k, (4, 1)), tau=0.01)
    loss, grad = info_nce(batch)  # raw logits ~ 4e6, still under the cap
    assert math.isfinite(loss) and loss >= 0.0
    assert np.all(np.isfinite(grad))


def test_info_nce_rejects_absurd_magnitudes():
    d = 2
    q = np.full(d, 1e6)
    k = np.full(d, 1e6)
    batch = ContrastiveBatch(q=q, k_pos=k, k_negs=np.zeros((1, d)), tau=1e-4)
    with pytest.raises(NonFiniteLogits):
        info_nce(batch)


def test_contrastive_batch_validation():
    q = np.ones(4)
    with pytest.raises(ValueError):
        ContrastiveBatch(q=q, k_pos=np.ones(3), k_negs=np.ones((2, 4)), tau=0.1)
    with pytest.raises(ValueError):
        ContrastiveBatch(q=q, k_pos=q, k_negs=np.ones((2, 3)), tau=0.1)
    with pytest.raises(ValueError):
        ContrastiveBatch(q=q, k_pos=q, k_negs=np.ones((2, 4)), tau=0.0)
    bad = np.ones(4)
    bad[0] = np.inf
    with pytest.raises(ValueError):
        ContrastiveBatch(q=bad, k_pos=q, k_negs=np.ones((2, 4)), tau=0.1)


@given(st.integers(1, 16), st.integers(0, 2**32 - 1), st.floats(0.02, 2.0))
@settings(max_examples=100, deadline=None)
def test_info_nce_nonnegative_and_shift_structure(k, seed, tau):
    rng = np.random.default_rng(seed)
    batch = make_batch(rng, k, tau=tau)
    loss, grad = info_nce(batch)
    assert math.isfinite(loss)
    assert loss >= 0.0 or loss > -1e-12
    assert grad.shape == batch.q.shape


def softmax(z):
    m = z.max()
    e = np.exp(z - m)
    return e / e.sum()


def test_dino_ce_known_value():
    # Hand oracle: p = (0.5, 0.5), log q = log(0.25, 0.75):
    # loss = -(0.5 ln 0.25 + 0.5 ln 0.75).
    pair = DistillPair(
        p_teacher=np.array([0.5, 0.5]),
        log_p_student=np.log(np.array([0.25, 0.75])),
    )
    expected = -(0.5 * math.log(0.25) + 0.5 * math.log(0.75))
    assert dino_ce(pair) == pytest.approx(expected, abs=1e-12)


def test_dino_ce_matching_distributions_equals_entropy():
    rng = np.random.default_rng(1)
    p = softmax(rng.normal(size=6))
    pair = DistillPair(p_teacher=p, log_p_student=np.log(p))
    entropy = -float((p * np.log(p)).sum())
    assert dino_ce(pair) == pytest.approx(entropy, abs=1e-12)


@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
@settings(max_examples=100)
def test_dino_ce_gibbs_inequality(k, seed):
    # Cross-entropy H(p, q) >= H(p), equality iff q == p.
    rng = np.random.default_rng(seed)
    p = softmax(rng.normal(size=k))
    q = softmax(rng.normal(size=k))
    ce = dino_ce(DistillPair(p_teacher=p, log_p_student=np.log(q)))
    entropy = -float((p * np.log(p)).sum())
    assert ce >= entropy - 1e-12


def test_dino_ce_zero_teacher_mass_ignores_student_inf():
    pair = DistillPair(
        p_teacher=np.array([1.0, 0.0]),
        log_p_student=np.array([0.0, -np.inf]),
    )
    assert dino_ce(pair) == 0.0


def test_distill_pair_validation():
    with pytest.raises(ValueError):
        DistillPair(p_teacher=np.array([0.7, 0.7]), log_p_student=np.log([0.5, 0.5]))
    with pytest.raises(ValueError):
        DistillPair(p_teacher=np.array([1.5, -0.5]), log_p_student=np.log([0.5, 0.5]))
    with pytest.raises(ValueError):
        DistillPair(p_teacher=np.array([0.5, 0.5]), log_p_student=np.array([0.1, -0.5]))
    with pytest.raises(ValueError):
        # Does not logsumexp to zero.
        DistillPair(p_teacher=np.array([0.5, 0.5]), log_p_student=np.array([-3.0, -3.0]))
    with pytest.raises(ValueError):
        DistillPair(p_teacher=np.array([0.5, 0.5]), log_p_student=np.array([-np.inf, -np.inf]))
