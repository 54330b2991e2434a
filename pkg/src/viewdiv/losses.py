"""Reference implementations of the two training objectives.

These exist to pin down the loss semantics the crop configurations feed into:
the contrastive InfoNCE objective with one positive key, and the distillation
cross-entropy between teacher probabilities and student log-probabilities.
Both are computed in numerically stable form with float64 throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

LOGIT_MAGNITUDE_LIMIT = 1e8


class NonFiniteLogits(ArithmeticError):
    """Pre-stabilization logit magnitudes exceeded the supported range."""


@dataclass(frozen=True)
class ContrastiveBatch:
    """One query against one positive key and K negative keys."""

    q: np.ndarray
    k_pos: np.ndarray
    k_negs: np.ndarray  # shape (K, D); K may be 0
    tau: float

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=np.float64)
        k_pos = np.asarray(self.k_pos, dtype=np.float64)
        k_negs = np.asarray(self.k_negs, dtype=np.float64)
        if q.ndim != 1 or q.size == 0:
            raise ValueError(f"q must be a nonempty vector, got shape {q.shape}")
        if k_pos.shape != q.shape:
            raise ValueError(f"k_pos shape {k_pos.shape} does not match q shape {q.shape}")
        if k_negs.ndim != 2 or k_negs.shape[1] != q.size:
            raise ValueError(
                f"k_negs must have shape (K, {q.size}), got {k_negs.shape}"
            )
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")
        for name, v in (("q", q), ("k_pos", k_pos), ("k_negs", k_negs)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k_pos", k_pos)
        object.__setattr__(self, "k_negs", k_negs)


def info_nce(batch: ContrastiveBatch) -> Tuple[float, np.ndarray]:
    """Contrastive loss and its analytic gradient with respect to the query.

        loss = -log( exp(q.k+ / tau) / (exp(q.k+ / tau) + sum_i exp(q.k-_i / tau)) )

    evaluated as logsumexp(z) - z_pos over the stacked logits. The gradient is
    grad_q = ((p_pos - 1) k+ + sum_i p_i k-_i) / tau with p = softmax(z).
    With zero negatives the loss is exactly 0 and the gradient vanishes.
    """
    logits = np.concatenate(([batch.q @ batch.k_pos], batch.k_negs @ batch.q)) / batch.tau
    if np.max(np.abs(logits)) > LOGIT_MAGNITUDE_LIMIT:
        raise NonFiniteLogits(
            f"logit magnitude {np.max(np.abs(logits)):.3g} exceeds {LOGIT_MAGNITUDE_LIMIT:.0e}"
        )
    m = float(logits.max())
    lse = m + math.log(float(np.exp(logits - m).sum()))
    loss = lse - float(logits[0])
    p = np.exp(logits - lse)
    grad_q = ((p[0] - 1.0) * batch.k_pos + p[1:] @ batch.k_negs) / batch.tau
    return loss, grad_q


@dataclass(frozen=True)
class DistillPair:
    """Teacher probabilities against student log-probabilities."""

    p_teacher: np.ndarray
    log_p_student: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.p_teacher, dtype=np.float64)
        lq = np.asarray(self.log_p_student, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or lq.shape != p.shape:
            raise ValueError(
                f"expected matching nonempty vectors, got {p.shape} and {lq.shape}"
            )
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("p_teacher must be finite and nonnegative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"p_teacher must sum to 1 within 1e-9, got {p.sum()!r}")
        if np.any(lq > 1e-12) or np.any(np.isnan(lq)):
            raise ValueError("log_p_student entries must be <= 0")
        m = float(lq.max())
        lse = m + math.log(float(np.exp(lq - m).sum())) if math.isfinite(m) else m
        if abs(lse) > 1e-6:
            raise ValueError(f"log_p_student must logsumexp to 0 within 1e-6, got {lse!r}")
        object.__setattr__(self, "p_teacher", p)
        object.__setattr__(self, "log_p_student", lq)


def dino_ce(pair: DistillPair) -> float:
    """Distillation cross-entropy -sum_k p_teacher[k] * log_p_student[k].

    Entries where the teacher assigns zero mass contribute zero even if the
    student log-probability is -inf there.
    """
    p = pair.p_teacher
    lq = pair.log_p_student
    with np.errstate(invalid="ignore"):
        terms = np.where(p > 0.0, p * lq, 0.0)
    return float(-terms.sum())
