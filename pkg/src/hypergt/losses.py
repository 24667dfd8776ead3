"""Classification loss, star-expansion structure loss and their combination."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .hypergraph import StarExpansion
from .numerics import LOG_CLAMP, Tensor


@dataclass(frozen=True)
class LossBreakdown:
    l_c: float
    l_s: float
    total: float
    lam: float


def classification_loss(logits, labels, labeled) -> Tensor:
    """Mean negative log-likelihood of the true class over the labeled nodes."""
    labeled = np.asarray(labeled, dtype=np.int64)
    if labeled.size == 0:
        raise ValueError("labeled set is empty")
    logits = nx.as_tensor(logits)
    if labeled.min() < 0 or labeled.max() >= logits.shape[0]:
        raise ValueError("labeled index out of range")
    probs = nx.row_softmax(nx.slice_rows(logits, labeled))
    return nx.cross_entropy_rows(probs, np.asarray(labels)[labeled])


def _support(target) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    if isinstance(target, StarExpansion):
        rows, cols, w = target.edge_list
        return rows, cols, w, target.adjacency.shape[0]
    P = np.asarray(target, dtype=np.float64)
    rows, cols = np.nonzero(P)
    return rows, cols, P[rows, cols], P.shape[0]


def structure_loss(target, attn_list: Sequence) -> Tensor:
    """Cross-entropy between the transition matrix and each layer's attention.

    Sums ``(1/d_i) log A_ij`` over star-expansion edges only, normalised by
    ``(n+m) * L``. ``target`` is a ``StarExpansion`` or a dense transition
    matrix.
    """
    if not attn_list:
        raise ValueError("need at least one attention matrix")
    rows, cols, w, size = _support(target)
    total = None
    for a in attn_list:
        a = nx.as_tensor(a)
        if a.shape != (size, size):
            raise ValueError(f"attention shape {a.shape} does not match transition ({size}, {size})")
        term = nx.weighted_sum(nx.clamped_log(nx.gather(a, rows, cols)), w)
        total = term if total is None else nx.add(total, term)
    return nx.scale(total, -1.0 / (size * len(attn_list)))


def structure_loss_dense(P_s: np.ndarray, attn_list: Sequence[np.ndarray]) -> float:
    """Reference evaluation summing over every (i, j) of the dense matrices."""
    P_s = np.asarray(P_s, dtype=np.float64)
    size = P_s.shape[0]
    acc = 0.0
    for a in attn_list:
        a = a.value if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
        acc += float(np.sum(P_s * np.log(np.maximum(a, LOG_CLAMP))))
    return -acc / (size * len(attn_list))


def total_loss(l_c: float, l_s: float, lam: float) -> LossBreakdown:
    total = l_c + lam * l_s
    for name, v in (("l_c", l_c), ("l_s", l_s), ("total", total)):
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite {name}: {v}")
    return LossBreakdown(l_c=l_c, l_s=l_s, total=total, lam=lam)
