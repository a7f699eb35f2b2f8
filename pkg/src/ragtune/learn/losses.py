"""Contrastive and KL objectives with closed-form gradients.

A batch is handled on dense matrices restricted to the union of tokens that
occur in it, so every score is an ordinary matrix product and the chain rule
back to the per-token ``g``/``l`` parameters is a pair of scatter-adds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..corpus import BagOfTokens
from ..encoder import EncoderParams, sigmoid, softplus

__all__ = [
    "InfoNCE",
    "info_nce",
    "BatchView",
    "batch_view",
    "LossBreakdown",
    "total_loss",
    "kl_divergence",
    "kl_loss",
]


def _log_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


@dataclass(frozen=True)
class InfoNCE:
    loss: float
    q2d: float
    d2q: float
    grad: np.ndarray  # d loss / d scores, same shape as the score matrix


def info_nce(scores: np.ndarray) -> InfoNCE:
    """Symmetric in-batch InfoNCE on an ``N x 2N`` score matrix.

    Row ``i`` holds query ``i`` against the batch documents, positives in
    columns ``0..N-1`` (column ``i`` is its own positive) followed by the
    ``N`` negatives. The query-to-document term normalises each row over all
    ``2N`` documents; the document-to-query term normalises each positive
    column over the ``N`` queries. Terms are summed over the batch.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] == 0:
        raise ValueError("info_nce needs a non-empty batch")
    n = s.shape[0]
    if s.shape[1] != 2 * n:
        raise ValueError(f"expected an N x 2N score matrix, got {s.shape}")
    eye = np.arange(n)

    lp_rows = _log_softmax(s, axis=1)
    q2d = -float(np.sum(lp_rows[eye, eye]))
    g = np.exp(lp_rows)
    g[eye, eye] -= 1.0

    pos = s[:, :n]
    lp_cols = _log_softmax(pos, axis=0)
    d2q = -float(np.sum(lp_cols[eye, eye]))
    gc = np.exp(lp_cols)
    gc[eye, eye] -= 1.0
    g[:, :n] += gc

    return InfoNCE(q2d + d2q, q2d, d2q, g)


@dataclass(frozen=True)
class BatchView:
    """Dense per-batch encodings over the union of the batch's tokens."""

    token_ids: np.ndarray
    q_counts: np.ndarray
    d_counts: np.ndarray
    q_weights: np.ndarray
    d_weights: np.ndarray
    q_sig: np.ndarray  # d weight / d z, zero off-support
    d_sig: np.ndarray


def _dense(bots: Sequence[BagOfTokens], col: dict[int, int], width: int) -> np.ndarray:
    out = np.zeros((len(bots), width))
    for r, b in enumerate(bots):
        for t, c in zip(b.ids, b.counts):
            out[r, col[int(t)]] = c
    return out


def _side(params: EncoderParams, ids: np.ndarray, counts: np.ndarray):
    mask = counts > 0
    z = params.g[ids][None, :] + params.l[ids][None, :] * np.log1p(counts)
    return np.where(mask, softplus(z), 0.0), np.where(mask, sigmoid(z), 0.0)


def batch_view(
    params: EncoderParams, queries: Sequence[BagOfTokens], docs: Sequence[BagOfTokens]
) -> BatchView:
    ids = np.unique(np.concatenate([b.ids for b in (*queries, *docs)] + [np.zeros(0, dtype=np.int64)]))
    ids = ids.astype(np.int64)
    col = {int(t): j for j, t in enumerate(ids)}
    qc = _dense(queries, col, len(ids))
    dc = _dense(docs, col, len(ids))
    qw, qs = _side(params, ids, qc)
    dw, ds = _side(params, ids, dc)
    return BatchView(ids, qc, dc, qw, dw, qs, ds)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    parametric: float
    semi_query: float  # learned query vs bag-of-tokens documents
    semi_doc: float  # bag-of-tokens query vs learned documents
    grad_g: np.ndarray
    grad_l: np.ndarray

    def terms(self) -> dict[str, float]:
        return {
            "total": self.total,
            "parametric": self.parametric,
            "semi_query": self.semi_query,
            "semi_doc": self.semi_doc,
        }


def _scatter(params, view, d_qw, d_dw):
    """Backpropagate weight gradients on both sides to (g, l)."""
    gg = np.zeros(params.size)
    gl = np.zeros(params.size)
    tq = d_qw * view.q_sig
    td = d_dw * view.d_sig
    gg[view.token_ids] = tq.sum(axis=0) + td.sum(axis=0)
    gl[view.token_ids] = (tq * np.log1p(view.q_counts)).sum(axis=0) + (td * np.log1p(view.d_counts)).sum(axis=0)
    return gg, gl


def total_loss(
    params: EncoderParams,
    queries: Sequence[BagOfTokens],
    positives: Sequence[BagOfTokens],
    negatives: Sequence[BagOfTokens],
    semi_weight: float = 0.5,
) -> LossBreakdown:
    """Parametric InfoNCE plus the two half-weighted semi-parametric terms."""
    n = len(queries)
    if n == 0 or len(positives) != n or len(negatives) != n:
        raise ValueError("a batch needs N queries, N positives and N negatives with N >= 1")
    v = batch_view(params, queries, [*positives, *negatives])

    para = info_nce(v.q_weights @ v.d_weights.T)
    semi_q = info_nce(v.q_weights @ v.d_counts.T)
    semi_d = info_nce(v.q_counts @ v.d_weights.T)

    d_qw = para.grad @ v.d_weights + semi_weight * (semi_q.grad @ v.d_counts)
    d_dw = para.grad.T @ v.q_weights + semi_weight * (semi_d.grad.T @ v.q_counts)
    gg, gl = _scatter(params, v, d_qw, d_dw)
    total = para.loss + semi_weight * semi_q.loss + semi_weight * semi_d.loss
    return LossBreakdown(total, para.loss, semi_q.loss, semi_d.loss, gg, gl)


def kl_divergence(
    retriever_scores: np.ndarray, log_scores: np.ndarray, tau_r: float = 1.0, tau_g: float = 1.0
) -> tuple[float, np.ndarray]:
    """KL(P_gen || P_ret) and its gradient in the retriever scores.

    The generator distribution is a fixed target; no gradient reaches it.
    """
    f = np.asarray(retriever_scores, dtype=np.float64)
    s = np.asarray(log_scores, dtype=np.float64)
    if f.shape != s.shape or f.ndim != 1:
        raise ValueError("score vectors must be 1-d and of equal length")
    if len(f) < 2:
        raise ValueError("kl_loss needs at least two documents")
    if tau_r <= 0 or tau_g <= 0:
        raise ValueError("temperatures must be positive")
    lp_g = _log_softmax(s / tau_g, axis=0)
    lp_r = _log_softmax(f / tau_r, axis=0)
    p_g = np.exp(lp_g)
    live = p_g > 0
    loss = float(np.sum(p_g[live] * (lp_g[live] - lp_r[live])))
    grad = (np.exp(lp_r) - p_g) / tau_r
    return max(loss, 0.0), grad


def kl_loss(
    params: EncoderParams,
    query: BagOfTokens,
    docs: Sequence[BagOfTokens],
    log_scores: Sequence[float],
    tau_r: float = 1.0,
    tau_g: float = 1.0,
) -> LossBreakdown:
    """Distillation loss for one query over its retrieved documents."""
    v = batch_view(params, [query], docs)
    f = (v.q_weights @ v.d_weights.T)[0]
    loss, df = kl_divergence(f, np.asarray(log_scores, dtype=np.float64), tau_r, tau_g)
    d_qw = (df @ v.d_weights)[None, :]
    d_dw = df[:, None] * v.q_weights
    gg, gl = _scatter(params, v, d_qw, d_dw)
    return LossBreakdown(loss, loss, 0.0, 0.0, gg, gl)
