"""Shared-bank InfoNCE loss and its anchor-side gradient.

With both the positive and the negatives drawn from one memory bank,
the loss for an anchor z with positive row j+ collapses to a uniform
softmax cross-entropy over the bank:

    loss(z) = -log p(b_{j+} | z),
    p(b_j | z) = exp(z . b_j / tau) / sum_k exp(z . b_k / tau).

The encoder trains by minimizing the batch sum of this value, so the
gradient with respect to the raw (pre-normalization) anchor output is
provided here; bank-side gradients live in the bank module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import MemoryBank, AssignmentMap, softmax_rows, _check_tau
from .errors import ConsistencyError, DegenerateVectorError
from .geometry import DEGENERATE_NORM

# Probabilities are clamped here before the log so extreme temperatures
# or adversarially aligned banks can never produce -log(0).
PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class LossReport:
    """Batch loss value plus the per-anchor pieces the trainer needs.

    value is the SUM over anchors (in nats, >= 0). per_anchor_probs has
    one softmax row per anchor; anchor_grads holds the gradient of
    `value` with respect to each anchor's pre-normalization embedding.
    For a symmetric loss the rows stack view A first, then view B.
    """

    value: float
    per_anchor_probs: np.ndarray  # (B, C)
    anchor_grads: np.ndarray  # (B, D)


def nce_terms(anchors_raw, candidates: np.ndarray, pos_idx, tau: float):
    """Softmax cross-entropy terms over a candidate matrix.

    anchors_raw: (B, D) raw encoder outputs (any norm > 1e-12).
    candidates:  (C, D) unit rows shared by all anchors, or (B, C, D)
                 per-anchor candidate stacks.
    pos_idx:     (B,) index of the positive candidate per anchor.

    Returns (values (B,), probs (B, C), grads (B, D)) where grads are
    with respect to the raw anchors, i.e. chained through the anchor's
    l2-normalization via (I - z z^T) / ||raw||.
    """
    tau = _check_tau(tau)
    raw = np.atleast_2d(np.asarray(anchors_raw, dtype=np.float64))
    cand = np.asarray(candidates, dtype=np.float64)
    pos = np.atleast_1d(np.asarray(pos_idx, dtype=np.int64))
    b = raw.shape[0]
    n_cand = cand.shape[-2]
    if pos.shape != (b,):
        raise ConsistencyError(f"pos_idx shape {pos.shape} != batch ({b},)")
    if pos.size and (pos.min() < 0 or pos.max() >= n_cand):
        raise ConsistencyError(
            f"positive index out of range [0, {n_cand}): min={pos.min()}, max={pos.max()}"
        )

    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    if np.any(norms <= DEGENERATE_NORM):
        bad = int(np.argmin(norms))
        raise DegenerateVectorError(f"anchor {bad} has norm {norms[bad, 0]:.3e}")
    z = raw / norms

    rows = np.arange(b)
    if cand.ndim == 2:
        logits = z @ cand.T / tau
        probs = softmax_rows(logits)
        grad_z = (probs @ cand - cand[pos]) / tau
    elif cand.ndim == 3:
        logits = np.einsum("bd,bcd->bc", z, cand) / tau
        probs = softmax_rows(logits)
        grad_z = (np.einsum("bc,bcd->bd", probs, cand) - cand[rows, pos]) / tau
    else:
        raise ConsistencyError(f"candidates must be 2-D or 3-D, got shape {cand.shape}")

    values = -np.log(np.clip(probs[rows, pos], PROB_FLOOR, None))
    grad_raw = (grad_z - np.sum(z * grad_z, axis=1, keepdims=True) * z) / norms
    return values, probs, grad_raw


def caco_loss(z, bank: MemoryBank, j_plus: int, tau: float) -> float:
    """-log p(b_{j+} | z) for a single unit anchor against the bank."""
    if not 0 <= int(j_plus) < bank.size:
        raise ConsistencyError(f"positive index {j_plus} out of range [0, {bank.size})")
    values, _, _ = nce_terms(z, bank.entries, [int(j_plus)], tau)
    return float(values[0])


def loss_grad_wrt_anchor(z_raw, bank: MemoryBank, j_plus: int, tau: float) -> np.ndarray:
    """Gradient of caco_loss(normalize(z_raw), ...) with respect to z_raw.

    With z = z_raw / ||z_raw|| the gradient w.r.t. z is
    (1/tau)(sum_j p_j b_j - b_{j+}); the result chains that through the
    normalization as (I - z z^T) / ||z_raw|| applied to it.
    """
    if not 0 <= int(j_plus) < bank.size:
        raise ConsistencyError(f"positive index {j_plus} out of range [0, {bank.size})")
    _, _, grads = nce_terms(z_raw, bank.entries, [int(j_plus)], tau)
    return grads[0]


def batch_loss(anchors_raw, bank: MemoryBank, assignments: AssignmentMap, tau: float) -> LossReport:
    """Summed loss over one view's anchors, with probs and anchor grads."""
    raw = np.atleast_2d(np.asarray(anchors_raw, dtype=np.float64))
    if assignments.bank_size != bank.size:
        raise ConsistencyError(
            f"assignment bank size {assignments.bank_size} != bank size {bank.size}"
        )
    if assignments.batch_size != raw.shape[0]:
        raise ConsistencyError(
            f"assignment batch size {assignments.batch_size} != anchor count {raw.shape[0]}"
        )
    values, probs, grads = nce_terms(raw, bank.entries, assignments.positive_index, tau)
    return LossReport(value=float(values.sum()), per_anchor_probs=probs, anchor_grads=grads)


def symmetric_batch_loss(
    view_a,
    view_b,
    bank: MemoryBank,
    assignments_a: AssignmentMap,
    assignments_b: AssignmentMap,
    tau: float,
) -> LossReport:
    """Two-view loss: half the sum of both one-sided batch losses.

    Each view queries the same pre-update bank with its own assignments.
    Probability rows and anchor gradients stack view A above view B;
    the gradients are halved so they differentiate the reported value.
    """
    a = np.atleast_2d(np.asarray(view_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(view_b, dtype=np.float64))
    if a.shape[0] != b.shape[0]:
        raise ConsistencyError(f"view batch sizes differ: {a.shape[0]} vs {b.shape[0]}")
    ra = batch_loss(a, bank, assignments_a, tau)
    rb = batch_loss(b, bank, assignments_b, tau)
    return LossReport(
        value=0.5 * (ra.value + rb.value),
        per_anchor_probs=np.vstack([ra.per_anchor_probs, rb.per_anchor_probs]),
        anchor_grads=0.5 * np.vstack([ra.anchor_grads, rb.anchor_grads]),
    )
