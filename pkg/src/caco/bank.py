"""The shared learnable memory bank.

The bank is a K x D matrix of unit rows holding the candidate positives
AND negatives for every anchor in a mini-batch. Rows are free parameters:
given an anchor z with positive row j+, the cooperative direction for
row j+ is (1/tau) * (1 - p) * T z and every other row j gets the
adversarial direction (1/tau) * p * T z, where p is the softmax
probability of that row being positive to z and T = I - b b^T keeps the
step tangent to the sphere. Minimizing on the positive pulls it toward
the anchor; maximizing on the negatives pushes them toward the anchor
too, making them harder. Rows are renormalized after every update.

Also provides the FIFO-queue and fixed-bank baseline behaviors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    ConsistencyError,
    DegenerateVectorError,
    ModeError,
    NumericalFaultError,
)
from .geometry import normalize_rows

# How each bank mode is updated:
#   caco             cooperative + adversarial gradient steps
#   adversarial_only adversarial gradient steps only
#   queue            FIFO replacement of the oldest rows
#   fixed            never updated
BANK_MODES = ("caco", "adversarial_only", "queue", "fixed")
GRADIENT_MODES = ("caco", "adversarial_only")

UNIT_TOL = 1e-6


@dataclass
class MemoryBank:
    """K unit rows plus the optimizer momentum state for each row."""

    entries: np.ndarray  # (K, D), unit rows
    velocity: np.ndarray  # (K, D), all-zero at init
    mode: str = "caco"

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] < 2:
            raise ConfigurationError(
                f"bank needs a (K>=2, D) entry matrix, got shape {self.entries.shape}"
            )
        if self.velocity.shape != self.entries.shape:
            raise ConfigurationError(
                f"velocity shape {self.velocity.shape} != entries shape {self.entries.shape}"
            )
        if self.mode not in BANK_MODES:
            raise ConfigurationError(
                f"unknown bank mode {self.mode!r}; valid: {', '.join(BANK_MODES)}"
            )
        norms = np.linalg.norm(self.entries, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise ConfigurationError(
                f"bank row {bad} has norm {norms[bad]:.8f}, not unit within {UNIT_TOL:.0e}"
            )

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class AssignmentMap:
    """Per-anchor positive bank index and the partition it induces.

    For every bank row j the mini-batch splits into the cooperative set
    (anchors whose positive is j) and the adversarial set (all others);
    the two sets are disjoint and cover the batch by construction.
    """

    positive_index: np.ndarray  # (B,) int64
    bank_size: int

    def __post_init__(self):
        idx = np.asarray(self.positive_index, dtype=np.int64)
        object.__setattr__(self, "positive_index", idx)
        if idx.ndim != 1:
            raise ConsistencyError(f"positive_index must be 1-D, got shape {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= self.bank_size):
            raise ConsistencyError(
                f"positive index out of range [0, {self.bank_size}): "
                f"min={idx.min()}, max={idx.max()}"
            )

    @property
    def batch_size(self) -> int:
        return self.positive_index.size

    def cooperative_anchors(self, row: int) -> np.ndarray:
        """Anchor indices for which `row` is the positive."""
        return np.flatnonzero(self.positive_index == row)

    def adversarial_anchors(self, row: int) -> np.ndarray:
        """Anchor indices for which `row` is a negative."""
        return np.flatnonzero(self.positive_index != row)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-logit subtraction for overflow safety."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_tau(tau: float) -> float:
    if not np.isfinite(tau) or tau <= 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")
    return float(tau)


def positive_probabilities(z, bank: MemoryBank, tau: float) -> np.ndarray:
    """Probability of each bank row being the positive for anchor z.

    p_j = exp(z . b_j / tau) / sum_k exp(z . b_k / tau). At tau = 0.08
    raw exponentials reach e^12.5, so the softmax subtracts the max
    logit first.
    """
    tau = _check_tau(tau)
    zv = np.asarray(z, dtype=np.float64)
    return softmax_rows(bank.entries @ zv / tau)


def positive_probability_rows(anchors, bank: MemoryBank, tau: float) -> np.ndarray:
    """positive_probabilities for a whole (B, D) anchor batch at once."""
    tau = _check_tau(tau)
    a = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    return softmax_rows(a @ bank.entries.T / tau)


def assign_mpp(key, bank: MemoryBank, tau: float) -> int:
    """Index of the Most Probable Positive for a key embedding.

    argmax_j p(b_j | key) = argmax_j key . b_j since the softmax is
    monotone in the logit at fixed tau; ties resolve to the lowest
    index. Choosing the row with maximal p minimizes the cooperative
    step 1 - p, keeping positive assignments as stable as possible.
    """
    _check_tau(tau)
    kv = np.asarray(key, dtype=np.float64)
    return int(np.argmax(bank.entries @ kv))


def assign_mpp_batch(keys, bank: MemoryBank) -> np.ndarray:
    """Vectorized MPP assignment for a (B, D) key matrix."""
    k = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    return np.argmax(k @ bank.entries.T, axis=1).astype(np.int64)


def tangent_scatter(bank: MemoryBank, anchors: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Accumulate weighted anchors into per-row tangent directions.

    Row j of the result is T_j ( sum_i weights[i, j] * anchors[i] ).
    Since T_j is constant per row, projecting the weighted sum equals
    summing the projections. Fixed matmul reduction order keeps the
    result bit-reproducible.
    """
    a = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (a.shape[0], bank.size):
        raise ConsistencyError(
            f"weights shape {w.shape} != (batch {a.shape[0]}, bank {bank.size})"
        )
    s = w.T @ a  # (K, D)
    radial = np.sum(s * bank.entries, axis=1, keepdims=True)
    return s - radial * bank.entries


def accumulate_bank_gradient(anchors, assignments: AssignmentMap, bank: MemoryBank, tau: float) -> np.ndarray:
    """Ascent-direction matrix for one mini-batch of anchors.

    Row j = sum over cooperative anchors of (1/tau)(1 - p_j) T_j z
          + sum over adversarial anchors of (1/tau) p_j T_j z,
    with p_j = p(b_j | z). The positive row of an anchor receives only
    its cooperative term (it cannot simultaneously be that anchor's
    negative). The learning rate is applied in apply_bank_update.
    """
    tau = _check_tau(tau)
    a = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    if assignments.bank_size != bank.size:
        raise ConsistencyError(
            f"assignment bank size {assignments.bank_size} != bank size {bank.size}"
        )
    if assignments.batch_size != a.shape[0]:
        raise ConsistencyError(
            f"assignment batch size {assignments.batch_size} != anchor count {a.shape[0]}"
        )
    if a.shape[0] == 0:
        return np.zeros_like(bank.entries)

    probs = positive_probability_rows(a, bank, tau)
    rows = np.arange(a.shape[0])
    weights = probs.copy()
    weights[rows, assignments.positive_index] = 1.0 - probs[rows, assignments.positive_index]
    return tangent_scatter(bank, a, weights) / tau


def apply_bank_update(bank: MemoryBank, direction: np.ndarray, lr: float, momentum: float) -> MemoryBank:
    """Momentum-SGD ascent step on the bank rows, then renormalize.

    velocity <- momentum * velocity + direction
    entries  <- normalize_rows(entries + lr * velocity)

    No weight decay. The momentum buffer is not re-projected after the
    renormalization; fresh gradients are tangent, which bounds drift.
    Updates are transactional: a non-finite direction or a collapsed
    row aborts before anything is written.
    """
    if bank.mode not in GRADIENT_MODES:
        raise ModeError(f"bank mode {bank.mode!r} does not accept gradient updates")
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != bank.entries.shape:
        raise ConfigurationError(
            f"direction shape {d.shape} != bank shape {bank.entries.shape}"
        )
    if not (np.isfinite(lr) and lr > 0):
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    if not (0.0 <= momentum < 1.0):
        raise ConfigurationError(f"momentum must be in [0, 1), got {momentum}")
    if not np.all(np.isfinite(d)):
        raise NumericalFaultError("non-finite values in bank update direction; update aborted")

    new_velocity = momentum * bank.velocity + d
    try:
        new_entries = normalize_rows(bank.entries + lr * new_velocity)
    except DegenerateVectorError as exc:
        raise NumericalFaultError(f"bank update collapsed a row: {exc}") from exc
    bank.velocity = new_velocity
    bank.entries = new_entries
    return bank


def init_bank(encoder_outputs, k: int, rng_seed, dim: int | None = None, mode: str = "caco") -> MemoryBank:
    """Build a bank from encoder outputs over randomly drawn samples.

    The first min(len(outputs), k) rows copy the given unit embeddings
    in order; any remainder is filled with normalized isotropic
    Gaussian draws from the seeded generator. Velocity starts at zero.
    """
    if k < 2:
        raise ConfigurationError(f"bank size must be >= 2, got {k}")
    outputs = np.asarray(encoder_outputs, dtype=np.float64)
    if outputs.size == 0:
        if dim is None:
            raise ConfigurationError("dim is required when no encoder outputs are given")
        outputs = outputs.reshape(0, dim)
    if outputs.ndim != 2:
        raise ConfigurationError(f"encoder outputs must be (N, D), got shape {outputs.shape}")
    if dim is not None and outputs.shape[1] != dim:
        raise ConfigurationError(f"outputs have dim {outputs.shape[1]}, expected {dim}")

    n = min(outputs.shape[0], k)
    head = outputs[:n]
    norms = np.linalg.norm(head, axis=1) if n else np.empty(0)
    if n and np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ConfigurationError("encoder outputs used for bank init must be unit-norm")

    if n < k:
        rng = np.random.default_rng(rng_seed)
        filler = normalize_rows(rng.standard_normal((k - n, outputs.shape[1])))
        entries = np.vstack([head, filler])
    else:
        entries = head.copy()
    return MemoryBank(entries=entries, velocity=np.zeros_like(entries), mode=mode)


def enqueue_fifo(bank: MemoryBank, keys) -> MemoryBank:
    """Evict the oldest rows and append new keys (queue-mode banks only)."""
    if bank.mode != "queue":
        raise ModeError(f"enqueue_fifo requires a queue-mode bank, got mode {bank.mode!r}")
    k = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    if k.size == 0:
        return bank
    if k.shape[0] > bank.size:
        raise ConfigurationError(
            f"cannot enqueue {k.shape[0]} keys into a bank of size {bank.size}"
        )
    if k.shape[1] != bank.dim:
        raise ConfigurationError(f"key dim {k.shape[1]} != bank dim {bank.dim}")
    n = k.shape[0]
    bank.entries = np.vstack([bank.entries[n:], k])
    bank.velocity = np.vstack([bank.velocity[n:], np.zeros((n, bank.dim))])
    return bank
