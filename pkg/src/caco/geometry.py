"""Unit-hypersphere primitives used by every other module.

All quantities live on the unit sphere in R^D: embeddings are rows of
norm 1, similarity is the plain inner product (equal to the cosine for
unit vectors), and gradients destined for a sphere point b are mapped
into its tangent space by the projector T = I - b b^T.

Everything here is a pure function on float64 arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DegenerateVectorError

# Below this norm a vector carries no usable direction information.
DEGENERATE_NORM = 1e-12


def _as_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ConfigurationError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if arr.size < 2:
        raise ConfigurationError(f"{name} must have dimension >= 2, got {arr.size}")
    return arr


def normalize(v) -> np.ndarray:
    """Return v / ||v||_2 as a fresh float64 array.

    Raises DegenerateVectorError when ||v|| <= 1e-12; a near-zero norm
    signals a collapsed or uninitialized embedding and silently
    returning noise would poison everything downstream.
    """
    arr = _as_vector(v, "v")
    norm = float(np.linalg.norm(arr))
    if norm <= DEGENERATE_NORM:
        raise DegenerateVectorError(f"cannot normalize vector with norm {norm:.3e}")
    return arr / norm


def normalize_rows(m) -> np.ndarray:
    """Row-wise normalize a (N, D) matrix onto the unit sphere."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigurationError(f"expected a 2-D matrix, got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms <= DEGENERATE_NORM):
        bad = int(np.argmin(norms))
        raise DegenerateVectorError(
            f"row {bad} has norm {norms[bad]:.3e}, below {DEGENERATE_NORM:.0e}"
        )
    return arr / norms[:, None]


def cosine(u, v) -> float:
    """Inner product of two unit vectors, clamped to [-1, 1].

    The clamp guards downstream acos/comparison logic against the
    1 + epsilon produced by rounding.
    """
    a = _as_vector(u, "u")
    b = _as_vector(v, "v")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def tangent_project(b, z) -> np.ndarray:
    """Project z into the tangent space of the sphere at unit vector b.

    Computes (I - b b^T) z = z - (b . z) b, which is orthogonal to b up
    to rounding and therefore preserves ||b|| to first order when used
    as an update direction.
    """
    bv = _as_vector(b, "b")
    zv = _as_vector(z, "z")
    if bv.shape != zv.shape:
        raise ConfigurationError(f"shape mismatch: b {bv.shape} vs z {zv.shape}")
    return zv - np.dot(bv, zv) * bv
