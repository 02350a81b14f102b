"""Construction of the F x k feature-embedding matrices.

Six strategies are supported.  The random ones (semi_orthogonal,
random_selection, gaussian) share a single global matrix across all feature
map locations; the eigenvector strategies are data dependent and produce one
matrix per location (see gaussian.fit), which is why they are restricted to
moderate feature sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import ValidationError

STRATEGY_FULL = "full"
STRATEGY_SEMI_ORTHOGONAL = "semi_orthogonal"
STRATEGY_RANDOM_SELECTION = "random_selection"
STRATEGY_GAUSSIAN = "gaussian"
STRATEGY_EIGEN_LOWER = "eigen_lower"
STRATEGY_EIGEN_HIGHER = "eigen_higher"

STRATEGIES = (
    STRATEGY_FULL,
    STRATEGY_SEMI_ORTHOGONAL,
    STRATEGY_RANDOM_SELECTION,
    STRATEGY_GAUSSIAN,
    STRATEGY_EIGEN_LOWER,
    STRATEGY_EIGEN_HIGHER,
)
EIGEN_STRATEGIES = (STRATEGY_EIGEN_LOWER, STRATEGY_EIGEN_HIGHER)

# Strategies whose columns are orthonormal by construction.
ORTHONORMAL_STRATEGIES = tuple(s for s in STRATEGIES if s != STRATEGY_GAUSSIAN)

# Per-location eigendecompositions at F x F; beyond this the memory and
# O(H*W*F^3) cost are not worth supporting.
EIGEN_MAX_F = 512

SEMI_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class EmbeddingMatrix:
    """A single F x k projection shared by every feature-map location."""

    w: np.ndarray
    strategy: str
    seed: int | None
    f: int
    k: int

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown embedding strategy {self.strategy!r}")
        if self.w.shape != (self.f, self.k):
            raise ValidationError(f"embedding shape {self.w.shape} != ({self.f}, {self.k})")
        if not 1 <= self.k <= self.f:
            raise ValidationError(f"need 1 <= k <= F, got k={self.k}, F={self.f}")


@dataclass(frozen=True)
class EmbeddingGrid:
    """One F x k projection per location of an H x W feature map."""

    w: np.ndarray  # (grid_h, grid_w, f, k)
    strategy: str
    grid_h: int
    grid_w: int
    f: int
    k: int

    def __post_init__(self):
        if self.w.shape != (self.grid_h, self.grid_w, self.f, self.k):
            raise ValidationError(
                f"embedding grid shape {self.w.shape} != "
                f"({self.grid_h}, {self.grid_w}, {self.f}, {self.k})"
            )


def _check_dims(f: int, k: int) -> None:
    if not 1 <= k <= f:
        raise ValidationError(f"need 1 <= k <= F, got k={k}, F={f}")


def semi_orthogonal(f: int, k: int, seed: int) -> EmbeddingMatrix:
    """Haar-distributed matrix with orthonormal columns.

    QR of an i.i.d. Gaussian matrix, with each column of Q flipped by the sign
    of the matching diagonal of R (sign(0) counts as +1).  The sign correction
    is what makes the distribution uniform over semi-orthogonal matrices
    rather than biased by the factorization's sign convention.
    """
    _check_dims(f, k)
    omega = linalg.gaussian_matrix(f, k, seed)
    q, r = linalg.reduced_qr(omega)
    signs = np.where(np.diag(r) >= 0.0, 1.0, -1.0)
    return EmbeddingMatrix(q * signs, STRATEGY_SEMI_ORTHOGONAL, seed, f, k)


def random_selection(f: int, k: int, seed: int) -> EmbeddingMatrix:
    """k distinct identity columns, sampled uniformly without replacement."""
    _check_dims(f, k)
    idx = linalg.rng_from_seed(seed).permutation(f)[:k]
    w = np.zeros((f, k))
    w[idx, np.arange(k)] = 1.0
    return EmbeddingMatrix(w, STRATEGY_RANDOM_SELECTION, seed, f, k)


def selected_indices(emb: EmbeddingMatrix) -> np.ndarray:
    """Feature indices picked by a random_selection embedding, column order."""
    if emb.strategy != STRATEGY_RANDOM_SELECTION:
        raise ValidationError("selected_indices only applies to random_selection")
    return np.argmax(emb.w, axis=0)


def gaussian_random(f: int, k: int, seed: int) -> EmbeddingMatrix:
    """Raw Gaussian entries, no orthogonalization (ablation baseline)."""
    _check_dims(f, k)
    return EmbeddingMatrix(linalg.gaussian_matrix(f, k, seed), STRATEGY_GAUSSIAN, seed, f, k)


def full_embedding(f: int) -> EmbeddingMatrix:
    """Identity projection: scores reduce to the unembedded distances."""
    if f < 1:
        raise ValidationError(f"need F >= 1, got {f}")
    return EmbeddingMatrix(np.eye(f), STRATEGY_FULL, None, f, f)


def eigen_embedding(c: np.ndarray, k: int, which: str) -> EmbeddingMatrix:
    """Eigenvectors of the k smallest ('lower') or largest ('higher') eigenvalues."""
    values, vectors = linalg.sym_eig(c)
    f = vectors.shape[0]
    _check_dims(f, k)
    if which == "lower":
        w, strategy = vectors[:, :k], STRATEGY_EIGEN_LOWER
    elif which == "higher":
        w, strategy = vectors[:, f - k:], STRATEGY_EIGEN_HIGHER
    else:
        raise ValidationError(f"which must be 'lower' or 'higher', got {which!r}")
    return EmbeddingMatrix(np.ascontiguousarray(w), strategy, None, f, k)


def orthonormality_defect(w: np.ndarray) -> float:
    """max |W^T W - I|; ~0 for every strategy except the Gaussian one."""
    k = w.shape[1]
    return float(np.abs(w.T @ w - np.eye(k)).max())


def projection_rank(s: np.ndarray, rel_threshold: float = 1e-4) -> int:
    """Effective rank of an embedded covariance: eigenvalues above
    rel_threshold times the largest one."""
    values = np.linalg.eigvalsh(np.asarray(s, dtype=np.float64))
    top = float(values.max(initial=0.0))
    if top <= 0.0:
        return 0
    return int((values > rel_threshold * top).sum())
