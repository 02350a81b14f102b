"""Deterministic dense linear-algebra kernels.

Everything downstream (embeddings, per-location Gaussian fits, the
numerical-certification suite) is built on the routines here: seeded Gaussian
matrices, reduced QR, symmetric eigendecomposition, Cholesky factor/solve and
matrix norms.  All arithmetic is float64 even though feature files are
float32; Cholesky on near-singular embedded covariances needs the headroom.

Random normal deviates come from numpy's PCG64 generator with the ziggurat
normal transform; the name is recorded in model files so a fitted model pins
its randomness source.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dtrtri

from .errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    NotSymmetric,
    RankDeficient,
)

PRNG_NAME = "pcg64-ziggurat"

SYMMETRY_RTOL = 1e-10
QR_RANK_RTOL = 1e-12


class EigenDecomposition(NamedTuple):
    """Eigenvalues ascending, eigenvector columns aligned to them."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def rng_from_seed(seed: int) -> np.random.Generator:
    """Generator for a 64-bit seed; pure function of the seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_seed(seed: int, *indices: int) -> int:
    """Stable 64-bit child seed for (master seed, trial/stream indices)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in indices))
    return int(ss.generate_state(1, np.uint64)[0])


def gaussian_matrix(rows: int, cols: int, seed: int) -> np.ndarray:
    """(rows, cols) matrix of i.i.d. standard normals, deterministic in seed."""
    if rows < 1 or cols < 1:
        raise DimensionMismatch(f"gaussian_matrix needs positive dims, got {rows}x{cols}")
    return rng_from_seed(seed).standard_normal((rows, cols))


def reduced_qr(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR of a tall matrix: q (m, n) orthonormal columns, r (n, n) upper.

    Normalized to the positive-diagonal-R convention (column signs of q and
    row signs of r flipped together; a zero diagonal keeps its sign).  This
    is the sign correction that makes q of a Gaussian matrix Haar
    distributed.  Raises RankDeficient when a diagonal element of r falls
    below 1e-12 times the largest column norm, signalling degenerate input.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise DimensionMismatch(f"reduced_qr needs rows >= cols, got {a.shape}")
    q, r = np.linalg.qr(a, mode="reduced")
    signs = np.where(np.diag(r) >= 0.0, 1.0, -1.0)
    q = q * signs
    r = signs[:, None] * r
    col_norms = np.linalg.norm(a, axis=0)
    threshold = QR_RANK_RTOL * float(col_norms.max(initial=0.0))
    if np.any(np.abs(np.diag(r)) < threshold) or not col_norms.all():
        raise RankDeficient("matrix is numerically column-rank deficient")
    return q, r


def _check_symmetric(c: np.ndarray, what: str) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionMismatch(f"{what} needs a square matrix, got {c.shape}")
    scale = max(float(np.abs(c).max(initial=0.0)), 1e-300)
    skew = float(np.abs(c - c.T).max(initial=0.0))
    if skew > SYMMETRY_RTOL * scale:
        raise NotSymmetric(f"{what}: asymmetry {skew:.3e} exceeds {SYMMETRY_RTOL:.1e} * {scale:.3e}")
    return c


def _fix_eigvec_signs(vectors: np.ndarray) -> np.ndarray:
    # Deterministic sign convention: first nonzero component non-negative.
    v = vectors.copy()
    for j in range(v.shape[1]):
        nz = np.flatnonzero(np.abs(v[:, j]) > 1e-12)
        lead = nz[0] if nz.size else 0
        if v[lead, j] < 0:
            v[:, j] = -v[:, j]
    return v


def sym_eig(c: np.ndarray) -> EigenDecomposition:
    """Symmetric eigendecomposition; ascending eigenvalues, orthonormal columns."""
    c = _check_symmetric(c, "sym_eig")
    values, vectors = np.linalg.eigh(c)
    return EigenDecomposition(values, _fix_eigvec_signs(vectors))


def cholesky(s: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == s; s must be symmetric positive definite."""
    s = _check_symmetric(s, "cholesky")
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            "matrix is not positive definite (epsilon regularization insufficient?)"
        ) from exc


def cholesky_stack(s: np.ndarray) -> np.ndarray:
    """Batched Cholesky of a (..., k, k) stack of SPD matrices."""
    try:
        return np.linalg.cholesky(np.asarray(s, dtype=np.float64))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            "a location covariance is not positive definite "
            "(epsilon regularization insufficient for the chosen k?)"
        ) from exc


def tri_inv_stack(l: np.ndarray) -> np.ndarray:
    """Batched inverse of a (..., k, k) stack of lower-triangular factors."""
    l = np.asarray(l, dtype=np.float64)
    lead = l.shape[:-2]
    flat = l.reshape((-1,) + l.shape[-2:])
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        inv, info = dtrtri(flat[i], lower=1)
        if info != 0:
            raise NotPositiveDefinite(f"triangular factor {i} is singular (info={info})")
        out[i] = inv
    return out.reshape(lead + l.shape[-2:])


def chol_solve(l: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Solve (L @ L.T) y = v by forward then backward triangular substitution."""
    l = np.asarray(l, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if l.ndim != 2 or l.shape[0] != l.shape[1]:
        raise DimensionMismatch(f"chol_solve needs a square factor, got {l.shape}")
    if v.ndim != 1 or v.shape[0] != l.shape[0]:
        raise DimensionMismatch(f"vector of size {v.shape} incompatible with factor {l.shape}")
    y = solve_triangular(l, v, lower=True)
    return solve_triangular(l, y, trans="T", lower=True)


def matrix_norms(m: np.ndarray) -> tuple[float, float]:
    """(Frobenius, spectral) norms of a dense matrix."""
    m = np.asarray(m, dtype=np.float64)
    frob = float(np.sqrt((m * m).sum()))
    spectral = float(np.linalg.svd(m, compute_uv=False)[0]) if min(m.shape) else 0.0
    return frob, spectral
