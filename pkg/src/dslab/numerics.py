"""Dense Hermitian eigensolver, SVD and matrix functional calculus.

Thin, validated wrappers around LAPACK (through numpy) that every other
module goes through, so that symmetry checks and tolerances live in one
place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import DEFAULT, Tolerances
from .errors import CutError, DomainError, SymmetryError


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray   # real, ascending
    eigenvectors: np.ndarray  # columns

    def __iter__(self):
        yield self.eigenvalues
        yield self.eigenvectors


def asymmetry(H) -> float:
    H = np.asarray(H)
    if H.size == 0:
        return 0.0
    return float(np.max(np.abs(H - H.conj().T)))


def hermitian(H, tol: Tolerances = DEFAULT) -> np.ndarray:
    """Return ``(H + H*)/2`` after checking the asymmetry is below tolerance."""
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    gap = asymmetry(H)
    if gap > tol.hermitian:
        i, j = np.unravel_index(np.argmax(np.abs(H - H.conj().T)), H.shape)
        raise SymmetryError(
            f"matrix is not Hermitian: |H[{i},{j}] - conj(H[{j},{i}])| = {gap:.3e} "
            f"exceeds {tol.hermitian:.0e}",
            asymmetry=gap,
        )
    if gap == 0.0:
        return H
    return 0.5 * (H + H.conj().T)


def eigh(H, tol: Tolerances = DEFAULT) -> EigenSystem:
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending."""
    H = hermitian(H, tol)
    w, V = np.linalg.eigh(H)
    return EigenSystem(w, V)


def eigvalsh(H, tol: Tolerances = DEFAULT) -> np.ndarray:
    return np.linalg.eigvalsh(hermitian(H, tol))


def svd(A):
    """Full SVD ``A = U diag(s) Vh`` with singular values descending."""
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    U, s, Vh = np.linalg.svd(A, full_matrices=True)
    return s, U, Vh


def singular_values(A) -> np.ndarray:
    """Singular values only, descending."""
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    if 0 in A.shape:
        return np.zeros(0)
    return np.linalg.svd(A, compute_uv=False)


def min_singular_value(A) -> float:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] == 0:
        return np.inf
    return float(singular_values(A)[-1])


def apply_function(H, f: Callable[[np.ndarray], np.ndarray], tol: Tolerances = DEFAULT) -> np.ndarray:
    """Functional calculus ``V f(Λ) V*`` for Hermitian ``H`` and real scalar ``f``."""
    w, V = eigh(H, tol)
    with np.errstate(all="ignore"):
        try:
            fw = np.asarray(f(w), dtype=float)
        except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
            raise DomainError(f"function could not be evaluated on the spectrum: {exc}") from exc
    if fw.shape != w.shape:
        fw = np.array([float(f(x)) for x in w])
    bad = ~np.isfinite(fw)
    if np.any(bad):
        lam = float(w[np.argmax(bad)])
        raise DomainError(f"function undefined at eigenvalue {lam!r}", eigenvalue=lam)
    out = (V * fw) @ V.conj().T
    return 0.5 * (out + out.conj().T)


def bounded_transform(x):
    """``x (1 + x^2)^{-1/2}``."""
    x = np.asarray(x, dtype=float)
    return x / np.sqrt(1.0 + x * x)


def spectral_projection(H, interval, tol: Tolerances = DEFAULT) -> np.ndarray:
    """Orthogonal projection onto the eigenvectors with eigenvalue in ``[a, b]``."""
    a, b = (float(v) for v in interval)
    if not a < b:
        raise ValueError(f"empty interval [{a}, {b}]")
    w, V = eigh(H, tol)
    for edge in (a, b):
        if np.isfinite(edge) and w.size:
            k = int(np.argmin(np.abs(w - edge)))
            if abs(w[k] - edge) < tol.projection_cut:
                raise CutError(
                    f"eigenvalue {w[k]!r} lies within {tol.projection_cut:.0e} of the cut at {edge}",
                    eigenvalue=float(w[k]),
                )
    sel = (w >= a) & (w <= b)
    Vs = V[:, sel]
    return Vs @ Vs.conj().T


def inertia(H, tol: Tolerances = DEFAULT):
    """Counts of (negative, nonnegative) eigenvalues."""
    w = eigvalsh(H, tol)
    neg = int(np.count_nonzero(w < 0))
    return neg, w.size - neg


def random_hermitian(rng: np.random.Generator, n: int, real: bool = False) -> np.ndarray:
    """GUE/GOE sample scaled to unit spectral radius order."""
    X = rng.standard_normal((n, n))
    if not real:
        X = X + 1j * rng.standard_normal((n, n))
    H = (X + X.conj().T) / (2.0 * np.sqrt(2.0 * n))
    return H


def random_unitary(rng: np.random.Generator, n: int, real: bool = False) -> np.ndarray:
    X = rng.standard_normal((n, n))
    if not real:
        X = X + 1j * rng.standard_normal((n, n))
    Q, R = np.linalg.qr(X)
    d = np.diagonal(R)
    return Q * (d / np.abs(d))


def kernel_threshold(s, shape, ceiling: float, min_ratio: float = 0.0):
    """Place a kernel cut at the widest multiplicative gap below ``ceiling``.

    ``s`` are singular values (any order) of a matrix of ``shape``.  Returns
    ``(tau, accepted, gap_ratio)`` where ``accepted`` is how many singular
    values fall below ``tau``.  A virtual floor at the rounding level stands
    for exact zeros, so "nothing accepted" is one of the candidates.
    """
    s = np.sort(np.asarray(s, dtype=float))
    norm = float(s[-1]) if s.size else 0.0
    floor = max(shape) * np.finfo(float).eps * max(norm, 1.0)
    ladder = np.concatenate([[floor], np.maximum(s, 0.0)])
    best = (-1.0, 0)
    for k in range(ladder.size - 1):
        lo = max(ladder[k], floor)
        if lo >= ceiling:
            break
        ratio = ladder[k + 1] / lo
        if ratio > best[0]:
            best = (ratio, k)
    if best[0] < 0:
        return floor, 0, 0.0
    ratio, k = best
    tau = float(np.sqrt(max(ladder[k], floor) * ladder[k + 1]))
    return tau, k, float(ratio)
