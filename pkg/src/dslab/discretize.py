"""Finite-matrix truncations of the Dirac-Schrödinger operator ``∂_x + S(·)``.

The derivative is differenced one-sidedly (``upwind``: forward,
``wilson``: central plus Wilson term, which collapses to the backward
difference).  Three boundary treatments are offered:

``periodic``
    circle grids, stencil wraps around.
``dirichlet``
    plain square truncation of a line; out-of-range stencil terms dropped.
``cylinder``
    exact constant ends.  The family is continued by its end values to
    ``±∞``; the semi-infinite tails are eliminated through their decaying
    solution spaces, leaving a rectangular matrix whose kernel and cokernel
    are those of the operator on the whole discrete line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg

from . import numerics
from .config import DEFAULT, Tolerances
from .errors import (
    BoundaryMismatchError,
    GeometryError,
    InvertibilityError,
    PreconditionError,
    UngappedEndError,
)
from .family import PotentialFamily

SCHEMES = ("upwind", "wilson")
BOUNDARIES = ("cylinder", "dirichlet", "periodic")
STENCIL_WIDTH = 2


@dataclass(frozen=True, eq=False)
class AssembledOperator:
    T: np.ndarray
    grid: object
    scheme: str
    boundary: str
    n: int
    symbol: np.ndarray
    stencil: np.ndarray          # square D ⊗ G before boundary elimination
    potential: np.ndarray        # square block-diagonal S
    row_node: np.ndarray
    col_node: np.ndarray
    row_block: np.ndarray
    col_block: np.ndarray
    blocks: Optional[tuple] = None
    end_dims: dict = field(default_factory=dict)

    @cached_property
    def T_adj(self) -> np.ndarray:
        return self.T.conj().T

    @property
    def shape(self):
        return self.T.shape

    @cached_property
    def product_block(self) -> np.ndarray:
        """``[[0, T*], [T, 0]]``; its kernel is ``ker T ⊕ ker T*``."""
        m, p = self.T.shape
        P = np.zeros((p + m, p + m), dtype=self.T.dtype)
        P[:p, p:] = self.T_adj
        P[p:, :p] = self.T
        return P

    def block_operator(self, b: int) -> np.ndarray:
        rows = self.row_block == b
        cols = self.col_block == b
        return self.T[np.ix_(rows, cols)]

    def block_count(self) -> int:
        return len(self.blocks) if self.blocks else 1

    def off_block_max(self) -> float:
        if self.block_count() == 1:
            return 0.0
        mask = self.row_block[:, None] != self.col_block[None, :]
        return float(np.max(np.abs(self.T[mask]))) if np.any(mask) else 0.0


def difference_matrix(N: int, h: float, scheme: str, periodic: bool) -> np.ndarray:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    D = np.zeros((N, N))
    i = np.arange(N)
    if scheme == "upwind":
        D[i, i] = -1.0 / h
        D[i[:-1], i[:-1] + 1] = 1.0 / h
        if periodic:
            D[N - 1, 0] = 1.0 / h
    else:
        # central difference + (h/2)(-Δ_h): Wilson mass lifts the doubler
        C = np.zeros((N, N))
        L = np.zeros((N, N))
        C[i[:-1], i[:-1] + 1] = 0.5 / h
        C[i[1:], i[1:] - 1] = -0.5 / h
        L[i, i] = -2.0 / h**2
        L[i[:-1], i[:-1] + 1] = 1.0 / h**2
        L[i[1:], i[1:] - 1] = 1.0 / h**2
        if periodic:
            C[N - 1, 0] = 0.5 / h
            C[0, N - 1] = -0.5 / h
            L[N - 1, 0] = L[0, N - 1] = 1.0 / h**2
        D = C - 0.5 * h * L
        # for an open line the Wilson row 0 keeps only its in-range terms
    return D


def _fibre_blocks(fam: PotentialFamily):
    return fam.block_slices()


def _decaying_bases(A, G, h, scheme, slices, tol: Tolerances):
    """Bases for the end-condition subspaces of the constant tail ``G ∂ + A``.

    Returns ``(grow, decay_complement)`` where ``grow`` spans solutions that
    decay towards ``-∞`` (admissible left data) and ``decay_complement``
    spans the orthogonal complement of the solutions decaying towards
    ``+∞`` (forbidden right data).  Each basis vector lives in a single block.
    """
    n = A.shape[0]
    left_cols, right_cols = [], []
    left_lab, right_lab = [], []
    for b, sl in enumerate(slices):
        Ab, Gb = A[sl, sl], G[sl, sl]
        M = Gb @ Ab
        herm = numerics.asymmetry(M) <= tol.hermitian * max(1.0, np.abs(M).max())
        if herm:
            mu, V = np.linalg.eigh(0.5 * (M + M.conj().T))
            if mu.size and h * np.max(np.abs(mu)) >= tol.max_h_potential:
                raise PreconditionError(
                    f"spacing h={h:g} too coarse for end potential of norm {np.max(np.abs(mu)):.3g} "
                    f"(h·|S| must stay below {tol.max_h_potential})")
            mod = np.abs(1 - h * mu) if scheme == "upwind" else 1.0 / np.abs(1 + h * mu)
            if np.any(np.abs(mod - 1) < tol.transfer_margin):
                raise UngappedEndError("end potential is not gapped: a tail mode neither grows nor decays "
                                       "(assumption A3 fails at this end)")
            grow = V[:, mod > 1]
            forbid = V[:, mod > 1]
        else:
            I = np.eye(M.shape[0])
            Phi = I - h * M if scheme == "upwind" else np.linalg.inv(I + h * M)
            ev = np.linalg.eigvals(Phi)
            if np.any(np.abs(np.abs(ev) - 1) < tol.transfer_margin):
                raise UngappedEndError("end potential is not gapped: a tail mode neither grows nor decays "
                                       "(assumption A3 fails at this end)")
            _, Z, k = scipy.linalg.schur(Phi.astype(complex), output="complex", sort=lambda z: abs(z) > 1)
            grow = Z[:, :k]
            _, Z, k = scipy.linalg.schur(Phi.astype(complex), output="complex", sort=lambda z: abs(z) < 1)
            forbid = Z[:, k:]
        for basis, cols, lab in ((grow, left_cols, left_lab), (forbid, right_cols, right_lab)):
            full = np.zeros((n, basis.shape[1]), dtype=np.result_type(basis, float))
            full[sl] = basis
            cols.append(full)
            lab.extend([b] * basis.shape[1])
    dt = np.result_type(*[c.dtype for c in left_cols + right_cols], float)
    U = np.concatenate(left_cols, axis=1).astype(dt) if left_cols else np.zeros((n, 0))
    W = np.concatenate(right_cols, axis=1).astype(dt) if right_cols else np.zeros((n, 0))
    return U, np.array(left_lab, dtype=int), W, np.array(right_lab, dtype=int)


def assemble_dirac_schrodinger(fam: PotentialFamily, scheme: str = "upwind", boundary: Optional[str] = None,
                               symbol=None, tol: Tolerances = DEFAULT) -> AssembledOperator:
    """Assemble ``T ≈ G ∂_x + S(·)`` (``G = 1`` unless a Clifford symbol is given).

    ``T`` is the truncation of ``i(D - iS)`` with ``D = -iG∂_x``; the global
    unit factor does not affect kernels.
    """
    grid = fam.grid
    if boundary is None:
        boundary = "periodic" if grid.kind == "circle" else "cylinder"
    if boundary not in BOUNDARIES:
        raise ValueError(f"unknown boundary {boundary!r}; expected one of {BOUNDARIES}")
    if (grid.kind == "circle") != (boundary == "periodic"):
        raise BoundaryMismatchError(f"boundary {boundary!r} does not fit a {grid.kind} grid")
    N, n, h = fam.size, fam.n, grid.spacing
    G = np.eye(n) if symbol is None else np.asarray(symbol)
    if G.shape != (n, n):
        raise ValueError(f"symbol must be {n}x{n}")
    slices = _fibre_blocks(fam)
    labels = np.zeros(n, dtype=int)
    for b, sl in enumerate(slices):
        labels[sl] = b

    D = difference_matrix(N, h, scheme, boundary == "periodic")
    dtype = np.result_type(fam.matrices, G, float)
    stencil = np.kron(D, G).astype(dtype)
    potential = np.zeros((N * n, N * n), dtype=dtype)
    idx = np.arange(N)
    potential.reshape(N, n, N, n)[idx, :, idx, :] = fam.matrices
    T_sq = stencil + potential

    node_of = np.repeat(np.arange(N), n)
    block_of = np.tile(labels, N)
    if boundary != "cylinder":
        return AssembledOperator(T_sq, grid, scheme, boundary, n, G, stencil, potential,
                                 node_of, node_of.copy(), block_of, block_of.copy(), fam.blocks,
                                 {"left": n, "right": 0})

    if N < 2:
        raise GeometryError("cylinder boundary needs at least two nodes")
    U, ulab, _, _ = _decaying_bases(fam.matrices[0], G, h, scheme, slices, tol)
    _, _, W_end, wlab_end = _decaying_bases(fam.matrices[-1], G, h, scheme, slices, tol)
    dtype = np.result_type(T_sq, U, W_end)
    rows = np.arange(0, (N - 1) * n) if scheme == "upwind" else np.arange(n, N * n)
    Tr = T_sq[rows]
    core = np.concatenate([Tr[:, :n] @ U, Tr[:, n:]], axis=1).astype(dtype)
    k_left = U.shape[1]
    last = slice(core.shape[1] - n, core.shape[1])
    cons = np.zeros((W_end.shape[1], core.shape[1]), dtype=dtype)
    cons[:, last] = W_end.conj().T / h
    T = np.concatenate([core, cons], axis=0)
    row_node = np.concatenate([node_of[rows], np.full(W_end.shape[1], N - 1)])
    row_block = np.concatenate([block_of[rows], wlab_end])
    col_node = np.concatenate([np.zeros(k_left, dtype=int), node_of[n:]])
    col_block = np.concatenate([ulab, block_of[n:]])
    return AssembledOperator(T, grid, scheme, boundary, n, G, stencil, potential,
                             row_node, col_node, row_block, col_block, fam.blocks,
                             {"left": k_left, "right": int(W_end.shape[1]),
                              "left_basis": U, "right_basis": W_end})


# ---------------------------------------------------------------------------
# parametrix
# ---------------------------------------------------------------------------

def partition_functions(fam: PotentialFamily, ramp: float = 0.0) -> np.ndarray:
    """Cutoffs ``χ_0`` (near K) and ``χ_j`` (one per cover patch) with ``Σ χ_j² = 1``.

    ``ramp = 0`` gives sharp cutoffs (one interface cell per patch);
    otherwise ``χ_j²`` rises as a raised cosine over ``ramp`` length units
    inside ``V_j``.
    """
    N = fam.size
    x = fam.grid.nodes
    k0, k1 = fam.compact
    phi = np.zeros((1 + len(fam.cover), N))
    for j, p in enumerate(fam.cover, start=1):
        idx = np.arange(p.start, p.stop + 1)
        if ramp <= 0:
            phi[j, idx] = 1.0
            continue
        edge = x[k0] if p.stop < k0 else x[k1]
        d = np.abs(x[idx] - edge)
        phi[j, idx] = np.where(d >= ramp, 1.0, 0.5 * (1 - np.cos(np.pi * np.minimum(d, ramp) / ramp)))
    phi[0] = 1.0 - phi[1:].sum(axis=0)
    phi = np.clip(phi, 0.0, 1.0)
    return np.sqrt(phi)


@dataclass
class ParametrixBundle:
    Q: np.ndarray
    residual_right: np.ndarray
    residual_left: np.ndarray
    partition: np.ndarray
    right_norm: float
    left_norm: float
    interface_rows: np.ndarray
    interface_cells: int
    off_support_max: float
    residual_rank: int
    rank_bound: int
    coker_dim: int
    ker_dim: int
    single_patch: bool

    def summary(self):
        return {
            "right_norm": self.right_norm,
            "left_norm": self.left_norm,
            "interface_cells": self.interface_cells,
            "off_support_max": self.off_support_max,
            "residual_rank": self.residual_rank,
            "rank_bound": self.rank_bound,
            "coker_dim": self.coker_dim,
            "ker_dim": self.ker_dim,
            "single_patch": self.single_patch,
        }


def _generalized_inverse(T, tol: Tolerances):
    s, U, Vh = numerics.svd(T)
    tau, _, _ = numerics.kernel_threshold(s, T.shape, tol.kernel_ceiling * (s[0] if s.size else 1.0))
    r = int(np.count_nonzero(s > tau))
    Ur, sr, Vr = U[:, :r], s[:r], Vh[:r].conj().T
    pinv = (Vr / sr) @ Ur.conj().T
    coker = U[:, r:]
    ker = Vh[r:].conj().T
    return pinv, coker, ker


def _local_family(fam: PotentialFamily, p) -> PotentialFamily:
    """``S^{V_j}``: equal to S on ``V_j`` and frozen to ``S(x_j)`` elsewhere."""
    S = np.repeat(fam.matrices[p.anchor][None], fam.size, axis=0)
    S[p.start:p.stop + 1] = fam.matrices[p.start:p.stop + 1]
    return PotentialFamily(fam.grid, S, None, (), fam.blocks, None, None, f"{fam.name}^V")


def build_parametrix(op: AssembledOperator, fam: PotentialFamily, ramp: float = 0.0,
                     tol: Tolerances = DEFAULT) -> ParametrixBundle:
    """Patch local inverses into ``Q = Σ_j χ_j Q_j χ_j``.

    ``Q_0`` is a generalised inverse of ``T`` itself (the compact patch) and
    ``Q_j`` inverts the operator with potential ``S^{V_j}``.  The residual
    ``TQ - 1`` then splits into commutator terms ``[T, χ_j] Q_j χ_j`` living
    on the rows where some ``χ_j`` jumps, plus ``-χ_0 P_coker χ_0``.
    """
    if op.grid.kind != "line":
        raise GeometryError("the patched parametrix is built on line grids")
    T = op.T
    m, p = T.shape
    single = fam.is_constant() or not fam.cover
    if single:
        Q, coker, ker = _generalized_inverse(T, tol)
        chi = np.ones((1, fam.size))
        R = T @ Q - np.eye(m)
        L = Q @ T - np.eye(p)
        return ParametrixBundle(Q, R, L, chi, float(np.linalg.norm(R, 2)), float(np.linalg.norm(L, 2)),
                                np.zeros(m, dtype=bool), 0, float(np.max(np.abs(R))) if R.size else 0.0,
                                _rank(R), coker.shape[1], coker.shape[1], ker.shape[1], True)

    chi = partition_functions(fam, ramp)
    Q = np.zeros((p, m), dtype=np.result_type(T, float))
    Q0, coker, ker = _generalized_inverse(T, tol)
    c_row, c_col = chi[0][op.row_node], chi[0][op.col_node]
    Q += (c_col[:, None] * Q0) * c_row[None, :]
    for j, patch in enumerate(fam.cover, start=1):
        lop = assemble_dirac_schrodinger(_local_family(fam, patch), op.scheme, op.boundary, op.symbol, tol)
        Tj = lop.T
        if Tj.shape[0] != Tj.shape[1]:
            raise InvertibilityError(f"local operator for patch {j} is not square", j)
        sj = numerics.singular_values(Tj)
        if sj[-1] <= tol.kernel_ceiling * sj[0] * 1e-6:
            raise InvertibilityError(f"local operator for patch {j} is numerically singular", j)
        Qj = np.linalg.inv(Tj)
        rmap = _index_map(lop, op, "row")
        cmap = _index_map(lop, op, "col")
        chi_r = chi[j][lop.row_node]
        chi_c = chi[j][lop.col_node]
        if np.any(chi_r[rmap < 0] != 0) or np.any(chi_c[cmap < 0] != 0):
            raise InvertibilityError(f"cutoff of patch {j} reaches an end it does not own", j)
        rk, ck = rmap >= 0, cmap >= 0
        block = (chi_c[ck][:, None] * Qj[np.ix_(ck, rk)]) * chi_r[rk][None, :]
        Q[np.ix_(cmap[ck], rmap[rk])] += block

    R = T @ Q - np.eye(m)
    L = Q @ T - np.eye(p)
    interface = np.zeros(fam.size, dtype=bool)
    jumps = np.any(chi[:, 1:] != chi[:, :-1], axis=0)
    cells = int(np.count_nonzero(jumps))
    for i in np.nonzero(jumps)[0]:
        interface[i] = interface[i + 1] = True
    rows_near = interface[op.row_node]
    coker_part = (c_row[:, None] * (coker @ coker.conj().T)) * c_row[None, :]
    localized = R + coker_part
    off = float(np.max(np.abs(localized[~rows_near]))) if np.any(~rows_near) else 0.0
    bound = cells * op.n * STENCIL_WIDTH + coker.shape[1]
    return ParametrixBundle(Q, R, L, chi, float(np.linalg.norm(R, 2)), float(np.linalg.norm(L, 2)),
                            rows_near, cells, off, _rank(R), bound, coker.shape[1], ker.shape[1], False)


def _rank(R, rel=1e-8):
    if R.size == 0:
        return 0
    s = numerics.singular_values(R)
    return int(np.count_nonzero(s > rel * max(1.0, s[0])))


def _index_map(src: AssembledOperator, dst: AssembledOperator, kind: str) -> np.ndarray:
    """Positions of ``src`` rows/columns inside ``dst`` (``-1`` where they differ)."""
    n = dst.n
    if kind == "row":
        total_src, total_dst = src.T.shape[0], dst.T.shape[0]
        stencil_rows = total_dst - dst.end_dims["right"]
        out = -np.ones(total_src, dtype=int)
        out[:stencil_rows] = np.arange(stencil_rows)
        if _same_basis(src.end_dims.get("right_basis"), dst.end_dims.get("right_basis")):
            k = dst.end_dims["right"]
            out[stencil_rows:stencil_rows + k] = stencil_rows + np.arange(k)
        return out
    total_src, total_dst = src.T.shape[1], dst.T.shape[1]
    ks, kd = src.end_dims["left"], dst.end_dims["left"]
    out = -np.ones(total_src, dtype=int)
    out[ks:] = kd + np.arange(total_src - ks)
    if _same_basis(src.end_dims.get("left_basis"), dst.end_dims.get("left_basis")):
        out[:ks] = np.arange(kd)
    return out


def _same_basis(a, b):
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and np.array_equal(a, b)
