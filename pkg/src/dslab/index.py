"""Fredholm index of assembled truncations, certified by singular-value gaps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import numerics
from .config import DEFAULT, Tolerances
from .discretize import AssembledOperator, assemble_dirac_schrodinger
from .errors import AmbiguousKernelError, GeometryError, GradingError, NonConvergenceError
from .family import (
    Grid1D,
    PotentialFamily,
    attach_cylinder_ends,
    default_end_margin,
    make_constant_ends,
)


@dataclass
class IndexReport:
    dim_ker: object
    dim_coker: object
    index: object
    threshold: float
    gap_ratio: float
    converged: bool = False
    trail: list = field(default_factory=list)
    shape: tuple = ()
    smallest_kept: float = float("nan")
    extras: dict = field(default_factory=dict)

    @property
    def total_index(self) -> int:
        return int(np.sum(self.index))

    def to_dict(self):
        def conv(v):
            return [int(x) for x in v] if isinstance(v, tuple) else int(v)
        return {
            "index": conv(self.index),
            "dim_ker": conv(self.dim_ker),
            "dim_coker": conv(self.dim_coker),
            "threshold": self.threshold,
            "gap_ratio": self.gap_ratio,
            "converged": self.converged,
            "trail": [dict(size=int(s), end_margin=float(L), index=conv(i), gap_ratio=float(g))
                      for s, L, i, g in self.trail],
            "shape": list(self.shape),
            "smallest_kept": self.smallest_kept,
            **{k: v for k, v in self.extras.items()},
        }


def _rank(T, tol: Tolerances):
    """Numerical rank of ``T`` with its gap certificate."""
    m, p = T.shape
    if min(m, p) == 0:
        return 0, 0.0, np.inf, np.inf
    s = numerics.singular_values(T)
    ceiling = tol.kernel_ceiling * s[0]
    tau, accepted, ratio = numerics.kernel_threshold(s, T.shape, ceiling)
    if ratio < tol.gap_ratio:
        raise AmbiguousKernelError(
            f"no singular-value gap of ratio >= {tol.gap_ratio:g} below {ceiling:.3e} "
            f"(best {ratio:.3g}); refine the grid or lengthen the cylinder ends",
            singular_values=np.sort(s)[:8], best_ratio=ratio)
    kept = np.sort(s)[accepted] if accepted < s.size else np.inf
    return s.size - accepted, tau, ratio, float(kept)


def _count(T, tol):
    m, p = T.shape
    r, tau, ratio, kept = _rank(T, tol)
    # the adjoint is decomposed on its own as a self-check of the cokernel
    r_adj, tau_adj, ratio_adj, _ = _rank(T.conj().T, tol)
    if r != r_adj:
        raise AmbiguousKernelError(f"rank of T ({r}) and of its adjoint ({r_adj}) disagree",
                                   best_ratio=min(ratio, ratio_adj))
    return p - r, m - r_adj, max(tau, tau_adj), min(ratio, ratio_adj), kept


def fredholm_index(op: AssembledOperator, tol: Tolerances = DEFAULT, cross_check: bool = False) -> IndexReport:
    """``dim ker T - dim ker T*`` with the kernel cut at the widest gap below ``1e-3 ‖T‖``.

    For block families the count runs block by block and the index is a
    vector.  ``cross_check`` also counts small eigenvalues of the product
    block, which must equal ``dim ker + dim coker``.
    """
    nb = op.block_count()
    if nb == 1:
        k, c, tau, ratio, kept = _count(op.T, tol)
        rep = IndexReport(k, c, k - c, tau, ratio, shape=op.T.shape, smallest_kept=kept)
    else:
        if op.off_block_max() > tol.block_offdiag:
            raise GeometryError("assembled operator is not block diagonal")
        parts = [_count(op.block_operator(b), tol) for b in range(nb)]
        ks = tuple(p[0] for p in parts)
        cs = tuple(p[1] for p in parts)
        rep = IndexReport(ks, cs, tuple(a - b for a, b in zip(ks, cs)), max(p[2] for p in parts),
                          min(p[3] for p in parts), shape=op.T.shape,
                          smallest_kept=min(p[4] for p in parts))
    if cross_check:
        w = np.linalg.eigvalsh(op.product_block)
        rep.extras["product_kernel"] = int(np.count_nonzero(np.abs(w) < rep.threshold))
        rep.extras["product_consistent"] = rep.extras["product_kernel"] == int(
            np.sum(rep.dim_ker) + np.sum(rep.dim_coker))
    return rep


# ---------------------------------------------------------------------------
# truncation ladders
# ---------------------------------------------------------------------------

def default_ladder(fam: PotentialFamily, end_margin: Optional[float] = None, tol: Tolerances = DEFAULT):
    h = fam.grid.spacing
    L = default_end_margin(fam, tol) if end_margin is None else float(end_margin)
    return [(2 * h, L), (1.5 * h, L), (h, L)]


def prepare(fam: PotentialFamily, h: float, L: float, collar: float = 1.0) -> PotentialFamily:
    """Resample on spacing ``h``, freeze the ends across ``collar`` and attach cylinders of length ``L``."""
    a, b = fam.grid.core_extent
    f = fam if np.isclose(h, fam.grid.spacing) and fam.grid.end_margins == (0.0, 0.0) \
        else fam.resample(Grid1D.line(a, b, h))
    f = make_constant_ends(f, collar)
    return attach_cylinder_ends(f, L)


def convergence_study(fam: PotentialFamily, ladder: Optional[Sequence] = None, scheme: str = "upwind",
                      collar: float = 1.0, tol: Tolerances = DEFAULT, symbol=None,
                      grading=None) -> IndexReport:
    """Index along a ladder of ``(h, L_cyl)`` truncations, coarse to fine.

    With ``grading`` every rung goes through :func:`graded_index`.
    """
    if fam.grid.kind != "line":
        raise GeometryError("convergence studies refine line truncations")
    ladder = default_ladder(fam, tol=tol) if ladder is None else [(float(h), float(L)) for h, L in ladder]
    if not ladder:
        raise ValueError("empty ladder")
    for (h0, L0), (h1, L1) in zip(ladder, ladder[1:]):
        if h1 > h0 or L1 < L0:
            raise ValueError("ladder must have non-increasing h and non-decreasing L_cyl")
    trail, rep = [], None
    for h, L in ladder:
        f = prepare(fam, h, L, collar)
        op = assemble_dirac_schrodinger(f, scheme, symbol=symbol, tol=tol)
        rep = fredholm_index(op, tol) if grading is None else graded_index(op, grading, tol)
        trail.append((f.size, L, rep.index, rep.gap_ratio))
    rep.trail = trail
    tail = trail[-3:]
    rep.converged = len(tail) == 3 and all(t[2] == tail[-1][2] and t[3] >= tol.gap_ratio for t in tail)
    if len(tail) == 3 and not rep.converged:
        raise NonConvergenceError(
            "index did not stabilise over the ladder: " + ", ".join(f"N={s}, L={L:g} -> {i}" for s, L, i, _ in trail),
            trail=trail)
    return rep


# ---------------------------------------------------------------------------
# graded (doubled-fibre) index
# ---------------------------------------------------------------------------

SIGMA1 = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA3 = np.array([[1.0, 0.0], [0.0, -1.0]])


def doubled_fiber(fam: PotentialFamily, commuting: bool = True):
    """``(S ⊗ 1₂, 1 ⊗ σ₁, 1 ⊗ σ₃)``.

    ``commuting=False`` builds ``S ⊗ σ₁`` instead, which anticommutes with
    the grading (``S ⊗ σ₃`` would still commute with ``1 ⊗ σ₃``).
    """
    n = fam.n
    E = np.eye(2) if commuting else SIGMA1
    S2 = np.stack([np.kron(S, E) for S in fam.matrices])
    prof = None
    if fam.profile is not None:
        base = fam.profile
        prof = lambda x: np.stack([np.kron(S, E) for S in np.asarray(base(x))])  # noqa: E731
    blocks = tuple(2 * b for b in fam.blocks) if fam.blocks else None
    fam2 = fam.with_matrices(S2, prof, name=f"{fam.name}(x)doubled", blocks=blocks)
    G = np.kron(np.eye(n), SIGMA1)
    Gamma = np.kron(np.eye(n), SIGMA3)
    return fam2, G, Gamma


def graded_index(op: AssembledOperator, Gamma, tol: Tolerances = DEFAULT) -> IndexReport:
    """Index of an operator whose derivative part is odd and potential even for ``Γ``; it must vanish."""
    Gamma = np.asarray(Gamma)
    n = op.n
    if Gamma.shape != (n, n):
        raise GradingError(f"grading must be {n}x{n}", residuals={})
    N = op.stencil.shape[0] // n
    sq = float(np.max(np.abs(Gamma @ Gamma - np.eye(n))))
    herm = numerics.asymmetry(Gamma)
    D4 = op.stencil.reshape(N, n, N, n)
    anti = float(np.max(np.abs(np.einsum("ab,ibjc->iajc", Gamma, D4) + np.einsum("iajb,bc->iajc", D4, Gamma))))
    P4 = op.potential.reshape(N, n, N, n)
    idx = np.arange(N)
    S = P4[idx, :, idx, :]
    comm = float(np.max(np.abs(Gamma @ S - S @ Gamma))) if S.size else 0.0
    residuals = {"square": sq, "hermitian": herm, "anticommute_derivative": anti, "commute_potential": comm}
    bad = {k: v for k, v in residuals.items() if v > tol.grading}
    if bad:
        raise GradingError("not a grading: " + ", ".join(f"{k} residual {v:.2e}" for k, v in bad.items())
                           + f" exceeds {tol.grading:.0e}", residuals=residuals)
    rep = fredholm_index(op, tol)
    rep.extras["grading_residuals"] = residuals
    rep.extras["vanishes"] = rep.total_index == 0 and not np.any(np.asarray(rep.index))
    return rep


def circle_study(fam: PotentialFamily, counts: Optional[Sequence[int]] = None, scheme: str = "upwind",
                 tol: Tolerances = DEFAULT) -> IndexReport:
    """Periodic truncations with increasing node counts; the index of a loop is 0."""
    if fam.grid.kind != "circle":
        raise GeometryError("circle_study needs a circle grid")
    N = fam.size
    counts = [max(3, N // 2), max(3, (3 * N) // 4), N] if counts is None else [int(c) for c in counts]
    if any(b < a for a, b in zip(counts, counts[1:])):
        raise ValueError("node counts must be non-decreasing")
    trail, rep = [], None
    for c in counts:
        f = fam if c == N else fam.resample(Grid1D.circle(c))
        rep = fredholm_index(assemble_dirac_schrodinger(f, scheme, "periodic", tol=tol), tol)
        trail.append((c, 0.0, rep.index, rep.gap_ratio))
    rep.trail = trail
    tail = trail[-3:]
    rep.converged = len(tail) == 3 and all(t[2] == tail[-1][2] for t in tail)
    if len(tail) == 3 and not rep.converged:
        raise NonConvergenceError("index did not stabilise over the node counts", trail=trail)
    return rep
