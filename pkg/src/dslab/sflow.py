"""Spectral flow of sampled Hermitian families.

Two independent counts are provided.  :func:`spectral_flow_crossing` tracks
eigenbranches node to node (overlap matching, adaptive bisection of the
linear interpolant) and counts sign changes.  :func:`spectral_flow_partition`
never matches anything: it chooses a spectral window ``[0, ε)`` per segment
that no eigenvalue can cross and telescopes eigenvalue counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import DEFAULT, Tolerances
from .errors import EndpointError, GeometryError, ResolutionError
from .family import PotentialFamily

Flow = Union[int, tuple]


@dataclass(frozen=True)
class Crossing:
    segment: int
    branch: int
    direction: int
    location: float
    block: int = 0


@dataclass
class SpectralFlowReport:
    net_flow: Flow
    crossings: list
    refinement_depth: int
    oracle_flow: Optional[Flow] = None
    agreement: Optional[bool] = None
    branches: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "net_flow": _jsonable(self.net_flow),
            "oracle_flow": _jsonable(self.oracle_flow),
            "agreement": self.agreement,
            "refinement_depth": self.refinement_depth,
            "crossings": [dict(segment=c.segment, branch=c.branch, direction=c.direction,
                               location=c.location, block=c.block) for c in self.crossings],
        }

    def write_branches(self, path) -> Path:
        """CSV trace of every tracked eigenvalue: arclength, branch id, eigenvalue, block."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arclength", "branch", "eigenvalue", "block"])
            for row in self.branches:
                w.writerow([repr(float(row[0])), int(row[1]), repr(float(row[2])), int(row[3])])
        return path


def _jsonable(v):
    if isinstance(v, tuple):
        return [int(x) for x in v]
    return None if v is None else int(v)


# ---------------------------------------------------------------------------
# crossing tracker
# ---------------------------------------------------------------------------

def _match(Va, Vb, threshold):
    """Assignment ``k -> match[k]`` maximising |<v_k, v'_match[k]>|."""
    O = np.abs(Va.conj().T @ Vb)
    m = O.shape[0]
    match = -np.ones(m, dtype=int)
    taken = np.zeros(m, dtype=bool)
    for flat in np.argsort(-O, axis=None, kind="stable"):
        i, j = divmod(int(flat), m)
        if match[i] < 0 and not taken[j]:
            match[i] = j
            taken[j] = True
    ov = O[np.arange(m), match]
    if np.any(ov < threshold):
        r, c = linear_sum_assignment(-O)
        match = c[np.argsort(r)]
        ov = O[np.arange(m), match]
    return match, ov


class _Tracker:
    def __init__(self, tol: Tolerances, block: int, record: bool):
        self.tol = tol
        self.block = block
        self.record = record
        self.depth = 0
        self.crossings = []
        self.trace = []

    def segment(self, k, Sa, Sb, ea, eb, xa, xb, branch_a, depth=0, overlap_only_budget=12):
        """Return branch ids at the right end of ``[xa, xb]``."""
        self.depth = max(self.depth, depth)
        (wa, Va), (wb, Vb) = ea, eb
        match, ov = _match(Va, Vb, self.tol.overlap)
        wbm = wb[match]
        move = np.abs(wbm - wa)
        spread = float(np.linalg.norm(Sb - Sa, 2))
        lo = np.minimum(np.abs(wa), np.abs(wbm))
        sign_change = (wa < 0) != (wbm < 0)
        hidden = (~sign_change) & (lo > self.tol.zero_floor) & (lo < move)
        tangled = (ov < self.tol.overlap) & (lo < spread)
        if np.any(hidden) or (np.any(tangled) and depth < overlap_only_budget):
            if depth >= self.tol.max_depth:
                raise ResolutionError(
                    f"branch tracking did not resolve segment {k} near x={0.5 * (xa + xb):.6g} "
                    f"after {depth} bisections")
            xm = 0.5 * (xa + xb)
            Sm = 0.5 * (Sa + Sb)
            em = np.linalg.eigh(Sm)
            if self.record:
                self._emit(xm, None, em[0])
            branch_m = self.segment(k, Sa, Sm, ea, em, xa, xm, branch_a, depth + 1, overlap_only_budget)
            self._pending_ids(xm, branch_m, em[0])
            return self.segment(k, Sm, Sb, em, eb, xm, xb, branch_m, depth + 1, overlap_only_budget)
        branch_b = np.empty_like(branch_a)
        branch_b[match] = branch_a
        for i in np.nonzero(sign_change)[0]:
            t = (0.0 - wa[i]) / (wbm[i] - wa[i])
            self.crossings.append(Crossing(k, int(branch_a[i]), 1 if wa[i] < 0 else -1,
                                           float(xa + t * (xb - xa)), self.block))
        return branch_b

    # trace rows are written with branch ids once they are known
    def _emit(self, x, ids, w):
        self.trace.append([x, ids, w])

    def _pending_ids(self, x, ids, w):
        for row in reversed(self.trace):
            if row[0] == x and row[1] is None:
                row[1] = ids
                break

    def rows(self):
        out = []
        for x, ids, w in sorted(self.trace, key=lambda r: r[0]):
            for b, lam in zip(ids, w):
                out.append((x, int(b), float(lam), self.block))
        return out


def _check_endpoint(S, where, tol):
    s = np.linalg.svd(S, compute_uv=False)[-1]
    if s <= tol.endpoint_sigma:
        raise EndpointError(f"family is not invertible at the {where} (min singular value {s:.3e})")


def _track(mats, xs, tol, block, record, closed=False):
    N = mats.shape[0]
    eig = [np.linalg.eigh(S) for S in mats]
    tr = _Tracker(tol, block, record)
    ids = np.arange(mats.shape[1])
    if record:
        tr._emit(xs[0], ids, eig[0][0])
    segments = N if closed else N - 1
    for k in range(segments):
        a, b = k, (k + 1) % N
        xb = xs[b] if b > 0 else xs[0] + 2 * np.pi
        ids = tr.segment(k, mats[a], mats[b], eig[a], eig[b], xs[a], xb, ids)
        if record:
            tr._emit(xb, ids, eig[b][0])
    return tr


def _per_block(fam: PotentialFamily):
    return [fam.matrices[:, sl, sl] for sl in fam.block_slices()]


def _collect(fam, flows):
    if fam.blocks:
        return tuple(int(f) for f in flows)
    return int(flows[0])


def spectral_flow_crossing(fam: PotentialFamily, tol: Tolerances = DEFAULT, oracle: bool = True,
                           record_branches: bool = False) -> SpectralFlowReport:
    """Signed count of eigenvalue sign changes along a line family.

    An eigenvalue that lands exactly on 0 at a node counts as nonnegative,
    so a crossing through a node is charged to the segment on its left.
    """
    if fam.grid.kind != "line":
        raise GeometryError("spectral_flow_crossing runs on line grids; use spectral_flow_circle for loops")
    _check_endpoint(fam.matrices[0], "left end", tol)
    _check_endpoint(fam.matrices[-1], "right end", tol)
    return _crossing_report(fam, tol, oracle, record_branches, closed=False)


def _crossing_report(fam, tol, oracle, record, closed):
    xs = fam.grid.nodes
    flows, crossings, rows, depth = [], [], [], 0
    for b, mats in enumerate(_per_block(fam)):
        tr = _track(mats, xs, tol, b, record, closed)
        flows.append(sum(c.direction for c in tr.crossings))
        crossings.extend(tr.crossings)
        depth = max(depth, tr.depth)
        if record:
            rows.extend(tr.rows())
    net = _collect(fam, flows)
    rep = SpectralFlowReport(net, crossings, depth, branches=rows)
    if oracle:
        rep.oracle_flow = _partition(fam, tol, closed)
        rep.agreement = rep.oracle_flow == net
    return rep


def spectral_flow_circle(fam: PotentialFamily, tol: Tolerances = DEFAULT, oracle: bool = True,
                         record_branches: bool = False) -> SpectralFlowReport:
    """Crossing count around a loop, including the seam from the last node back to the first."""
    if fam.grid.kind != "circle":
        raise GeometryError("spectral_flow_circle needs a circle grid")
    _check_endpoint(fam.matrices[0], "base node", tol)
    return _crossing_report(fam, tol, oracle, record_branches, closed=True)


# ---------------------------------------------------------------------------
# partition oracle
# ---------------------------------------------------------------------------

def _window(w, spread):
    """Smallest ``ε`` with ``±ε`` farther than ``spread`` from every eigenvalue in ``w``."""
    a = np.unique(np.abs(w))
    edges = np.concatenate([[0.0], a[a > 0]])
    for u, v in zip(edges[:-1], edges[1:]):
        if 0.5 * (v - u) > spread:
            return 0.5 * (u + v)
    top = edges[-1] + 1.0
    return top if 1.0 > spread else None


def _count(w, eps):
    return int(np.count_nonzero((w >= 0) & (w < eps)))


def _partition_segment(Sa, Sb, tol, depth):
    wa = np.linalg.eigvalsh(Sa)
    spread = float(np.linalg.norm(Sb - Sa, 2))
    eps = _window(wa, spread)
    if eps is None:
        if depth >= tol.max_depth:
            raise ResolutionError("partition oracle could not find a spectral window after "
                                  f"{depth} refinements")
        Sm = 0.5 * (Sa + Sb)
        return _partition_segment(Sa, Sm, tol, depth + 1) + _partition_segment(Sm, Sb, tol, depth + 1)
    wb = np.linalg.eigvalsh(Sb)
    return _count(wb, eps) - _count(wa, eps)


def _partition(fam, tol, closed):
    flows = []
    for mats in _per_block(fam):
        N = mats.shape[0]
        segs = N if closed else N - 1
        flows.append(sum(_partition_segment(mats[k], mats[(k + 1) % N], tol, 0) for k in range(segs)))
    return _collect(fam, flows)


def spectral_flow_partition(fam: PotentialFamily, tol: Tolerances = DEFAULT) -> Flow:
    """Telescoping window count ``Σ_k #[0,ε_k)(S_{k+1}) - #[0,ε_k)(S_k)``.

    On each segment ``ε_k`` is the smallest gap midpoint in ``{0} ∪ |spec S_k|``
    whose distance to the spectrum beats ``‖S_{k+1} - S_k‖``; by Weyl's
    inequality no eigenvalue of the interpolant then touches ``±ε_k``.
    Segments without such a window are bisected.
    """
    if fam.grid.kind == "line":
        _check_endpoint(fam.matrices[0], "left end", tol)
        _check_endpoint(fam.matrices[-1], "right end", tol)
        return _partition(fam, tol, False)
    _check_endpoint(fam.matrices[0], "base node", tol)
    return _partition(fam, tol, True)
