"""Grids, node-sampled potential families and their standing-assumption checks.

A :class:`PotentialFamily` is the sampled family ``x -> S(x)`` of Hermitian
matrices on a :class:`Grid1D`, together with the compact set ``K`` and the
disjoint cover ``{V_j}`` of its complement.  Families remember how they were
produced (``profile``) so that they can be re-sampled on finer grids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import block_diag

from . import numerics
from .config import DEFAULT, Tolerances
from .errors import (
    AssumptionError,
    CutError,
    GeometryError,
    PreconditionError,
    SmoothingError,
    SymmetryError,
    UnknownFamilyError,
)

Profile = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Grid1D:
    kind: str
    nodes: np.ndarray
    spacing: float
    end_margins: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("line", "circle"):
            raise GeometryError(f"unknown grid kind {self.kind!r}")
        nodes = np.asarray(self.nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "end_margins", tuple(float(m) for m in self.end_margins))
        if nodes.ndim != 1 or nodes.size < 3:
            raise GeometryError("a grid needs at least 3 nodes")
        if not self.spacing > 0:
            raise GeometryError("spacing must be positive")
        d = np.diff(nodes)
        if np.any(d <= 0):
            raise GeometryError("nodes must be strictly increasing")
        if np.max(np.abs(d - self.spacing)) > 1e-12 * max(1.0, abs(self.spacing)) * 10 * nodes.size:
            raise GeometryError("node spacing is not uniform")
        if self.kind == "circle":
            if any(self.end_margins):
                raise GeometryError("circle grids have no end margins")
            if nodes[0] < 0 or nodes[-1] >= 2 * np.pi:
                raise GeometryError("circle nodes must be angles in [0, 2*pi)")
        elif min(self.end_margins) < 0:
            raise GeometryError("end margins must be nonnegative")

    @classmethod
    def line(cls, start: float, stop: float, spacing: float, end_margins=(0.0, 0.0)) -> "Grid1D":
        if not stop > start:
            raise GeometryError(f"empty extent [{start}, {stop}]")
        count = int(round((stop - start) / spacing)) + 1
        if count < 3:
            raise GeometryError("a grid needs at least 3 nodes")
        h = (stop - start) / (count - 1)
        nodes = start + h * np.arange(count)
        nodes[-1] = stop
        return cls("line", nodes, h, end_margins)

    @classmethod
    def circle(cls, count: int) -> "Grid1D":
        h = 2 * np.pi / count
        return cls("circle", h * np.arange(count), h)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def extent(self):
        return float(self.nodes[0]), float(self.nodes[-1])

    @property
    def core_extent(self):
        """Extent without the appended cylinder ends."""
        a, b = self.extent
        return a + self.end_margins[0], b - self.end_margins[1]

    def to_dict(self):
        return {
            "kind": self.kind,
            "extent": list(self.extent),
            "spacing": self.spacing,
            "size": self.size,
            "end_margins": list(self.end_margins),
        }


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoverPatch:
    """One set ``V_j`` of the cover of ``M \\ K`` (inclusive node range)."""
    start: int
    stop: int
    anchor: int
    bound: float

    def nodes(self):
        return range(self.start, self.stop + 1)

    def __contains__(self, i):
        return self.start <= i <= self.stop


@dataclass(frozen=True, eq=False)
class PotentialFamily:
    grid: Grid1D
    matrices: np.ndarray
    compact: Optional[tuple] = None
    cover: tuple = ()
    blocks: Optional[tuple] = None
    profile: Optional[Profile] = None
    compact_interval: Optional[tuple] = None
    name: str = "family"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        S = np.asarray(self.matrices)
        if S.ndim != 3 or S.shape[1] != S.shape[2]:
            raise ValueError(f"matrices must have shape (N, n, n), got {S.shape}")
        if S.shape[0] != self.grid.size:
            raise ValueError("one matrix per grid node is required")
        if not np.iscomplexobj(S):
            S = S.astype(float)
        gap = float(np.max(np.abs(S - np.conj(np.swapaxes(S, 1, 2))))) if S.size else 0.0
        if gap > DEFAULT.hermitian:
            i = int(np.argmax(np.max(np.abs(S - np.conj(np.swapaxes(S, 1, 2))), axis=(1, 2))))
            raise SymmetryError(f"matrix at node {i} is not Hermitian ({gap:.2e})", gap)
        if gap > 0:
            S = 0.5 * (S + np.conj(np.swapaxes(S, 1, 2)))
        if np.iscomplexobj(S) and not np.any(S.imag):
            S = S.real.copy()
        S = np.ascontiguousarray(S)
        S.setflags(write=False)
        object.__setattr__(self, "matrices", S)
        N = S.shape[0]

        if self.compact is None:
            object.__setattr__(self, "compact", (0, N - 1))
        k0, k1 = (int(v) for v in self.compact)
        if not 0 <= k0 <= k1 <= N - 1:
            raise GeometryError(f"compact range {self.compact} outside grid")
        object.__setattr__(self, "compact", (k0, k1))

        cover = tuple(self.cover)
        object.__setattr__(self, "cover", cover)
        seen = np.zeros(N, dtype=int)
        for p in cover:
            if not 0 <= p.start <= p.stop <= N - 1:
                raise GeometryError(f"cover patch {p} outside grid")
            if p.anchor not in p:
                raise GeometryError(f"anchor of {p} must lie in the patch")
            if not 0 < p.bound < 1:
                raise GeometryError(f"a_j must lie in (0,1), got {p.bound}")
            seen[p.start:p.stop + 1] += 1
        outside = np.ones(N, dtype=bool)
        outside[k0:k1 + 1] = False
        if np.any(seen > 1):
            raise GeometryError("cover patches must be pairwise disjoint")
        if np.any(seen[outside] != 1) or np.any(seen[~outside] != 0):
            raise GeometryError("cover must partition the nodes outside K")

        if self.blocks is not None:
            blocks = tuple(int(b) for b in self.blocks)
            if sum(blocks) != S.shape[1] or min(blocks) < 1:
                raise GeometryError(f"blocks {blocks} do not partition dimension {S.shape[1]}")
            object.__setattr__(self, "blocks", blocks)
            mask = block_mask(blocks)
            off = np.max(np.abs(S[:, ~mask])) if np.any(~mask) else 0.0
            if off > DEFAULT.block_offdiag:
                raise GeometryError(f"matrices are not block diagonal (off-block entry {off:.2e})")

    # -- basic views -------------------------------------------------------
    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    @property
    def size(self) -> int:
        return self.matrices.shape[0]

    def __getitem__(self, i) -> np.ndarray:
        return self.matrices[i]

    def block_slices(self):
        sizes = self.blocks or (self.n,)
        out, s = [], 0
        for b in sizes:
            out.append(slice(s, s + b))
            s += b
        return out

    def block(self, b: int) -> "PotentialFamily":
        sl = self.block_slices()[b]
        prof = None
        if self.profile is not None:
            base = self.profile
            prof = lambda x: base(x)[:, sl, sl]  # noqa: E731
        return replace(self, matrices=self.matrices[:, sl, sl], blocks=None, profile=prof,
                       name=f"{self.name}[block {b}]", meta=dict(self.meta))

    def with_matrices(self, matrices, profile=None, name=None, **kw) -> "PotentialFamily":
        return replace(self, matrices=matrices, profile=profile, name=name or self.name,
                       meta=kw.pop("meta", dict(self.meta)), **kw)

    def is_constant(self) -> bool:
        return bool(np.all(self.matrices == self.matrices[0]))

    def reversed(self) -> "PotentialFamily":
        """The family traversed in the opposite direction (``x -> -x``)."""
        g = self.grid
        if g.kind != "line":
            raise GeometryError("reversal is defined for line grids")
        grid = Grid1D("line", -g.nodes[::-1], g.spacing, g.end_margins[::-1])
        N = self.size
        k0, k1 = self.compact
        cover = tuple(CoverPatch(N - 1 - p.stop, N - 1 - p.start, N - 1 - p.anchor, p.bound)
                      for p in self.cover)[::-1]
        prof = None
        if self.profile is not None:
            base = self.profile
            prof = lambda x: base(-np.asarray(x, dtype=float))  # noqa: E731
        ki = None if self.compact_interval is None else (-self.compact_interval[1], -self.compact_interval[0])
        return PotentialFamily(grid, self.matrices[::-1], (N - 1 - k1, N - 1 - k0), cover, self.blocks,
                               prof, ki, self.name + "[reversed]", dict(self.meta))

    def evaluate(self, x) -> np.ndarray:
        """Matrices at arbitrary coordinates (profile, else piecewise-linear)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.profile is not None:
            return np.asarray(self.profile(x))
        return interpolate_nodes(self.grid, self.matrices, x)

    def resample(self, grid: Grid1D) -> "PotentialFamily":
        """The same family on another grid, with K and the cover carried over in coordinates."""
        if grid.kind != self.grid.kind:
            raise GeometryError("cannot resample across grid kinds")
        mats = self.evaluate(grid.nodes)
        if self.grid.kind == "circle":
            return PotentialFamily(grid, mats, None, (), self.blocks, self.profile, None, self.name, dict(self.meta))
        interval = self.compact_interval
        if interval is None:
            k0, k1 = self.compact
            interval = (float(self.grid.nodes[k0]), float(self.grid.nodes[k1]))
        bounds = [p.bound for p in self.cover]
        compact, cover = standard_cover(grid, interval, bounds or None)
        return PotentialFamily(grid, mats, compact, cover, self.blocks, self.profile, interval,
                               self.name, dict(self.meta))

    def to_dict(self):
        return {
            "name": self.name,
            "n": self.n,
            "grid": self.grid.to_dict(),
            "compact": list(self.compact),
            "cover": [dict(start=p.start, stop=p.stop, anchor=p.anchor, bound=p.bound) for p in self.cover],
            "blocks": list(self.blocks) if self.blocks else None,
        }


def block_mask(blocks: Sequence[int]) -> np.ndarray:
    n = sum(blocks)
    mask = np.zeros((n, n), dtype=bool)
    s = 0
    for b in blocks:
        mask[s:s + b, s:s + b] = True
        s += b
    return mask


def interpolate_nodes(grid: Grid1D, mats: np.ndarray, x: np.ndarray) -> np.ndarray:
    nodes = grid.nodes
    if grid.kind == "circle":
        xs = np.append(nodes, 2 * np.pi)
        ms = np.concatenate([mats, mats[:1]])
        x = np.mod(x, 2 * np.pi)
    else:
        xs, ms = nodes, mats
        x = np.clip(x, nodes[0], nodes[-1])
    j = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
    t = ((x - xs[j]) / (xs[j + 1] - xs[j]))[:, None, None]
    return (1 - t) * ms[j] + t * ms[j + 1]


def standard_cover(grid: Grid1D, interval, bounds=None, anchors=None):
    """K as the nodes inside ``interval`` and the two-sided cover of its complement.

    ``anchors`` defaults to the outermost node of each side; an empty K
    collapses to the single node nearest the interval midpoint.
    """
    x = grid.nodes
    lo, hi = float(interval[0]), float(interval[1])
    eps = 1e-9 * grid.spacing
    inside = np.nonzero((x >= lo - eps) & (x <= hi + eps))[0]
    if inside.size == 0:
        mid = int(np.argmin(np.abs(x - 0.5 * (lo + hi))))
        k0 = k1 = mid
    else:
        k0, k1 = int(inside[0]), int(inside[-1])
    N = grid.size
    bounds = list(bounds) if bounds else [0.5, 0.5]
    if len(bounds) == 1:
        bounds = bounds * 2
    anchors = list(anchors) if anchors else [None, None]
    cover = []
    if k0 > 0:
        a = anchors[0] if anchors[0] is not None else 0
        cover.append(CoverPatch(0, k0 - 1, int(a), float(bounds[0])))
    if k1 < N - 1:
        a = anchors[-1] if anchors[-1] is not None else N - 1
        cover.append(CoverPatch(k1 + 1, N - 1, int(a), float(bounds[-1])))
    return (k0, k1), tuple(cover)


# ---------------------------------------------------------------------------
# builtin descriptors
# ---------------------------------------------------------------------------

def _hermitian_param(value, default):
    if value is None:
        value = default
    M = np.atleast_2d(np.asarray(decode_matrix(value)))
    return numerics.hermitian(M)


def decode_matrix(value):
    """Accept nested lists of numbers or of ``[re, im]`` pairs."""
    arr = np.asarray(value)
    if arr.dtype == object:
        raise ValueError("ragged matrix")
    if arr.ndim == 3 and arr.shape[-1] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    return arr


def encode_matrix(M):
    M = np.asarray(M)
    return [[[float(v.real), float(v.imag)] for v in row] for row in M]


_SCALAR_PROFILES = {
    "tanh": np.tanh,
    "arctan": lambda t: (2 / np.pi) * np.arctan(t),
    "piecewise-linear": lambda t: np.clip(t, -1.0, 1.0),
}


def _scalar_profile(spec, grid):
    kind = spec.get("profile", "tanh")
    if kind not in _SCALAR_PROFILES:
        raise UnknownFamilyError(f"unknown scalar profile {kind!r}")
    f = _SCALAR_PROFILES[kind]
    A = _hermitian_param(spec.get("A"), [[1.0]])
    B = _hermitian_param(spec.get("B"), np.zeros_like(A))
    if A.shape != B.shape:
        raise ValueError("A and B must have the same shape")
    width = float(spec.get("width", 1.0))
    center = float(spec.get("center", 0.0))
    scale = float(spec.get("scale", 1.0))

    def profile(x):
        t = f((np.asarray(x, dtype=float) - center) / width)
        return scale * (t[:, None, None] * A + B)

    return profile, None, (center - 2 * width, center + 2 * width)


def _constant(spec, grid):
    C = _hermitian_param(spec.get("C", spec.get("value")), [[1.0]])
    scale = float(spec.get("scale", 1.0))

    def profile(x):
        return np.broadcast_to(scale * C, (np.size(x),) + C.shape).copy()

    mid = 0.5 * (grid.nodes[0] + grid.nodes[-1])
    return profile, None, (mid, mid)


def _pauli_rotation(spec, grid):
    w = float(spec.get("winding", 1))
    scale = float(spec.get("scale", 1.0))
    s1 = np.array([[0, 1], [1, 0]], dtype=float)
    s3 = np.array([[1, 0], [0, -1]], dtype=float)

    def profile(x):
        x = np.asarray(x, dtype=float)
        return scale * (np.cos(w * x)[:, None, None] * s3 + np.sin(w * x)[:, None, None] * s1)

    return profile, None, None


def _random_smooth(spec, grid):
    n = int(spec.get("n", 2))
    seed = spec.get("seed", 0)
    degree = int(spec.get("degree", 4))
    amplitude = float(spec.get("amplitude", 1.0))
    width = float(spec.get("width", 1.0))
    window = float(spec.get("window", 6.0))
    real = bool(spec.get("real", False))
    scale = float(spec.get("scale", 1.0))
    rng = np.random.default_rng(seed)
    coeffs = [(numerics.random_hermitian(rng, n, real) / (k + 1),
               numerics.random_hermitian(rng, n, real) / (k + 1)) for k in range(degree + 1)]

    if grid.kind == "circle":
        def profile(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros((x.size, n, n), dtype=float if real else complex)
            for k, (C, D) in enumerate(coeffs):
                out += np.cos(k * x)[:, None, None] * C + np.sin(k * x)[:, None, None] * D
            return scale * amplitude * out
        return profile, None, None

    def end_matrix():
        mags = rng.uniform(0.5, 1.5, n)
        signs = rng.choice([-1.0, 1.0], n)
        U = numerics.random_unitary(rng, n, real)
        M = (U * (signs * mags)) @ U.conj().T
        return 0.5 * (M + M.conj().T)

    S_left, S_right = end_matrix(), end_matrix()

    def profile(x):
        x = np.asarray(x, dtype=float)
        w = 0.5 * (1 + np.tanh(x / width))
        bump = 1.0 / np.cosh(x / width) ** 2
        phase = np.pi * x / window
        R = np.zeros((x.size, n, n), dtype=float if real else complex)
        for k, (C, D) in enumerate(coeffs):
            R += np.cos(k * phase)[:, None, None] * C + np.sin(k * phase)[:, None, None] * D
        out = ((1 - w)[:, None, None] * S_left + w[:, None, None] * S_right
               + amplitude * bump[:, None, None] * R)
        return scale * out

    return profile, None, (-3 * width, 3 * width)


def _direct_sum(spec, grid):
    parts = spec.get("parts")
    if not parts:
        raise ValueError("direct-sum needs a non-empty 'parts' list")
    built = [_descriptor(p, grid) for p in parts]
    profiles = [b[0] for b in built]
    blocks = []
    for (prof, blk, _), p in zip(built, parts):
        dim = prof(grid.nodes[:1]).shape[1]
        blocks.extend(blk or (dim,))
    intervals = [b[2] for b in built if b[2] is not None]

    def profile(x):
        mats = [pr(x) for pr in profiles]
        return np.stack([block_diag(*[m[i] for m in mats]) for i in range(mats[0].shape[0])])

    interval = None
    if intervals:
        interval = (min(i[0] for i in intervals), max(i[1] for i in intervals))
    return profile, tuple(blocks), interval


def _block_random(spec, grid):
    sizes = spec.get("sizes", [1, 1, 1])
    seed = spec.get("seed", 0)
    parts = []
    for k, m in enumerate(sizes):
        part = {key: v for key, v in spec.items() if key not in ("name", "sizes", "seed")}
        base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
        part.update(name="random-smooth", n=int(m), seed=base + [k])
        parts.append(part)
    return _direct_sum({"parts": parts}, grid)


def _file_sampled(spec, grid):
    if "path" in spec:
        data = json.loads(Path(spec["path"]).read_text())
    else:
        data = spec.get("data")
    xs, mats = read_matrix_document(data)
    src = Grid1D(grid.kind, xs, float(xs[1] - xs[0]) if xs.size > 1 else 1.0)

    def profile(x):
        return interpolate_nodes(src, mats, np.asarray(x, dtype=float))

    return profile, None, None


def read_matrix_document(data):
    """Parse the node-list interchange format into coordinates and matrices.

    ``{"nodes": [{"x": float, "matrix": [[[re, im], ...], ...]}, ...]}``;
    a bare list of nodes is accepted too.
    """
    nodes = data["nodes"] if isinstance(data, dict) else data
    if not nodes:
        raise ValueError("matrix document has no nodes")
    xs = np.array([float(node["x"]) for node in nodes])
    mats = np.stack([np.asarray(decode_matrix(node["matrix"]), dtype=complex) for node in nodes])
    for i, M in enumerate(mats):
        if M.shape[0] != M.shape[1] or M.shape != mats[0].shape:
            raise ValueError(f"node {i}: matrices must be square and of equal size")
        gap = numerics.asymmetry(M)
        if gap > DEFAULT.hermitian:
            raise SymmetryError(f"node {i}: matrix is not Hermitian ({gap:.2e})", gap)
    if np.any(np.diff(xs) <= 0):
        raise ValueError("node coordinates must be strictly increasing")
    return xs, mats


def write_matrix_document(fam: PotentialFamily) -> dict:
    return {"nodes": [{"x": float(x), "matrix": encode_matrix(M)}
                      for x, M in zip(fam.grid.nodes, fam.matrices)]}


FAMILIES = {
    "scalar-profile": _scalar_profile,
    "constant": _constant,
    "pauli-rotation": _pauli_rotation,
    "random-smooth": _random_smooth,
    "block-random": _block_random,
    "direct-sum": _direct_sum,
    "file-sampled": _file_sampled,
}


def _descriptor(spec, grid):
    name = spec.get("name")
    if name not in FAMILIES:
        raise UnknownFamilyError(f"unknown family descriptor {name!r}; known: {sorted(FAMILIES)}")
    return FAMILIES[name](spec, grid)


def build_family(spec: dict, grid: Grid1D) -> PotentialFamily:
    """Sample a builtin descriptor on ``grid``.

    ``spec`` holds ``name`` plus descriptor parameters, and optionally
    ``compact`` (coordinate interval for K), ``bounds`` (declared a_j),
    ``anchors`` (node indices x_j) and ``blocks``.
    """
    profile, blocks, interval = _descriptor(spec, grid)
    mats = np.asarray(profile(grid.nodes))
    if np.iscomplexobj(mats) and not np.any(mats.imag):
        mats = mats.real
    blocks = tuple(spec["blocks"]) if spec.get("blocks") else blocks
    name = spec.get("label") or spec["name"]
    meta = {"descriptor": dict(spec)}
    if grid.kind == "circle":
        return PotentialFamily(grid, mats, None, (), blocks, profile, None, name, meta)
    if spec.get("compact") is not None:
        interval = tuple(float(v) for v in spec["compact"])
    if interval is None:
        interval = grid.extent
    compact, cover = standard_cover(grid, interval, spec.get("bounds"), spec.get("anchors"))
    return PotentialFamily(grid, mats, compact, cover, blocks, profile, interval, name, meta)


# ---------------------------------------------------------------------------
# standing assumptions
# ---------------------------------------------------------------------------

@dataclass
class PatchCertificate:
    patch: CoverPatch
    measured: float              # sup_x ||(S(x) - S(x_j)) S(x_j)^{-1}||
    witness: int                 # node attaining the sup
    anchor_inverse_norm: float   # ||S(x_j)^{-1}||
    neumann_inverse_bound: float  # ||S(x_j)^{-1}|| / (1 - a_j)
    measured_inverse_norm: float  # sup_x ||S(x)^{-1}|| on V_j
    graph_up: float              # sup ||(S(x) ± i)(S(x_j) ± i)^{-1}||
    graph_down: float            # sup ||(S(x_j) ± i)(S(x) ± i)^{-1}||

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "patch"}
        d["patch"] = dict(start=self.patch.start, stop=self.patch.stop,
                          anchor=self.patch.anchor, bound=self.patch.bound)
        return d


@dataclass
class AssumptionReport:
    a3_min_sigma_outside_K: float
    a4_bounds: tuple
    a2_modulus: float
    patches: list
    passes: dict

    @property
    def graph_norm_ratio(self):
        return tuple((p.graph_up, p.graph_down) for p in self.patches)

    @property
    def ok(self) -> bool:
        return all(self.passes.values())

    def to_dict(self):
        return {
            "a3_min_sigma_outside_K": self.a3_min_sigma_outside_K,
            "a4_bounds": list(self.a4_bounds),
            "a2_modulus": self.a2_modulus,
            "patches": [p.to_dict() for p in self.patches],
            "passes": dict(self.passes),
        }


def _norms(X):
    if X.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.norm(X, ord=2, axis=(1, 2))


def verify_assumptions(fam: PotentialFamily, tol: Tolerances = DEFAULT) -> AssumptionReport:
    """Compute the A2-A4' certificates from the sampled matrices."""
    S = fam.matrices
    N, n = fam.size, fam.n
    k0, k1 = fam.compact
    outside = np.ones(N, dtype=bool)
    outside[k0:k1 + 1] = False
    if np.any(outside):
        sig = np.linalg.svd(S[outside], compute_uv=False)[:, -1]
        a3 = float(np.min(sig))
    else:
        a3 = math.inf

    diffs = np.diff(S, axis=0)
    if fam.grid.kind == "circle":
        diffs = np.concatenate([diffs, (S[0] - S[-1])[None]])
    a2 = float(np.max(_norms(diffs))) if diffs.shape[0] else 0.0

    eye = np.eye(n)
    certs = []
    for j, p in enumerate(fam.cover):
        Sj = S[p.anchor]
        sj = np.linalg.svd(Sj, compute_uv=False)
        if sj[-1] <= 1e-14 * max(1.0, sj[0]):
            raise AssumptionError(f"A4': S(x_{j}) at node {p.anchor} is singular", "A4'", p.anchor)
        Sj_inv = np.linalg.inv(Sj)
        V = S[p.start:p.stop + 1]
        rel = _norms((V - Sj) @ Sj_inv)
        w = int(np.argmax(rel))
        up = down = 0.0
        for sgn in (1j, -1j):
            Rj = np.linalg.inv(Sj + sgn * eye)
            Rx = np.linalg.inv(V + sgn * eye)
            up = max(up, float(np.max(_norms((V + sgn * eye) @ Rj))))
            down = max(down, float(np.max(_norms((Sj + sgn * eye) @ Rx))))
        sig_v = np.linalg.svd(V, compute_uv=False)[:, -1]
        inv_norm = float(1.0 / sj[-1])
        certs.append(PatchCertificate(
            patch=p,
            measured=float(rel[w]),
            witness=p.start + w,
            anchor_inverse_norm=inv_norm,
            neumann_inverse_bound=inv_norm / (1 - p.bound),
            measured_inverse_norm=float(np.max(1.0 / sig_v)) if np.all(sig_v > 0) else math.inf,
            graph_up=up,
            graph_down=down,
        ))
    passes = {
        "A1": True,  # finite truncation: common domain, compact inclusion
        "A2": bool(np.isfinite(a2)),
        "A3": bool(a3 > 0),
        "A4'": all(c.measured <= c.patch.bound and c.patch.bound < 1 for c in certs),
    }
    return AssumptionReport(a3, tuple(c.measured for c in certs), a2, certs, passes)


def end_gap(fam: PotentialFamily) -> float:
    """The constant ``c`` of A3: smallest singular value outside K."""
    return verify_assumptions(fam).a3_min_sigma_outside_K


# ---------------------------------------------------------------------------
# family transformations
# ---------------------------------------------------------------------------

def rescale(fam: PotentialFamily, lam: float) -> PotentialFamily:
    lam = float(lam)
    if not lam > 0:
        raise ValueError(f"rescaling factor must be positive, got {lam}")
    if lam == 1.0:
        return fam
    prof = None
    if fam.profile is not None:
        base = fam.profile
        prof = lambda x: lam * np.asarray(base(x))  # noqa: E731
    return fam.with_matrices(lam * fam.matrices, prof, name=f"{fam.name}*{lam:g}")


def _inner_edge(fam, p):
    """Coordinate of the K boundary adjacent to patch ``p`` and the direction away from K."""
    k0, k1 = fam.compact
    x = fam.grid.nodes
    if p.stop < k0:
        return x[k0], -1.0
    return x[k1], 1.0


def make_constant_ends(fam: PotentialFamily, collar: float = 1.0) -> PotentialFamily:
    """Interpolate each cover patch to ``S(x_j)`` across a collar next to K, then freeze it.

    Patches that are already frozen to ``S(x_j)`` beyond the collar are left
    untouched, which makes the operation idempotent.
    """
    if fam.grid.kind != "line":
        raise GeometryError("constant ends are defined on line grids")
    if not fam.cover:
        return fam
    x = fam.grid.nodes
    S = np.array(fam.matrices)
    changed = False
    frozen = []
    for p in fam.cover:
        edge, direction = _inner_edge(fam, p)
        idx = np.arange(p.start, p.stop + 1)
        dist = direction * (x[idx] - edge)
        if collar > dist.max() + 1e-12:
            raise GeometryError(f"collar width {collar} exceeds cover patch {p} (length {dist.max():.3g})")
        r = np.clip(dist / collar, 0.0, 1.0) if collar > 0 else np.ones_like(dist)
        Sj = fam.matrices[p.anchor]
        beyond = idx[r >= 1.0]
        if np.all(fam.matrices[beyond] == Sj):
            continue
        changed = True
        S[idx] = (1 - r)[:, None, None] * fam.matrices[idx] + r[:, None, None] * Sj
        S[beyond] = Sj
        frozen.append((edge, direction, x[p.anchor], Sj))
    if not changed:
        return fam
    prof = None
    if fam.profile is not None:
        base = fam.profile

        def prof(xq, _f=tuple(frozen)):
            xq = np.asarray(xq, dtype=float)
            out = np.array(base(xq))
            out = out.astype(np.result_type(out, S))
            for edge, direction, _, Sj in _f:
                d = direction * (xq - edge)
                sel = d > 0
                if not np.any(sel):
                    continue
                rr = np.clip(d[sel] / collar, 0.0, 1.0) if collar > 0 else np.ones(np.count_nonzero(sel))
                out[sel] = (1 - rr)[:, None, None] * out[sel] + rr[:, None, None] * Sj
            return out
    meta = dict(fam.meta)
    meta["collar"] = collar
    return fam.with_matrices(S, prof, name=f"{fam.name}+const-ends", meta=meta)


@dataclass
class SmoothingReport:
    width: float
    derivative_bound: float
    kato_rellich: float


def smooth_family(fam: PotentialFamily, width: float, tol: Tolerances = DEFAULT) -> PotentialFamily:
    """Entrywise truncated-Gaussian mollification along the nodes.

    Only nodes within three widths of K are touched; locally constant nodes
    are a fixed point.  The result must stay in the Kato-Rellich ball
    ``||(S' - S)(S ± i)^{-1}|| < 1/2`` at every node.
    """
    h = fam.grid.spacing
    if width < 2 * h - 1e-12:
        raise ValueError(f"smoothing width {width} is below two grid spacings ({2 * h})")
    m = int(math.ceil(3 * width / h))
    offsets = np.arange(-m, m + 1)
    weights = np.exp(-0.5 * (offsets * h / width) ** 2)
    S = fam.matrices
    N = fam.size
    circle = fam.grid.kind == "circle"
    k0, k1 = fam.compact
    active = np.zeros(N, dtype=bool)
    if circle:
        active[:] = True
    else:
        active[max(0, k0 - m):min(N, k1 + m + 1)] = True
    out = np.array(S)
    for i in np.nonzero(active)[0]:
        j = i + offsets
        if circle:
            j = j % N
            w = weights
        else:
            ok = (j >= 0) & (j < N)
            j, w = j[ok], weights[ok]
        nb = S[j]
        if np.all(nb == S[i]):
            continue
        out[i] = np.tensordot(w, nb, axes=1) / w.sum()
    eye = np.eye(fam.n)
    kr = 0.0
    for sgn in (1j, -1j):
        kr = max(kr, float(np.max(_norms((out - S) @ np.linalg.inv(S + sgn * eye)))))
    if kr >= tol.kato_rellich:
        raise SmoothingError(
            f"smoothing moved the family outside the Kato-Rellich ball ({kr:.3f} >= "
            f"{tol.kato_rellich}); use a smaller width than {width}")
    d = np.diff(out, axis=0)
    if circle:
        d = np.concatenate([d, (out[0] - out[-1])[None]])
    rep = SmoothingReport(width, float(np.max(_norms(d))) / h, kr)
    meta = dict(fam.meta)
    meta["smoothing"] = rep
    return fam.with_matrices(out, None, name=f"{fam.name}+smooth({width:g})", meta=meta)


def trivialising_perturbation(fam: PotentialFamily, node: int, tol: Tolerances = DEFAULT):
    """``A0 = P_[-1,1](S(x0))`` and the node range around ``x0`` where ``S + 2 A0`` stays invertible."""
    if not 0 <= node < fam.size:
        raise IndexError(f"node {node} outside grid of {fam.size} nodes")
    try:
        A0 = numerics.spectral_projection(fam.matrices[node], (-1.0, 1.0), tol)
    except CutError as exc:
        raise CutError(
            f"eigenvalue {exc.eigenvalue!r} of S(x0) sits on the cut at ±1; "
            f"shift the interval to [-1-δ, 1+δ]", exc.eigenvalue) from exc
    shifted = fam.matrices + 2 * A0
    sig = np.linalg.svd(shifted, compute_uv=False)[:, -1]
    good = sig > tol.trivialising_sigma
    if not good[node]:
        raise PreconditionError("S(x0) + 2 A0 is not invertible at the base node")
    lo = node
    while lo > 0 and good[lo - 1]:
        lo -= 1
    hi = node
    while hi < fam.size - 1 and good[hi + 1]:
        hi += 1
    return A0, (lo, hi)


def attach_cylinder_ends(fam: PotentialFamily, length: float) -> PotentialFamily:
    """Extend the line by ``ceil(length/h)`` nodes per side, continuing the end values."""
    if fam.grid.kind != "line":
        raise GeometryError("cylinder ends attach to line grids")
    if length < 0:
        raise ValueError("cylinder length must be nonnegative")
    if length == 0:
        return fam
    S = fam.matrices
    for end, nb in ((0, 1), (-1, -2)):
        if not np.array_equal(S[end], S[nb]):
            raise PreconditionError(
                "family is not constant on its outermost nodes; run make_constant_ends first")
    g = fam.grid
    h = g.spacing
    k = int(math.ceil(length / h - 1e-9))
    nodes = np.concatenate([g.nodes[0] - h * np.arange(k, 0, -1), g.nodes, g.nodes[-1] + h * np.arange(1, k + 1)])
    grid = Grid1D("line", nodes, h, (g.end_margins[0] + k * h, g.end_margins[1] + k * h))
    mats = np.concatenate([np.repeat(S[:1], k, axis=0), S, np.repeat(S[-1:], k, axis=0)])
    k0, k1 = fam.compact
    N = grid.size
    cover = []
    for p in fam.cover:
        if p.start == 0:
            cover.append(CoverPatch(0, p.stop + k, 0 if p.anchor == 0 else p.anchor + k, p.bound))
        elif p.stop == fam.size - 1:
            cover.append(CoverPatch(p.start + k, N - 1, N - 1 if p.anchor == fam.size - 1 else p.anchor + k, p.bound))
        else:
            cover.append(CoverPatch(p.start + k, p.stop + k, p.anchor + k, p.bound))
    meta = dict(fam.meta)
    meta["cylinder"] = meta.get("cylinder", 0.0) + k * h
    return PotentialFamily(grid, mats, (k0 + k, k1 + k), tuple(cover), fam.blocks, fam.profile,
                           fam.compact_interval, fam.name, meta)


def default_end_margin(fam: PotentialFamily, tol: Tolerances = DEFAULT, cap: Optional[float] = None) -> float:
    """End-margin rule ``L >= 12 / c`` with ``c`` the A3 constant."""
    c = end_gap(fam)
    if not c > 0 or not math.isfinite(c):
        raise AssumptionError("A3 fails: no positive gap outside K", "A3")
    L = tol.end_margin_factor / c
    return min(L, cap) if cap is not None else L


def interpolate_families(f0: PotentialFamily, f1: PotentialFamily, t: float) -> PotentialFamily:
    """Linear homotopy ``(1 - t) S0 + t S1`` on a shared grid."""
    if f0.size != f1.size or f0.n != f1.n:
        raise GeometryError("homotopy endpoints must share grid and fibre dimension")
    if t == 0:
        return f0
    if t == 1:
        return f1
    S = (1 - t) * f0.matrices + t * f1.matrices
    prof = None
    if f0.profile is not None and f1.profile is not None:
        p0, p1 = f0.profile, f1.profile
        prof = lambda x: (1 - t) * np.asarray(p0(x)) + t * np.asarray(p1(x))  # noqa: E731
    return f0.with_matrices(S, prof, name=f"H^{t:g}[{f0.name} -> {f1.name}]")
