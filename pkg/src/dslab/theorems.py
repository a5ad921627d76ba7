"""Executable checks of the index identities over seeded family ensembles.

Every check returns a :class:`TheoremCheckResult`.  An instance whose
family fails the standing assumptions is *inadmissible* and is recorded
apart from theorem failures; an engine error inside an instance counts as
a failure and is stored with everything needed to rerun that instance.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import numerics
from .config import DEFAULT, Tolerances
from .discretize import assemble_dirac_schrodinger, build_parametrix
from .errors import AssumptionError, DSLabError, PreconditionError
from .family import (
    Grid1D,
    PotentialFamily,
    build_family,
    default_end_margin,
    interpolate_families,
    make_constant_ends,
    rescale,
    smooth_family,
    standard_cover,
    verify_assumptions,
)
from .index import convergence_study, doubled_fiber, prepare
from .sflow import spectral_flow_crossing

PASS, FAIL, INADMISSIBLE = "pass", "fail", "hypothesis-failure"


@dataclass
class TheoremCheckResult:
    theorem: str
    instances: int = 0
    failures: list = field(default_factory=list)
    inadmissible: list = field(default_factory=list)
    values: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def verdict(self) -> str:
        if self.failures:
            return FAIL
        if self.inadmissible:
            return INADMISSIBLE
        return PASS

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self):
        return {
            "theorem": self.theorem,
            "verdict": self.verdict,
            "instances": self.instances,
            "failures": self.failures,
            "inadmissible": self.inadmissible,
            "values": self.values,
            "seconds": self.seconds,
        }


class HypothesisFailure(AssumptionError):
    pass


@dataclass(frozen=True)
class EnsembleSpec:
    """Seeded ensemble of ``random-smooth`` (or ``block-random``) line families."""
    count: int = 50
    n_max: int = 6
    master_seed: int = 20240
    spacing: float = 0.1
    extent: tuple = (-6.0, 6.0)
    width: float = 1.0
    amplitude: float = 1.0
    end_margin: float = 2.0
    real: bool = False
    blocks: Optional[tuple] = None

    @classmethod
    def from_dict(cls, d) -> "EnsembleSpec":
        if d is None:
            return cls()
        if isinstance(d, EnsembleSpec):
            return d
        d = dict(d)
        for k in ("extent", "blocks"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)

    def descriptor(self, i: int) -> dict:
        seed = [int(self.master_seed), int(i)]
        base = {"width": self.width, "amplitude": self.amplitude, "real": self.real}
        if self.blocks:
            return {"name": "block-random", "sizes": list(self.blocks), "seed": seed, **base}
        n = int(np.random.default_rng(seed + [1]).integers(1, self.n_max + 1))
        return {"name": "random-smooth", "n": n, "seed": seed, **base}

    def grid(self) -> Grid1D:
        return Grid1D.line(self.extent[0], self.extent[1], self.spacing)

    def family(self, i: int) -> PotentialFamily:
        return build_family(self.descriptor(i), self.grid())

    def ladder(self):
        h, L = self.spacing, self.end_margin
        return [(2 * h, L), (1.5 * h, L), (h, L)]

    def to_dict(self):
        return asdict(self)


def _admissible(fam: PotentialFamily, tol: Tolerances = DEFAULT):
    rep = verify_assumptions(fam, tol)
    if not rep.ok:
        failed = [k for k, v in rep.passes.items() if not v]
        raise HypothesisFailure(f"{fam.name}: standing assumptions fail ({', '.join(failed)})",
                                failed[0] if failed else None)
    return rep


def _flow_value(v):
    return list(v) if isinstance(v, tuple) else int(v)


def _certificate(rep) -> dict:
    """Gap ratio and ladder trail backing one reported index."""
    return {"index": _flow_value(rep.index), "gap_ratio": float(rep.gap_ratio), "converged": rep.converged,
            "trail": [[int(n), float(L), _flow_value(i), float(g)] for n, L, i, g in rep.trail]}


def _run(name: str, items: Sequence, worker: Callable, jobs: int = 1) -> TheoremCheckResult:
    """Evaluate ``worker(item)`` over ``items``; aggregate by position."""
    t0 = time.perf_counter()
    res = TheoremCheckResult(name, instances=len(items))
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_guarded, [worker] * len(items), items))
    else:
        outcomes = [_guarded(worker, it) for it in items]
    for k, (status, payload, repro) in enumerate(outcomes):
        entry = {"instance": k, **repro}
        if status == "ok":
            res.values.append({**entry, **payload})
            if not payload.get("ok", True):
                res.failures.append({**entry, "reason": payload.get("reason", "identity violated"), **payload})
        elif status == "inadmissible":
            res.inadmissible.append({**entry, "reason": payload})
        else:
            res.failures.append({**entry, "reason": payload})
    res.seconds = time.perf_counter() - t0
    return res


def _guarded(worker, item):
    repro = item.get("repro", {}) if isinstance(item, dict) else {}
    try:
        return "ok", worker(item), repro
    except HypothesisFailure as exc:
        return "inadmissible", str(exc), repro
    except (DSLabError, np.linalg.LinAlgError) as exc:
        return "error", f"{type(exc).__name__}: {exc}", repro


def _items(families=None, ensemble=None, **extra):
    """Work items: either explicit families or ensemble members (rebuilt inside the worker)."""
    if families is not None:
        return [{"family": f, "repro": {"family": f.name}, **extra} for f in families]
    spec = EnsembleSpec.from_dict(ensemble)
    return [{"ensemble": spec, "i": i, "repro": {"master_seed": spec.master_seed, "descriptor": spec.descriptor(i)},
             **extra} for i in range(spec.count)]


def _family_of(item):
    if "family" in item:
        return item["family"]
    return item["ensemble"].family(item["i"])


def _ladder_of(item, fam):
    if item.get("ladder") is not None:
        return item["ladder"]
    if "ensemble" in item:
        return item["ensemble"].ladder()
    return None


# ---------------------------------------------------------------------------
# index = spectral flow (scalar, ensembles, block vectors)
# ---------------------------------------------------------------------------

def _index_sf_worker(item):
    fam = _family_of(item)
    tol = item.get("tol", DEFAULT)
    _admissible(fam, tol)
    rep = convergence_study(fam, _ladder_of(item, fam), item.get("scheme", "upwind"), tol=tol)
    sf = spectral_flow_crossing(make_constant_ends(fam), tol)
    ok = rep.index == sf.net_flow and bool(sf.agreement)
    return {"ok": ok, "index": _flow_value(rep.index), "net_flow": _flow_value(sf.net_flow),
            "oracle_flow": _flow_value(sf.oracle_flow), "gap_ratio": rep.gap_ratio,
            "converged": rep.converged, "trail_length": len(rep.trail), "trail": _certificate(rep)["trail"],
            "n": fam.n,
            "reason": None if ok else f"index {rep.index} != spectral flow {sf.net_flow}"}


def check_index_equals_sf(ensemble=None, families=None, ladder=None, scheme="upwind", jobs=1,
                          tol: Tolerances = DEFAULT) -> TheoremCheckResult:
    """Index of ``∂_x + S`` against the crossing count of ``S`` (componentwise for blocks)."""
    items = _items(families, ensemble, ladder=ladder, scheme=scheme, tol=tol)
    return _run("index=sf", items, _index_sf_worker, jobs)


# ---------------------------------------------------------------------------
# rescaling
# ---------------------------------------------------------------------------

def rescaled_ladder(fam: PotentialFamily, lam: float, end_margin: float = 2.0, h_ratio: float = 0.5):
    """Ladder for ``λS``: finest spacing keeps ``h λ max‖S‖`` at ``h_ratio``."""
    top = float(np.max(np.linalg.norm(fam.matrices, ord=2, axis=(1, 2))))
    h = min(fam.grid.spacing, h_ratio / max(lam * top, 1e-12))
    return [(2 * h, end_margin), (1.5 * h, end_margin), (h, end_margin)]


def _rescaling_worker(item):
    fam = _family_of(item)
    tol = item.get("tol", DEFAULT)
    _admissible(fam, tol)
    certs = [_certificate(convergence_study(rescale(fam, lam), rescaled_ladder(fam, lam, item["end_margin"]),
                                            tol=tol)) for lam in item["lambdas"]]
    idx = [c["index"] for c in certs]
    ok = all(v == idx[0] for v in idx)
    return {"ok": ok, "lambdas": list(item["lambdas"]), "indices": idx, "certificates": certs,
            "reason": None if ok else f"indices vary with λ: {idx}"}


def check_rescaling(fam=None, lambdas=(0.25, 1.0, 4.0, 16.0), ensemble=None, end_margin=2.0, jobs=1,
                    tol: Tolerances = DEFAULT) -> TheoremCheckResult:
    """Index of ``∂_x + λS`` for every ``λ`` in ``lambdas`` must coincide."""
    fams = [fam] if isinstance(fam, PotentialFamily) else fam
    items = _items(fams, ensemble, lambdas=tuple(lambdas), end_margin=end_margin, tol=tol)
    return _run("rescaling", items, _rescaling_worker, jobs)


# ---------------------------------------------------------------------------
# relative index
# ---------------------------------------------------------------------------

def splice(left: PotentialFamily, right: PotentialFamily, cut: int, name=None) -> PotentialFamily:
    """Nodes ``< cut`` from ``left`` and ``>= cut`` from ``right``; K is the union of both."""
    if not np.array_equal(left.grid.nodes, right.grid.nodes):
        raise PreconditionError("spliced families must share a grid")
    S = np.concatenate([left.matrices[:cut], right.matrices[cut:]])
    x = left.grid.nodes
    lo = min(left.compact[0], right.compact[0])
    hi = max(left.compact[1], right.compact[1])
    interval = (float(x[lo]), float(x[hi]))
    compact, cover = standard_cover(left.grid, interval)
    return PotentialFamily(left.grid, S, compact, cover, left.blocks, None, interval,
                           name or f"{left.name}|{right.name}")


def _check_collar(f1, f2, collar):
    c0, c1 = collar
    if not (0 < c0 <= c1 < f1.size - 1):
        raise PreconditionError(f"collar {collar} must lie strictly inside the grid")
    if f1.n != f2.n or not np.array_equal(f1.grid.nodes, f2.grid.nodes):
        raise PreconditionError("glued families need the same grid and fibre dimension")
    if not np.array_equal(f1.matrices[c0:c1 + 1], f2.matrices[c0:c1 + 1]):
        raise PreconditionError("collar blocks differ: the two families must agree bitwise on the collar")
    smin = np.linalg.svd(f1.matrices[c0:c1 + 1], compute_uv=False)[:, -1].min()
    if smin <= DEFAULT.endpoint_sigma:
        raise PreconditionError(f"potential is not invertible on the collar (min singular value {smin:.2e})")


def _relative_reports(f1, f2, collar, ladder, tol):
    _check_collar(f1, f2, collar)
    cut = (collar[0] + collar[1] + 1) // 2
    f3 = splice(f1, f2, cut, "M3")
    f4 = splice(f2, f1, cut, "M4")
    reps = []
    for f in (f1, f2, f3, f4):
        _admissible(f, tol)
        reps.append(convergence_study(f, ladder, tol=tol))
    return reps


def relative_index_values(f1, f2, collar, ladder=None, tol: Tolerances = DEFAULT):
    """Indices of ``f1``, ``f2`` and the two splices swapped at the middle of ``collar``."""
    return [r.total_index for r in _relative_reports(f1, f2, collar, ladder, tol)]


def matched_pair(spec: EnsembleSpec, i: int, collar_halfwidth: float = 0.5, ramp: float = 1.0):
    """Two independent random families forced onto a shared invertible block ``C`` near ``x = 0``."""
    d1 = spec.descriptor(2 * i)
    d2 = dict(spec.descriptor(2 * i + 1), n=d1.get("n"))
    grid = spec.grid()
    f1, f2 = build_family(d1, grid), build_family(d2, grid)
    rng = np.random.default_rng([spec.master_seed, i, 7])
    n = f1.n
    U = numerics.random_unitary(rng, n, spec.real)
    C = (U * (rng.choice([-1.0, 1.0], n) * rng.uniform(0.5, 1.5, n))) @ U.conj().T
    C = 0.5 * (C + C.conj().T)
    x = grid.nodes
    r = np.clip((np.abs(x) - collar_halfwidth) / ramp, 0.0, 1.0)
    beta = 0.5 * (1 + np.cos(np.pi * r))
    beta[np.abs(x) <= collar_halfwidth] = 1.0
    out = []
    for f in (f1, f2):
        S = (1 - beta)[:, None, None] * f.matrices + beta[:, None, None] * C
        S[beta == 1.0] = C
        out.append(f.with_matrices(S, None, name=f"{f.name}~C"))
    inside = np.nonzero(np.abs(x) <= collar_halfwidth)[0]
    return out[0], out[1], (int(inside[0]), int(inside[-1])), {"first": d1, "second": d2}


def _relative_worker(item):
    tol = item.get("tol", DEFAULT)
    if "family" in item:
        f1, f2, collar = item["family"], item["partner"], item["collar"]
        ladder = item.get("ladder")
    else:
        spec = item["ensemble"]
        f1, f2, collar, _ = matched_pair(spec, item["i"])
        ladder = item.get("ladder") or spec.ladder()
    reps = _relative_reports(f1, f2, collar, ladder, tol)
    i1, i2, i3, i4 = (r.total_index for r in reps)
    ok = i1 + i2 == i3 + i4
    return {"ok": ok, "indices": [i1, i2, i3, i4], "collar": list(collar),
            "certificates": [_certificate(r) for r in reps],
            "reason": None if ok else f"{i1}+{i2} != {i3}+{i4}"}


def check_relative_index(fam1=None, fam2=None, collar=None, ensemble=None, ladder=None, jobs=1,
                         tol: Tolerances = DEFAULT) -> TheoremCheckResult:
    """Swap the halves of two families beyond a shared collar; ``I1 + I2 = I3 + I4``."""
    if fam1 is not None:
        items = [{"family": fam1, "partner": fam2 if fam2 is not None else fam1, "collar": tuple(collar),
                  "ladder": ladder, "tol": tol, "repro": {"family": fam1.name}}]
    else:
        spec = EnsembleSpec.from_dict(ensemble)
        items = [{"ensemble": spec, "i": i, "ladder": ladder, "tol": tol,
                  "repro": {"master_seed": spec.master_seed, "pair": i,
                            "descriptors": [spec.descriptor(2 * i), spec.descriptor(2 * i + 1)]}}
                 for i in range(spec.count)]
    return _run("rel_index", items, _relative_worker, jobs)


# ---------------------------------------------------------------------------
# cylinder replacement
# ---------------------------------------------------------------------------

def _cylinder_worker(item):
    fam = _family_of(item)
    tol = item.get("tol", DEFAULT)
    _admissible(fam, tol)
    h = item.get("spacing") or fam.grid.spacing
    certs = [_certificate(convergence_study(fam, [(2 * h, L), (1.5 * h, L), (h, L)], tol=tol))
             for L in item["lengths"]]
    idx = [c["index"] for c in certs]
    ok = all(v == idx[0] for v in idx)
    return {"ok": ok, "lengths": list(item["lengths"]), "indices": idx,
            "min_gap_ratio": min(c["gap_ratio"] for c in certs), "certificates": certs,
            "reason": None if ok else f"index changes with cylinder length: {idx}"}


def check_cylinder_replacement(fam=None, lengths=(8.0, 16.0, 32.0), ensemble=None, spacing=None, jobs=1,
                               tol: Tolerances = DEFAULT) -> TheoremCheckResult:
    """Index is independent of the length of the attached product ends."""
    fams = [fam] if isinstance(fam, PotentialFamily) else fam
    items = _items(fams, ensemble, lengths=tuple(lengths), spacing=spacing, tol=tol)
    return _run("cylinder", items, _cylinder_worker, jobs)


# ---------------------------------------------------------------------------
# homotopy invariance
# ---------------------------------------------------------------------------

def homotopy_targets(fam: PotentialFamily, smoothing_width: Optional[float] = None):
    """End points of the sampled homotopies: constant ends and mollification."""
    w = smoothing_width or 2 * fam.grid.spacing
    return {"constant-ends": make_constant_ends(fam), "smoothing": smooth_family(fam, w)}


def _homotopy_worker(item):
    fam = _family_of(item)
    tol = item.get("tol", DEFAULT)
    _admissible(fam, tol)
    ladder = _ladder_of(item, fam)
    series, certs = {}, {}
    for kind, target in homotopy_targets(fam, item.get("smoothing_width")).items():
        certs[kind] = []
        for t in item["ts"]:
            H = interpolate_families(fam, target, t)
            _admissible(H, tol)
            certs[kind].append(_certificate(convergence_study(H, ladder, tol=tol)))
        series[kind] = [c["index"] for c in certs[kind]]
    flat = [v for vals in series.values() for v in vals]
    ok = all(v == flat[0] for v in flat)
    return {"ok": ok, "ts": list(item["ts"]), "series": series, "certificates": certs,
            "reason": None if ok else f"index varies along the homotopy: {series}"}


def check_homotopy_invariance(fam=None, ts=(0.0, 0.25, 0.5, 0.75, 1.0), ensemble=None, ladder=None,
                              smoothing_width=None, jobs=1, tol: Tolerances = DEFAULT) -> TheoremCheckResult:
    """Index along ``(1-t) S + t S'`` for the constant-ends and smoothing deformations."""
    fams = [fam] if isinstance(fam, PotentialFamily) else fam
    items = _items(fams, ensemble, ts=tuple(ts), ladder=ladder, smoothing_width=smoothing_width, tol=tol)
    return _run("homotopy", items, _homotopy_worker, jobs)


# ---------------------------------------------------------------------------
# graded vanishing
# ---------------------------------------------------------------------------

def _graded_worker(item):
    fam = _family_of(item)
    tol = item.get("tol", DEFAULT)
    _admissible(fam, tol)
    f2, G, Gamma = doubled_fiber(fam)
    rep = convergence_study(f2, _ladder_of(item, fam), tol=tol, symbol=G, grading=Gamma)
    ok = rep.total_index == 0 and not np.any(np.asarray(rep.index))
    return {"ok": ok, "index": _flow_value(rep.index), "gap_ratio": rep.gap_ratio,
            "converged": rep.converged, "trail": _certificate(rep)["trail"],
            "residuals": rep.extras.get("grading_residuals"),
            "reason": None if ok else f"graded index {rep.index} is not zero"}


def check_graded_vanishing(ensemble=None, families=None, ladder=None, jobs=1,
                           tol: Tolerances = DEFAULT) -> TheoremCheckResult:
    """Doubled fibre with an odd derivative and even potential has index 0."""
    items = _items(families, ensemble, ladder=ladder, tol=tol)
    return _run("graded", items, _graded_worker, jobs)


# ---------------------------------------------------------------------------
# parametrix certificate
# ---------------------------------------------------------------------------

def _parametrix_worker(item):
    fam = _family_of(item)
    tol = item.get("tol", DEFAULT)
    _admissible(fam, tol)
    L = item.get("end_margin")
    if L is None:
        L = item["ensemble"].end_margin if "ensemble" in item else default_end_margin(fam, tol, cap=8.0)
    f = prepare(fam, fam.grid.spacing, L)
    b = build_parametrix(assemble_dirac_schrodinger(f, tol=tol), f, item.get("ramp", 0.0), tol)
    ok = b.off_support_max < tol.residual_support and b.residual_rank <= b.rank_bound
    return {"ok": ok, **b.summary(),
            "reason": None if ok else (f"off-support {b.off_support_max:.2e}, rank {b.residual_rank} "
                                       f"vs bound {b.rank_bound}")}


def check_parametrix(fam=None, ensemble=None, end_margin=None, ramp=0.0, jobs=1,
                     tol: Tolerances = DEFAULT) -> TheoremCheckResult:
    """Residual of the patched parametrix is localized at the cutoff interfaces and of small rank."""
    fams = [fam] if isinstance(fam, PotentialFamily) else fam
    items = _items(fams, ensemble, end_margin=end_margin, ramp=ramp, tol=tol)
    return _run("parametrix", items, _parametrix_worker, jobs)


THEOREMS = {
    "index=sf": check_index_equals_sf,
    "rescaling": check_rescaling,
    "rel_index": check_relative_index,
    "cylinder": check_cylinder_replacement,
    "homotopy": check_homotopy_invariance,
    "graded": check_graded_vanishing,
    "parametrix": check_parametrix,
}
