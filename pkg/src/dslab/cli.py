"""Command-line driver: ``dslab --config run.yaml``.

A run configuration is a YAML tree with five sections::

    manifold:  kind, extent, spacing, nodes, end_margins
    family:    name, params, seed, compact, cover, blocks
    task:      kind (index | sflow | verify | theorem | sweep), theorem,
               ensemble, params, ladder, sweep
    numerics:  scheme, boundary, collar, tolerances
    output:    dir, branches

Missing keys are filled from :data:`DEFAULTS` and listed under
``defaulted`` in the result document.  Results go to
``<out>/<config hash>/result-NNN.json``; existing files are never
overwritten.

Exit status: 0 pass, 1 theorem or engine failure, 2 hypothesis failure or
unusable configuration.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .config import Tolerances
from .discretize import BOUNDARIES, SCHEMES
from .errors import AssumptionError, ConfigError, DSLabError, UnknownFamilyError
from .family import FAMILIES, Grid1D, build_family, default_end_margin, verify_assumptions
from .index import circle_study, convergence_study, default_ladder
from .sflow import spectral_flow_circle, spectral_flow_crossing
from .theorems import INADMISSIBLE, PASS, THEOREMS, EnsembleSpec

log = logging.getLogger("dslab")

OUT_ENV = "DSLAB_OUT"
TASKS = ("index", "sflow", "verify", "theorem", "sweep")

DEFAULTS = {
    "manifold": {"kind": "line", "extent": [-20.0, 20.0], "spacing": 0.05, "nodes": 128, "end_margins": "auto"},
    "family": {"name": "scalar-profile", "params": {}, "seed": None, "compact": None, "cover": None,
               "blocks": None},
    "task": {"kind": "index", "theorem": None, "ensemble": None, "params": {}, "ladder": None, "sweep": None},
    "numerics": {"scheme": "upwind", "boundary": None, "collar": 1.0, "tolerances": {}},
    "output": {"dir": None, "branches": False},
}
ENSEMBLE_KEYS = {f.name for f in dataclasses.fields(EnsembleSpec)}
TOLERANCE_KEYS = {f.name for f in dataclasses.fields(Tolerances)}


@dataclasses.dataclass
class RunConfig:
    manifold: dict
    family: dict
    task: dict
    numerics: dict
    output: dict
    defaulted: list = dataclasses.field(default_factory=list, compare=False)

    def resolved(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in DEFAULTS}

    def digest(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True, default=_plain)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def tolerances(self) -> Tolerances:
        return dataclasses.replace(Tolerances(), **self.numerics["tolerances"])


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _marks(text):
    """Map dotted key paths to (line, column) of their key, 1-based."""
    out = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                out[path] = (k.start_mark.line + 1, k.start_mark.column + 1)
                walk(v, path)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                path = f"{prefix}[{i}]"
                out[path] = (v.start_mark.line + 1, v.start_mark.column + 1)
                walk(v, path)

    if root is not None:
        walk(root, "")
    return out


def _fail(msg, key, marks):
    line, col = marks.get(key, (None, None))
    return ConfigError(f"{key}: {msg}", key=key, line=line, column=col)


def parse_config(text: str) -> RunConfig:
    """Parse, default and validate a YAML run configuration."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line, col = (mark.line + 1, mark.column + 1) if mark else (None, None)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"syntax error: {problem}", line=line, column=col) from exc
    if data is None:
        data = {}
    marks = _marks(text)
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping of sections", line=1, column=1)
    defaulted = []
    resolved = {}
    for sec, dflt in DEFAULTS.items():
        given = data.get(sec, {})
        if given is None:
            given = {}
        if not isinstance(given, dict):
            raise _fail("section must be a mapping", sec, marks)
        for k in given:
            if k not in dflt:
                raise _fail(f"unknown key (expected one of {sorted(dflt)})", f"{sec}.{k}", marks)
        sec_out = {}
        for k, v in dflt.items():
            if k in given:
                sec_out[k] = given[k]
            else:
                sec_out[k] = copy.deepcopy(v)
                defaulted.append(f"{sec}.{k}")
        resolved[sec] = sec_out
    for k in data:
        if k not in DEFAULTS:
            raise _fail(f"unknown section (expected one of {sorted(DEFAULTS)})", str(k), marks)
    cfg = RunConfig(**resolved, defaulted=defaulted)
    _validate(cfg, marks)
    return cfg


def _number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _validate(cfg: RunConfig, marks):
    m, f, t, nu, o = cfg.manifold, cfg.family, cfg.task, cfg.numerics, cfg.output
    if m["kind"] not in ("line", "circle"):
        raise _fail("must be 'line' or 'circle'", "manifold.kind", marks)
    ext = m["extent"]
    if not (isinstance(ext, list) and len(ext) == 2 and all(map(_number, ext)) and ext[0] < ext[1]):
        raise _fail("must be an increasing pair [a, b]", "manifold.extent", marks)
    if not (_number(m["spacing"]) and m["spacing"] > 0):
        raise _fail("must be a positive number", "manifold.spacing", marks)
    if not (isinstance(m["nodes"], int) and m["nodes"] >= 3):
        raise _fail("must be an integer >= 3", "manifold.nodes", marks)
    em = m["end_margins"]
    if not (em == "auto" or (_number(em) and em >= 0)):
        raise _fail("must be 'auto' or a nonnegative length", "manifold.end_margins", marks)

    if f["name"] not in FAMILIES:
        raise _fail(f"unknown family descriptor {f['name']!r}; known: {sorted(FAMILIES)}", "family.name", marks)
    if not isinstance(f["params"], dict):
        raise _fail("must be a mapping", "family.params", marks)
    if f["seed"] is not None and not isinstance(f["seed"], int):
        raise _fail("must be an integer", "family.seed", marks)
    if f["compact"] is not None:
        c = f["compact"]
        if not (isinstance(c, list) and len(c) == 2 and all(map(_number, c)) and c[0] <= c[1]):
            raise _fail("must be a pair [a, b] with a <= b", "family.compact", marks)
    if f["cover"] is not None:
        if not (isinstance(f["cover"], list) and len(f["cover"]) in (1, 2)):
            raise _fail("must list one or two patches", "family.cover", marks)
        for i, p in enumerate(f["cover"]):
            key = f"family.cover[{i}]"
            if not isinstance(p, dict) or set(p) - {"anchor", "bound"}:
                raise _fail("patch entries take 'anchor' (x_j) and 'bound' (a_j)", key, marks)
            b = p.get("bound", 0.5)
            if not (_number(b) and 0 < b < 1):
                raise _fail("a_j must lie in (0,1)", key + ".bound", marks)
            if p.get("anchor") is not None and not _number(p["anchor"]):
                raise _fail("anchor must be a coordinate", key + ".anchor", marks)
    if f["blocks"] is not None and not (isinstance(f["blocks"], list) and all(isinstance(b, int) and b > 0
                                                                                for b in f["blocks"])):
        raise _fail("must be a list of positive block sizes", "family.blocks", marks)

    if t["kind"] not in TASKS:
        raise _fail(f"must be one of {list(TASKS)}", "task.kind", marks)
    if t["kind"] == "theorem" and t["theorem"] not in THEOREMS:
        raise _fail(f"unknown theorem id {t['theorem']!r}; known: {sorted(THEOREMS)}", "task.theorem", marks)
    if t["ensemble"] is not None:
        if not isinstance(t["ensemble"], dict):
            raise _fail("must be a mapping", "task.ensemble", marks)
        for k in t["ensemble"]:
            if k not in ENSEMBLE_KEYS:
                raise _fail(f"unknown key (expected one of {sorted(ENSEMBLE_KEYS)})", f"task.ensemble.{k}", marks)
    if not isinstance(t["params"], dict):
        raise _fail("must be a mapping", "task.params", marks)
    if t["ladder"] is not None:
        ok = isinstance(t["ladder"], list) and all(
            isinstance(r, list) and len(r) == 2 and all(map(_number, r)) for r in t["ladder"])
        if not ok:
            raise _fail("must be a list of [h, L_cyl] pairs", "task.ladder", marks)
    if t["kind"] == "sweep":
        sw = t["sweep"]
        if not (isinstance(sw, dict) and set(sw) == {"key", "values"} and isinstance(sw["values"], list)
                and sw["values"]):
            raise _fail("sweep needs 'key' (dotted path) and a non-empty 'values' list", "task.sweep", marks)
        base = sw["key"].split(".")
        if base[0] not in DEFAULTS or base[0] == "task" and base[1:2] == ["kind"]:
            raise _fail(f"cannot sweep over {sw['key']!r}", "task.sweep.key", marks)
        if not t["params"].get("task"):
            raise _fail("sweep needs params.task naming the task run for each value", "task.params", marks)

    if nu["scheme"] not in SCHEMES:
        raise _fail(f"must be one of {list(SCHEMES)}", "numerics.scheme", marks)
    if nu["boundary"] is not None and nu["boundary"] not in BOUNDARIES:
        raise _fail(f"must be one of {list(BOUNDARIES)}", "numerics.boundary", marks)
    if nu["boundary"] is not None and (m["kind"] == "circle") != (nu["boundary"] == "periodic"):
        raise _fail(f"boundary {nu['boundary']!r} does not fit a {m['kind']} manifold", "numerics.boundary", marks)
    if not (_number(nu["collar"]) and nu["collar"] >= 0):
        raise _fail("must be a nonnegative length", "numerics.collar", marks)
    if not isinstance(nu["tolerances"], dict):
        raise _fail("must be a mapping", "numerics.tolerances", marks)
    for k, v in nu["tolerances"].items():
        if k not in TOLERANCE_KEYS:
            raise _fail(f"unknown tolerance (expected one of {sorted(TOLERANCE_KEYS)})",
                        f"numerics.tolerances.{k}", marks)
        if not (_number(v) and v > 0):
            raise _fail("must be a positive number", f"numerics.tolerances.{k}", marks)

    if o["dir"] is not None and not isinstance(o["dir"], str):
        raise _fail("must be a path", "output.dir", marks)
    if not isinstance(o["branches"], bool):
        raise _fail("must be true or false", "output.branches", marks)


def serialize(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.resolved(), sort_keys=True, default_flow_style=None)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def _plain(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    return str(o)


def make_family(cfg: RunConfig):
    m, f = cfg.manifold, cfg.family
    grid = Grid1D.line(*m["extent"], m["spacing"]) if m["kind"] == "line" else Grid1D.circle(m["nodes"])
    spec = {"name": f["name"], **f["params"]}
    if f["seed"] is not None:
        spec["seed"] = f["seed"]
    if f["compact"] is not None:
        spec["compact"] = f["compact"]
    if f["blocks"] is not None:
        spec["blocks"] = f["blocks"]
    if f["cover"] is not None:
        spec["bounds"] = [p.get("bound", 0.5) for p in f["cover"]]
        anchors = []
        for p in f["cover"]:
            a = p.get("anchor")
            anchors.append(None if a is None else int(np.argmin(np.abs(grid.nodes - a))))
        spec["anchors"] = anchors
    try:
        return build_family(spec, grid)
    except UnknownFamilyError as exc:
        raise ConfigError(str(exc), key="family.name") from exc


def _ladder(cfg: RunConfig, fam, tol):
    if cfg.task["ladder"] is not None:
        return [tuple(r) for r in cfg.task["ladder"]]
    em = cfg.manifold["end_margins"]
    return default_ladder(fam, None if em == "auto" else float(em), tol)


def _task_index(cfg, tol, emit_dir):
    fam = make_family(cfg)
    if fam.grid.kind == "circle":
        rep = circle_study(fam, scheme=cfg.numerics["scheme"], tol=tol)
    else:
        rep = convergence_study(fam, _ladder(cfg, fam, tol), cfg.numerics["scheme"], cfg.numerics["collar"], tol)
    return 0, {"index": rep.to_dict()}


def _task_sflow(cfg, tol, emit_dir):
    fam = make_family(cfg)
    record = emit_dir is not None
    if fam.grid.kind == "circle":
        rep = spectral_flow_circle(fam, tol, record_branches=record)
    else:
        rep = spectral_flow_crossing(fam, tol, record_branches=record)
    out = {"sflow": rep.to_dict()}
    if record:
        path = rep.write_branches(Path(emit_dir) / "branches.csv")
        out["branches_csv"] = path.name
    return (0 if rep.agreement else 1), out


def _task_verify(cfg, tol, emit_dir):
    fam = make_family(cfg)
    rep = verify_assumptions(fam, tol)
    out = {"assumptions": rep.to_dict(), "family": fam.to_dict()}
    if fam.grid.kind == "line" and rep.passes["A3"]:
        out["default_end_margin"] = default_end_margin(fam, tol)
    return (0 if rep.ok else 2), out


def _task_theorem(cfg, tol, emit_dir, jobs=1):
    tid = cfg.task["theorem"]
    fn = THEOREMS[tid]
    params = dict(cfg.task["params"])
    ens = cfg.task["ensemble"]
    if ens is not None:
        res = fn(ensemble=ens, jobs=jobs, tol=tol, **params)
    else:
        fam = make_family(cfg)
        if tid in ("index=sf", "graded"):
            res = fn(families=[fam], ladder=_ladder(cfg, fam, tol), tol=tol, **params)
        elif tid == "rel_index":
            collar = params.pop("collar", None)
            if collar is None:
                raise ConfigError("rel_index on a single family needs task.params.collar = [x0, x1]",
                                  key="task.params.collar")
            x = fam.grid.nodes
            nodes = np.nonzero((x >= collar[0]) & (x <= collar[1]))[0]
            if nodes.size == 0:
                raise ConfigError("collar contains no grid nodes", key="task.params.collar")
            res = fn(fam, fam, (int(nodes[0]), int(nodes[-1])), ladder=_ladder(cfg, fam, tol), tol=tol, **params)
        else:
            res = fn(fam, tol=tol, **params)
    code = {PASS: 0, INADMISSIBLE: 2}.get(res.verdict, 1)
    return code, {"theorem": res.to_dict()}


def _sweep_member(args):
    base, key, value, out, emit = args
    tree = copy.deepcopy(base)
    sec, *rest = key.split(".")
    node = tree[sec]
    for k in rest[:-1]:
        node = node.setdefault(k, {})
    node[rest[-1]] = value
    tree["task"]["kind"] = tree["task"]["params"].pop("task")
    tree["task"]["sweep"] = None
    cfg = parse_config(yaml.safe_dump(tree))
    code, path = run(cfg, out, emit_branches=emit)
    return {"value": value, "exit_code": code, "result": str(path), "config_hash": cfg.digest()}


def _task_sweep(cfg, tol, emit_dir, jobs=1, out=None, emit=False):
    sw = cfg.task["sweep"]
    base = cfg.resolved()
    args = [(base, sw["key"], v, out, emit) for v in sw["values"]]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            members = list(pool.map(_sweep_member, args))
    else:
        members = [_sweep_member(a) for a in args]
    code = max(m["exit_code"] for m in members)
    return code, {"sweep": {"key": sw["key"], "members": members}}


def output_root(cfg: RunConfig, out=None) -> Path:
    return Path(out or cfg.output["dir"] or os.environ.get(OUT_ENV) or "dslab-results")


def _next_result(directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    k = 0
    while True:
        path = directory / f"result-{k:03d}.json"
        try:
            with path.open("x"):
                return path
        except FileExistsError:
            k += 1


def run(cfg: RunConfig, out=None, jobs: int = 1, emit_branches: bool = False):
    """Execute the configured task; returns ``(exit_code, result_path)``."""
    root = output_root(cfg, out)
    rundir = root / cfg.digest()
    tol = cfg.tolerances()
    emit = emit_branches or cfg.output["branches"]
    kind = cfg.task["kind"]
    t0 = time.perf_counter()
    doc = {"task": kind, "config": cfg.resolved(), "defaulted": list(cfg.defaulted), "config_hash": cfg.digest()}
    try:
        rundir.mkdir(parents=True, exist_ok=True)
        if kind == "sweep":
            code, body = _task_sweep(cfg, tol, None, jobs, root, emit)
        elif kind == "theorem":
            code, body = _task_theorem(cfg, tol, None, jobs)
        else:
            fn = {"index": _task_index, "sflow": _task_sflow, "verify": _task_verify}[kind]
            code, body = fn(cfg, tol, rundir if emit else None)
        doc.update(body)
        doc["status"] = {0: "pass", 1: "fail", 2: "hypothesis-failure"}[code]
    except ConfigError:
        raise
    except AssumptionError as exc:
        code = 2
        doc.update(status="hypothesis-failure", error={"type": type(exc).__name__, "message": str(exc)})
    except DSLabError as exc:
        code = 1
        doc.update(status="fail", error={"type": type(exc).__name__, "message": str(exc)})
        trail = getattr(exc, "trail", None)
        if trail:
            doc["error"]["trail"] = [list(map(_plain, t)) for t in trail]
    doc["exit_code"] = code
    doc["timings"] = {"seconds": time.perf_counter() - t0}
    _strip_timing(doc)
    path = _next_result(rundir)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_plain) + "\n")
    return code, path


def _strip_timing(doc):
    """Move nested wall-clock fields under ``timings`` so the rest is reproducible."""
    th = doc.get("theorem")
    if isinstance(th, dict) and "seconds" in th:
        doc["timings"]["theorem_seconds"] = th.pop("seconds")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dslab", description="Index and spectral flow lab for ∂_x + S(x).")
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", help=f"output directory (default: output.dir, ${OUT_ENV}, ./dslab-results)")
    p.add_argument("--seed", type=int, help="override family.seed and the ensemble master seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for ensembles and sweeps")
    p.add_argument("--emit-branches", action="store_true", help="write eigenbranch CSV for sflow tasks")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer", key="--seed")
            cfg.family["seed"] = args.seed
            if cfg.task["ensemble"] is not None:
                cfg.task["ensemble"] = dict(cfg.task["ensemble"], master_seed=args.seed)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1", key="--jobs")
        code, path = run(cfg, args.out, args.jobs, args.emit_branches)
    except ConfigError as exc:
        print(f"dslab: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"dslab: I/O error on {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 1
    print(path)
    log.info("exit status %d", code)
    return code


if __name__ == "__main__":
    sys.exit(main())
