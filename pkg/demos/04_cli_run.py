"""Drive a run through the command-line entry point.

Writes a config to a scratch directory, runs it twice and shows that the
two result documents differ only in their timings.
"""

import json
import tempfile
from pathlib import Path

from dslab.cli import main

CONFIG = """
manifold: {kind: line, extent: [-10, 10], spacing: 0.05}
family: {name: scalar-profile, compact: [-2, 2]}
task: {kind: index}
"""

with tempfile.TemporaryDirectory() as tmp:
    cfg = Path(tmp) / "run.yaml"
    cfg.write_text(CONFIG)
    out = Path(tmp) / "results"
    for _ in range(2):
        main(["--config", str(cfg), "--out", str(out)])
    docs = sorted(out.glob("*/result-*.json"))
    a, b = (json.loads(p.read_text()) for p in docs)
    print("index", a["index"]["index"], "status", a["status"])
    print("defaulted keys:", ", ".join(a["defaulted"]))
    a.pop("timings"), b.pop("timings")
    print("documents identical apart from timings:", a == b)
