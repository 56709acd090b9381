"""Command-line harness: ``reinforce-lab run|list-experiments|graph``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import subprocess
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, experiments, graph as G

log = logging.getLogger("reinforce_lab")

EXIT_PASS, EXIT_GATE, EXIT_CONFIG = 0, 1, 2
DEFAULT_SEED = 20240601


class ConfigError(ValueError):
    pass


def _schema():
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


def plain(x):
    """JSON-ready copy with numpy scalars and tuples flattened."""
    if isinstance(x, dict):
        return {str(k): plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return plain(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    return x


def canonical(doc) -> str:
    return json.dumps(plain(doc), sort_keys=True, separators=(",", ":"))


def sha(doc) -> str:
    return hashlib.sha256(canonical(doc).encode()).hexdigest()


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = DEFAULT_SEED
    graph: object = None
    process: dict | None = None
    params: dict = field(default_factory=dict)
    output: str | None = None
    workers: int | None = None

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, _schema())
        except jsonschema.ValidationError as err:
            where = "/" + "/".join(str(p) for p in err.absolute_path)
            raise ConfigError(f"config error at {where}: {err.message}") from None
        if doc["experiment"] not in experiments.CATALOG:
            raise ConfigError(f"config error at /experiment: unknown experiment "
                              f"{doc['experiment']!r}; see list-experiments")
        return cls(doc["experiment"], int(doc.get("seed", DEFAULT_SEED)), doc.get("graph"),
                   doc.get("process"), dict(doc.get("params", {})), doc.get("output"),
                   doc.get("workers"))

    def to_json(self) -> dict:
        out = {"experiment": self.experiment, "seed": self.seed, "params": self.params}
        if self.graph is not None:
            out["graph"] = self.graph
        if self.process is not None:
            out["process"] = self.process
        return out


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    version: str
    experiment: str
    passed: bool
    gates: dict
    metrics: dict
    tables: dict
    curves: dict
    timeout_rate: float
    wall_time: float

    def body(self) -> dict:
        doc = plain(self.__dict__)
        doc.pop("wall_time")
        return doc

    @property
    def hash(self) -> str:
        """Digest of everything except wall time."""
        return sha(self.body())

    def to_json(self) -> dict:
        doc = self.body()
        doc["wall_time"] = self.wall_time
        doc["record_hash"] = self.hash
        return doc


def artifact_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _translate(cfg: ExperimentConfig) -> dict:
    # shared config names onto each experiment's own parameter names
    p = dict(cfg.params)
    if "L" in p:
        p["Ls"] = [p.pop("L")]
    if "distances" in p:
        p["levels"] = max(p.pop("distances"))
    if "Ms" in p:
        p["Mmax"] = max(p.pop("Ms"))
    return p


def run_experiment(cfg: ExperimentConfig) -> RunRecord:
    graphs = None
    if cfg.graph is not None:
        try:
            graphs = [experiments.resolve_graph(cfg.graph)]
        except (G.GraphError, ValueError, KeyError) as err:
            raise ConfigError(f"config error at /graph: {err}") from None
    params = _translate(cfg)
    t0 = time.perf_counter()
    try:
        out = experiments.run(cfg.experiment, params, cfg.seed, cfg.workers, graphs,
                              cfg.process)
    except (ValueError, KeyError) as err:
        raise ConfigError(f"config error at /params: {err}") from None
    wall = time.perf_counter() - t0
    return RunRecord(sha(cfg.to_json()), cfg.seed, artifact_version(), cfg.experiment,
                     out.passed, out.gates, out.metrics,
                     {k: {"columns": list(c), "rows": r} for k, (c, r) in out.tables.items()},
                     {k: {"x": x, "y": y, "xs": xs, "ys": ys}
                      for k, (x, y, xs, ys) in out.curves.items()},
                     out.timeout_rate, wall)


def _write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in plain(list(r))])


def write_outputs(record: RunRecord, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "record.json"]
    files[0].write_text(json.dumps(record.to_json(), indent=2, sort_keys=True) + "\n")
    for name, tab in record.tables.items():
        p = out / f"{name}.csv"
        _write_csv(p, tab["columns"], tab["rows"])
        files.append(p)
    files += emit_plotdata(record, out / "plotdata")
    return files


def emit_plotdata(record: RunRecord, out: Path) -> list[Path]:
    """One two-column CSV per curve; nothing is rendered."""
    files = []
    if not record.curves:
        return files
    out.mkdir(parents=True, exist_ok=True)
    for name, c in record.curves.items():
        p = out / f"{name}.csv"
        _write_csv(p, [c["x"], c["y"]], list(zip(c["xs"], c["ys"])))
        files.append(p)
    return files


def _cmd_run(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.workers is not None:
        doc["workers"] = args.workers
    try:
        cfg = ExperimentConfig.from_json(doc)
        record = run_experiment(cfg)
    except ConfigError as err:
        print(str(err), file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output or f"runs/{cfg.experiment}-{cfg.seed}")
    write_outputs(record, out)
    for gate, ok in record.gates.items():
        print(f"{'PASS' if ok else 'FAIL'}  {gate}")
    print(f"record {record.hash[:16]}  -> {out}")
    if args.check and not record.passed:
        return EXIT_GATE
    return EXIT_PASS


def _cmd_list(args) -> int:
    for name, exp in experiments.CATALOG.items():
        print(f"{name:22s} criterion {exp.criterion:2d}  {exp.summary}")
    return EXIT_PASS


def _cmd_graph(args) -> int:
    try:
        g = G.build_family(args.family, args.weight, args.v0)
    except G.GraphError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.emit:
        print(json.dumps(g.to_json()))
    else:
        print(f"{g.name}: n={g.n} m={g.m} K={g.K} v0={g.v0}")
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reinforce-lab")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--check", action="store_true", help="exit 1 if any gate fails")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--workers", type=int)
    r.set_defaults(fn=_cmd_run)
    sub.add_parser("list-experiments").set_defaults(fn=_cmd_list)
    g = sub.add_parser("graph", help="build a named graph")
    g.add_argument("family")
    g.add_argument("--emit", action="store_true", help="print graph JSON")
    g.add_argument("--weight", type=float, default=1.0)
    g.add_argument("--v0", type=int)
    g.set_defaults(fn=_cmd_graph)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
