"""Command-line front end.

    adaptpoisson solve --geometry star --problem manufactured-gaussians --eps 1e-8
    adaptpoisson study --mode eta-sweep --etas 1e-1,1e-2,1e-3,1e-4
    adaptpoisson generate-geometry raindrop --eta 1e-3 -o raindrop.txt

Every run writes into its output directory together with manifest.json.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
import tracemalloc
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import (CURVES, PanelizationError, adaptive_panelize, load_nodes, make_curve,
                       save_nodes)
from .problems import PROBLEMS, cusp_gaussians, make_problem, random_gaussians
from .quadtree import CurveShape, dump_tree
from .solver import ProblemSpec, SolutionField, StageError, random_interior_points, report, solve
from .strip_geometry import strip_dump

log = logging.getLogger("adaptpoisson")

CONFIG_SCHEMA = "adaptpoisson.config/1"
STUDY_SCHEMA = "adaptpoisson.study/1"
GEOMETRIES = tuple(CURVES) + ("nodes-file",)
MODES = ("single", "p-sweep", "eta-sweep")
EXIT_STAGE = 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    geometry: str = "circle"
    eta: float = 1e-3
    nodes: str | None = None
    problem: str = "manufactured-gaussians"
    count: int = 5
    sigma_min: float = 0.05
    sigma_max: float = 0.5
    seed: int = 0
    eps: float = 1e-10
    p: int = 16
    p_r: int | None = None
    out: str = "run"
    mode: str = "single"
    etas: list[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    ps: list[int] = field(default_factory=lambda: [8, 12, 16])
    n_probes: int = 10_000
    schema: str = CONFIG_SCHEMA

    def validate(self) -> "RunConfig":
        if self.schema != CONFIG_SCHEMA:
            raise ConfigError(f"unsupported config schema {self.schema!r}")
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {GEOMETRIES}")
        if self.geometry == "nodes-file" and not self.nodes:
            raise ConfigError("geometry nodes-file needs --nodes PATH")
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {tuple(PROBLEMS)}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not (1e-14 <= self.eps <= 1e-2):
            raise ConfigError("eps must lie in [1e-14, 1e-2]")
        if self.p < 3:
            raise ConfigError("p must be at least 3")
        if not (0 < self.sigma_min <= self.sigma_max):
            raise ConfigError("need 0 < sigma_min <= sigma_max")
        if self.eta <= 0 or any(e <= 0 for e in self.etas):
            raise ConfigError("eta must be positive")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d).validate()

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------

def build_boundary(cfg: RunConfig, eps: float | None = None, p: int | None = None):
    eps = cfg.eps if eps is None else eps
    p = cfg.p if p is None else p
    if cfg.geometry == "nodes-file":
        return load_nodes(cfg.nodes)
    params = {"eta": cfg.eta} if cfg.geometry == "raindrop" else {}
    return adaptive_panelize(make_curve(cfg.geometry, **params), p, eps)


def build_problem(cfg: RunConfig, pan, eta: float | None = None):
    if cfg.problem == "manufactured-gaussians":
        shape = CurveShape(pan)
        z = pan.z.ravel()
        c = z.mean()
        return random_gaussians(cfg.count, (cfg.sigma_min, cfg.sigma_max), cfg.seed,
                                inside=lambda x, y: bool(shape.contains(x, y)),
                                radius=0.6 * float(np.abs(z - c).max()), center=(c.real, c.imag))
    if cfg.problem == "cusp-gaussians":
        return cusp_gaussians(cfg.eta if eta is None else eta)
    return make_problem(cfg.problem)


def run_single(cfg: RunConfig, pan=None, problem=None) -> tuple[SolutionField, dict, np.ndarray]:
    pan = pan if pan is not None else build_boundary(cfg)
    problem = problem if problem is not None else build_problem(cfg, pan)
    spec = ProblemSpec(problem.f, problem.g, eps=cfg.eps, p=pan.kit.p, p_r=cfg.p_r,
                       pan=pan, exact=problem.exact)
    sol = solve(spec)
    probes = random_interior_points(sol.boundary, cfg.n_probes, seed=cfg.seed + 1)
    rep = report(sol, probes if problem.exact is not None else None)
    rep["problem"] = problem.describe()
    rep["geometry"] = {"name": cfg.geometry, "eta": cfg.eta if cfg.geometry == "raindrop" else None}
    return sol, rep, probes


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def write_json(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def write_error_csv(path: Path, sol: SolutionField, probes: np.ndarray) -> Path:
    u = sol.evaluate(probes)
    ref = (sol.problem.exact(probes.real, probes.imag) if sol.problem.exact is not None
           else np.full(probes.size, np.nan))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u", "u_ref", "abs_err"])
        for row in zip(probes.real, probes.imag, u, ref, np.abs(u - ref)):
            w.writerow([repr(float(v)) for v in row])
    return path


def write_manifest(out: Path, files: list[Path], cfg: RunConfig, command: str) -> Path:
    entries = []
    for f in files:
        data = f.read_bytes()
        entries.append({"file": f.name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
    return write_json(out / "manifest.json", {"schema": "adaptpoisson.manifest/1", "command": command,
                                              "version": __version__, "config": cfg.to_dict(),
                                              "files": entries})


def cmd_solve(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sol, rep, probes = run_single(cfg)
    files = [write_json(out / "report.json", rep),
             write_error_csv(out / "errors.csv", sol, probes),
             dump_tree(sol.tree, out / "tree.npz")]
    strip_dump(sol.strip, out / "strip.csv")
    files.append(out / "strip.csv")
    files.append(save_nodes(sol.boundary, out / "boundary_nodes.txt"))
    write_manifest(out, files, cfg, "solve")
    err = rep["max_err"]
    print(f"N={rep['counts']['N']} panels={rep['counts']['n_panels']} "
          f"leaves={rep['counts']['n_leaves']} time={rep['timings']['total']:.2f}s "
          f"max_err={'n/a' if err is None else f'{err:.3e}'}")
    return 0


STUDY_FIELDS = ["eta", "p", "n_panels", "N", "N_tree", "N_strip", "n_leaves", "n_source_leaves",
                "time_s", "peak_traced_bytes", "dof_bytes", "max_err"]


def _study_row(cfg: RunConfig, eta: float, p: int) -> dict:
    sub = dataclasses.replace(cfg, eta=eta, p=p)
    tracemalloc.start()
    t0 = time.perf_counter()
    pan = build_boundary(sub)
    problem = build_problem(sub, pan, eta)
    spec = ProblemSpec(problem.f, problem.g, eps=sub.eps, p=p, p_r=sub.p_r, pan=pan, exact=problem.exact)
    sol = solve(spec)
    elapsed = time.perf_counter() - t0
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    c = sol.counts()
    err = None
    if problem.exact is not None and cfg.n_probes > 0:
        probes = random_interior_points(sol.boundary, cfg.n_probes, seed=cfg.seed + 1)
        err = float(np.nanmax(sol.errors(probes)))
    return {"eta": eta, "p": p, "n_panels": c["n_panels"], "N": c["N"], "N_tree": c["N_tree"],
            "N_strip": c["N_strip"], "n_leaves": c["n_leaves"], "n_source_leaves": c["n_source_leaves"],
            "time_s": elapsed, "peak_traced_bytes": peak, "dof_bytes": 8 * c["N"], "max_err": err}


def run_study(cfg: RunConfig) -> list[dict]:
    if cfg.mode == "eta-sweep":
        return [_study_row(cfg, eta, cfg.p) for eta in cfg.etas]
    if cfg.mode == "p-sweep":
        return [_study_row(cfg, cfg.eta, p) for p in cfg.ps]
    raise ConfigError("study needs --mode eta-sweep or p-sweep")


def cmd_study(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_study(cfg)
    path = out / "study.csv"
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=STUDY_FIELDS)
        w.writeheader()
        w.writerows(rows)
    doc = write_json(out / "study.json", {"schema": STUDY_SCHEMA, "mode": cfg.mode, "rows": rows,
                                          "memory_note": "peak_traced_bytes: tracemalloc peak of "
                                          "Python/numpy allocations during the run; dof_bytes: 8 * N"})
    write_manifest(out, [path, doc], cfg, "study")
    for r in rows:
        print(f"eta={r['eta']:.0e} p={r['p']} panels={r['n_panels']} N={r['N']} "
              f"time={r['time_s']:.2f}s err={r['max_err']}")
    return 0


def cmd_generate(name: str, params: dict, eps: float, p: int, out: str | None) -> int:
    if name not in CURVES:
        raise ConfigError(f"unknown geometry {name!r}; known: {sorted(CURVES)}")
    pan = adaptive_panelize(make_curve(name, **params), p, eps)
    path = Path(out or f"{name}.txt")
    save_nodes(pan, path)
    print(f"{name}: {pan.n_panel} panels -> {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def _add_run_args(sp):
    d = RunConfig()
    sp.add_argument("--config", help="JSON RunConfig; command-line flags override it")
    sp.add_argument("--geometry", choices=GEOMETRIES)
    sp.add_argument("--eta", type=float)
    sp.add_argument("--nodes")
    sp.add_argument("--problem", choices=tuple(PROBLEMS))
    sp.add_argument("--count", type=int)
    sp.add_argument("--sigma-min", type=float, dest="sigma_min")
    sp.add_argument("--sigma-max", type=float, dest="sigma_max")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--eps", type=float, help=f"tolerance (default {d.eps:g})")
    sp.add_argument("--p", type=int)
    sp.add_argument("--p-r", type=int, dest="p_r")
    sp.add_argument("--out", "-o")
    sp.add_argument("--n-probes", type=int, dest="n_probes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adaptpoisson", description="Adaptive 2D Poisson solver")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve one problem")
    _add_run_args(s)
    st = sub.add_parser("study", help="scaling / convergence sweeps")
    _add_run_args(st)
    st.add_argument("--mode", choices=MODES[1:], required=True)
    st.add_argument("--etas", type=_floats)
    st.add_argument("--ps", type=_ints)
    g = sub.add_parser("generate-geometry", aliases=["generate_geometry"], help="write a node file")
    g.add_argument("name")
    g.add_argument("--eta", type=float)
    g.add_argument("--eps", type=float, default=1e-10)
    g.add_argument("--p", type=int, default=16)
    g.add_argument("--out", "-o")
    return ap


def config_from_args(args) -> RunConfig:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    names = {f.name for f in dataclasses.fields(RunConfig)}
    for k, v in vars(args).items():
        if k in names and v is not None:
            base[k] = v
    if args.command == "study":
        base.setdefault("geometry", "raindrop")
        base.setdefault("problem", "cusp-gaussians")
        base.setdefault("n_probes", 2000)
    return RunConfig.from_dict(base)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("generate-geometry", "generate_geometry"):
            params = {"eta": args.eta} if args.eta is not None else {}
            return cmd_generate(args.name, params, args.eps, args.p, args.out)
        cfg = config_from_args(args)
        return cmd_solve(cfg) if args.command == "solve" else cmd_study(cfg)
    except (ConfigError, FileNotFoundError, TypeError) as exc:
        ap.print_usage(sys.stderr)
        print(f"adaptpoisson: error: {exc}", file=sys.stderr)
        return 2
    except (StageError, PanelizationError) as exc:
        print(f"adaptpoisson: stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
