"""Command-line driver: configuration, seeding, manifests and JSONL records.

Every run writes ``<out>/<subcommand>.jsonl`` and ``<out>/manifest.json``.  Files are written to a temporary name
and renamed into place.  The manifest is written even when the run fails.

Seeds
-----
Task ``k`` of a run with global seed ``s`` uses
``SeedSequence([s, k]).generate_state(1)[0]``, so results do not depend on the
number of workers.

Exit codes
----------
0 success, 1 usage error (bad flag, unknown config key), 2 infeasible
configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

OUT_ENV = "ARTIFACT_OUT"

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3

SUBCOMMANDS = ("constants", "sample", "zn", "shape", "coarse", "dv-check", "fk", "ineq-check")


class UsageError(Exception):
    pass


class Infeasible(Exception):
    pass


# --- configuration --------------------------------------------------------

# key -> type for every option; the config file uses the same names with '_'
COMMON = {"d": int, "n": int, "N": int, "seed": int, "beta": float, "kappa": float,
          "out": str, "workers": int}
OPTIONS = {
    "constants": {"dims": str},
    "sample": {"sweeps": int, "thin": int, "burn_in": int, "chains": int,
               "snapshot_every": int, "moves": str},
    "zn": {"mode": str, "rungs": int, "replicas": int, "sweeps_per_rung": int},
    "shape": {"input": str, "fill_factor": float, "bridges": int},
    "coarse": {"snapshot": str, "c": float},
    "dv-check": {"instances": int, "trials": int, "max_size": int, "max_t": int},
    "fk": {"input": str},
    "ineq-check": {"fields": int, "box": int},
}
DEFAULTS = {
    "d": 3, "n": None, "N": None, "seed": 0, "beta": 1.0, "kappa": 0.05, "out": None,
    "workers": 1,
    "dims": "2,3", "sweeps": 100, "thin": 1, "burn_in": 0, "chains": 1, "snapshot_every": 0,
    "moves": "0.02,0.01,0.01,0.96", "mode": "exact", "rungs": 64, "replicas": 64,
    "sweeps_per_rung": 1, "input": None, "fill_factor": 0.8, "bridges": 1, "snapshot": None,
    "c": 1.0, "instances": 50, "trials": 100000, "max_size": 4, "max_t": 20, "fields": 100,
    "box": 6,
}


def _section_name(sub):
    return sub.replace("-", "_")


def read_config(path, sub: str) -> dict:
    """Values from the ``[common]`` and ``[<subcommand>]`` sections.

    Raises
    ------
    UsageError
        On unknown sections or keys, or values that do not parse.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not cp.read(path):
        raise UsageError(f"cannot read config file {path}")
    allowed_sections = {"common"} | {_section_name(s) for s in SUBCOMMANDS}
    out = {}
    for section in cp.sections():
        if section not in allowed_sections:
            raise UsageError(f"unknown config section [{section}]")
        keys = COMMON if section == "common" else OPTIONS[section.replace("_", "-")]
        for key, raw in cp.items(section):
            if key not in keys:
                raise UsageError(f"unknown config key '{key}' in [{section}]")
            if section in ("common", _section_name(sub)):
                try:
                    out[key] = keys[key](raw)
                except ValueError as exc:
                    raise UsageError(f"bad value for '{key}': {raw}") from exc
    return out


def config_text(config: dict, sub: str) -> str:
    """Config file holding ``config`` (``None`` values omitted); inverse of :func:`read_config`."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for section, keys in (("common", COMMON), (_section_name(sub), OPTIONS[sub])):
        cp[section] = {k: str(config[k]) for k in keys if config.get(k) is not None}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# options that do not change any result
_UNHASHED = ("out", "workers")


def config_hash(config: dict) -> str:
    """Hash of the result-relevant configuration (output location and worker count excluded)."""
    blob = json.dumps({k: v for k, v in config.items() if k not in _UNHASHED},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def derive_seed(seed: int, *counters: int) -> int:
    """Counter-based child seed, independent of scheduling."""
    return int(np.random.SeedSequence([int(seed), *map(int, counters)]).generate_state(1)[0])


def code_version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:
        return "unknown"


# --- output ---------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _stamp(records, seed, chash):
    return [{**_jsonable(r), "seed": seed, "config_hash": chash} for r in records]


def jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


# --- helpers --------------------------------------------------------------

def _scale(cfg):
    from .lattice_core import ScaleRelation
    d = cfg["d"]
    if cfg.get("n") is not None:
        s = ScaleRelation(d, cfg["n"])
        if cfg.get("N") is not None and cfg["N"] != s.N:
            raise Infeasible(f"N={cfg['N']} differs from n^(d+2)={s.N}")
        return s.n, s.N
    if cfg.get("N") is not None:
        return None, cfg["N"]
    raise UsageError("need --n or --N")


def _map(func, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, tasks))


def _moves(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bad move probabilities {text!r}") from exc
    if len(vals) not in (3, 4):
        raise UsageError("moves needs three or four probabilities")
    return vals


# --- subcommands ----------------------------------------------------------

def cmd_constants(cfg, ctx):
    from .spectral import continuum_constants, eigenfunction_profile
    dims = [int(v) for v in cfg["dims"].split(",")] if cfg.get("_dims_given") is None else [cfg["d"]]
    recs = []
    for d in dims:
        s = continuum_constants(d)
        rec = {"d": d, **{k: f"{getattr(s, k):.17g}" for k in ("lambda_d", "omega_d", "rho_d", "chi_d")}}
        # squared radial slope of the normalised eigenfunction at the ball boundary
        rec["boundary_slope_sq"] = f"{eigenfunction_profile(d).boundary_slope ** 2:.17g}"
        recs.append(rec)
    return recs


def _sample_task(args):
    from .lattice_core import build_walk, write_snapshot
    from .sampler import ChainConfig, MetropolisChain
    d, N, beta, moves, seed, sweeps, thin, burn, snap_every, snap_dir, chain_id = args
    cfg = ChainConfig(d, N, beta, moves=moves, seed=seed, sweeps=sweeps, thin=thin)
    chain = MetropolisChain(cfg)
    if burn:
        chain.run_moves(burn * max(N, 1))
    recs = []
    for rec in chain.sample():
        rec["chain"] = chain_id
        if snap_every and rec["sweep"] % snap_every == 0:
            name = f"snapshots/walk_c{chain_id}_s{rec['sweep']}.txt"
            path = Path(snap_dir).parent / name
            walk = build_walk(np.zeros(d, dtype=np.int64), chain.steps, d)
            tmp = path.with_suffix(".tmp")
            write_snapshot(tmp, walk)
            os.replace(tmp, path)
            # relative to the output directory so archives are relocatable
            rec["snapshot"] = name
        recs.append(rec)
    rec = {"chain": chain_id, "summary": True, "accept_rate": chain.accepted / max(chain.proposed, 1)}
    return recs + [rec]


def cmd_sample(cfg, ctx):
    n, N = _scale(cfg)
    moves = _moves(cfg["moves"])
    snap_dir = Path(ctx["out"]) / "snapshots"
    if cfg["snapshot_every"]:
        snap_dir.mkdir(parents=True, exist_ok=True)
        ctx["outputs"].append(str(snap_dir))
    tasks = [(cfg["d"], N, cfg["beta"], moves, derive_seed(cfg["seed"], k), cfg["sweeps"],
              cfg["thin"], cfg["burn_in"], cfg["snapshot_every"], str(snap_dir), k)
             for k in range(cfg["chains"])]
    out = []
    for recs in _map(_sample_task, tasks, cfg["workers"]):
        for r in recs:
            if n is not None:
                r["n"] = n
            r["N"] = N
        out.extend(recs)
    return out


def cmd_zn(cfg, ctx):
    from .sampler import ais_partition, default_schedule, exact_partition
    _, N = _scale(cfg)
    d, beta = cfg["d"], cfg["beta"]
    if cfg["mode"] == "exact":
        z = exact_partition(d, N, beta)
        return [{"d": d, "N": N, "beta": beta, "mode": "exact", "Z": z, "log_Z": math.log(z)}]
    if cfg["mode"] == "ais":
        sched = default_schedule(cfg["rungs"], beta)
        est, se, logw = ais_partition(d, N, sched, chains=cfg["replicas"],
                                      seed=derive_seed(cfg["seed"], 0),
                                      sweeps_per_rung=cfg["sweeps_per_rung"])
        return [{"d": d, "N": N, "beta": beta, "mode": "ais", "Z": est, "se": se,
                 "replicas": cfg["replicas"], "schedule": sched.tolist()}]
    raise UsageError(f"unknown zn mode {cfg['mode']!r}")


def _shape_task(args):
    from .lattice_core import read_snapshot, ScaleRelation
    from .shape_analysis import MesoBall, analyse_sample, detect_bridges
    path, meta, fill_factor, kappa, bridges = args
    walk = read_snapshot(path)
    n = ScaleRelation.from_steps(walk.d, walk.N).n
    rec = analyse_sample(walk, n, fill_radius_factor=fill_factor)
    rec.update({k: meta[k] for k in ("sweep", "chain") if k in meta}, snapshot=path, n=n)
    if bridges:
        c = np.round(n * np.asarray(rec["center"]) - 0.5).astype(np.int64) + walk.start
        try:
            ball = MesoBall.from_scale(c, n, kappa, walk.d)
            rec["bridges"] = len(detect_bridges(walk, ball))
            rec["ball_radius"] = ball.m
        except ValueError:
            rec["bridges"] = None
    return rec


def cmd_shape(cfg, ctx):
    from .shape_analysis import range_exponent_fit
    if not cfg.get("input"):
        raise UsageError("shape needs --input (JSONL sample archives, comma separated)")
    tasks = []
    for src in cfg["input"].split(","):
        base = Path(src).parent
        with open(src) as fh:
            for line in fh:
                meta = json.loads(line)
                if meta.get("snapshot"):
                    tasks.append((str(base / meta["snapshot"]), meta, cfg["fill_factor"], cfg["kappa"],
                                  cfg["bridges"]))
    if not tasks:
        raise Infeasible("no records with snapshots in the input archives")
    recs = _map(_shape_task, tasks, cfg["workers"])
    by_n = {}
    for r in recs:
        by_n.setdefault(r["n"], []).append(r)
    agg = {"aggregate": True, "per_n": {}}
    for n, rs in sorted(by_n.items()):
        agg["per_n"][str(n)] = {
            "samples": len(rs), "mean_range": float(np.mean([r["range"] for r in rs])),
            "median_gloc": float(np.median([r["gloc"] for r in rs])),
            "fill_pass_rate": float(np.mean([r["fill"] >= 0.95 for r in rs])),
        }
    if len(by_n) >= 3:
        agg["range_exponent"] = range_exponent_fit(
            {n: np.mean([r["range"] for r in rs]) for n, rs in by_n.items()})
    return recs + [agg]


def cmd_coarse(cfg, ctx):
    from .coarse_grain import gamma_budget, pipeline_distances
    from .lattice_core import ScaleRelation, read_snapshot
    if not cfg.get("snapshot"):
        raise UsageError("coarse needs --snapshot")
    walk = read_snapshot(cfg["snapshot"])
    n = ScaleRelation.from_steps(walk.d, walk.N).n
    if n ** (walk.d + 2) != walk.N:
        raise Infeasible(f"walk length {walk.N} is not of the form n^(d+2)")
    budget = gamma_budget(n, walk.d, cfg["c"], cfg["kappa"])
    if not budget.furco_ok:
        bad = [k for k, ok in budget.furco.items() if not ok]
        raise Infeasible(f"exponent constraints violated: {', '.join(bad)}")
    return [pipeline_distances(walk, n, cfg["kappa"], cfg["c"])]


def _dv_task(args):
    from .dv_bounds import gd_check, random_gd_instance
    k, seed, trials, max_size, max_t = args
    rng = np.random.default_rng(seed)
    inst = random_gd_instance(rng, 3, max_size, max_t)
    return {"instance": k, **gd_check(inst, trials, derive_seed(seed, 1))}


def cmd_dv_check(cfg, ctx):
    if not 1 <= cfg["max_size"] or cfg["max_t"] < 2:
        raise Infeasible("need max_size >= 1 and max_t >= 2")
    tasks = [(k, derive_seed(cfg["seed"], k), cfg["trials"], cfg["max_size"], cfg["max_t"])
             for k in range(cfg["instances"])]
    return _map(_dv_task, tasks, cfg["workers"])


def read_voxels(path):
    from .variational import VoxelDomain
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise UsageError("empty voxel file")
    spacing = float(lines[0][0])
    cells = np.array([[int(v) for v in ln] for ln in lines[1:]], dtype=np.int64)
    if cells.ndim != 2 or cells.shape[0] == 0:
        raise UsageError("voxel file needs one cell index per line after the spacing")
    return VoxelDomain(spacing, cells)


def cmd_fk(cfg, ctx):
    from .variational import fk_deficit, fraenkel_asymmetry
    if not cfg.get("input"):
        raise UsageError("fk needs --input")
    G = read_voxels(cfg["input"])
    A, center, radius = fraenkel_asymmetry(G)
    return [{"asymmetry": A, "ball_center": center, "ball_radius": radius,
             **fk_deficit(G).as_record()}]


def cmd_ineq_check(cfg, ctx):
    from .interpolation import (
        check_poincare_sobolev, check_poincare_wirtinger, check_sobolev_full_space,
        poincare_wirtinger_constant,
    )
    from .lattice_core import SiteField, box_sites
    d = cfg["d"]
    box = cfg["box"]
    rng = np.random.default_rng(derive_seed(cfg["seed"], 0))
    sites = box_sites(np.zeros(d, dtype=np.int64), box)
    recs = []
    for k in range(cfg["fields"]):
        vals = rng.exponential(size=sites.shape[0]) * (rng.random(sites.shape[0]) < rng.random())
        f = SiteField(sites, vals, d=d)
        rec = {"field": k, "d": d, "box": box}
        if np.any(vals):
            rec["upw"] = check_poincare_wirtinger(f, box)
            if d >= 3:
                rec["ups"] = check_poincare_sobolev(f, box)
                rec["tps"] = check_sobolev_full_space(f)
        recs.append(rec)
    recs.append({"summary": True, "c_pw": poincare_wirtinger_constant(d, box),
                 "max_upw": max((r.get("upw", 0.0) for r in recs), default=0.0)})
    return recs


COMMANDS = {
    "constants": cmd_constants, "sample": cmd_sample, "zn": cmd_zn, "shape": cmd_shape,
    "coarse": cmd_coarse, "dv-check": cmd_dv_check, "fk": cmd_fk, "ineq-check": cmd_ineq_check,
}


# --- entry point ----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="artifact", description="Range-penalised random walk toolkit.")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        for key, typ in {**COMMON, **OPTIONS[name]}.items():
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ, default=None)
    return p


def resolve_config(args) -> dict:
    sub = args.subcommand
    cfg = {k: DEFAULTS[k] for k in {**COMMON, **OPTIONS[sub]}}
    if args.config:
        cfg.update(read_config(args.config, sub))
    given = {k: v for k, v in vars(args).items()
             if v is not None and k in cfg}
    cfg.update(given)
    if sub == "constants" and ("d" in given or (args.config and "d" in read_config(args.config, sub))):
        cfg["_dims_given"] = True
    if cfg["out"] is None:
        cfg["out"] = os.environ.get(OUT_ENV, "runs")
    return cfg


def manifest_config(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def run(argv=None) -> int:
    """Parse, execute and persist; returns the exit status."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = resolve_config(args)
    except UsageError as exc:
        out = Path(args.out or os.environ.get(OUT_ENV, "runs"))
        manifest = {"subcommand": args.subcommand, "version": code_version(),
                    "error": str(exc), "status": EXIT_USAGE, "outputs": []}
        atomic_write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sub = args.subcommand
    out = Path(cfg["out"])
    echo = manifest_config(cfg)
    chash = config_hash(echo)
    ctx = {"out": str(out), "outputs": []}
    manifest = {"subcommand": sub, "config": echo, "config_hash": chash, "seed": cfg["seed"],
                "version": code_version(), "start": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                "outputs": ctx["outputs"]}
    status = EXIT_OK
    try:
        recs = COMMANDS[sub](cfg, ctx)
        target = out / f"{sub}.jsonl"
        atomic_write(target, jsonl(_stamp(recs, cfg["seed"], chash)))
        ctx["outputs"].append(str(target))
    except UsageError as exc:
        status, manifest["error"] = EXIT_USAGE, str(exc)
    except (Infeasible, ValueError) as exc:
        status, manifest["error"] = EXIT_INFEASIBLE, str(exc)
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        status, manifest["error"] = EXIT_NUMERICAL, str(exc)
    manifest["end"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    manifest["status"] = status
    atomic_write(out / "manifest.json", json.dumps(_jsonable(manifest), indent=1, sort_keys=True) + "\n")
    if "error" in manifest:
        print(f"error: {manifest['error']}", file=sys.stderr)
    return status


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
