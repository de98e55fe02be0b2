"""Command-line front end: ``rgroups <subcommand> [--flags]``.

Exit codes: 0 success, 1 identity failure, 2 configuration error,
3 metric parse error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__, dp, geodesic as gd, manifold as mf, rt, suite
from .errors import DomainError, MetricError, MetricParseError, SolverError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_PARSE, EXIT_SOLVER = 0, 1, 2, 3, 4


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- deterministic JSON

def _encode(obj) -> str:
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return json.dumps(bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return "null"
        text = format(v, ".17g")
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ", ".join(f"{json.dumps(k)}: {_encode(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON with sorted keys and 17 significant digits for every float."""
    return _encode(obj) + "\n"


# ---------------------------------------------------------------- argument handling

def _vector(text: str, what: str) -> np.ndarray:
    try:
        v = np.array([float(p) for p in text.split(",")])
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{what}: entries must be finite")
    return v


def _basis(name: str, n: int) -> np.ndarray:
    name = name.strip()
    if name.startswith("e") and name[1:].isdigit() and 1 <= int(name[1:]) <= n:
        return np.eye(n)[int(name[1:]) - 1]
    raise ConfigError(f"--dirs: expected basis names e1..e{n}, got {name!r}")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--manifold", required=True, help="built-in name (euclidean<n>, sphere, halfplane) or a .metric file")
    p.add_argument("--config", help="JSON file with the same keys as the long flags; flags win")
    p.add_argument("--output", help="write the JSON result here instead of standard output")
    for f in fields(gd.ExpLogConfig):
        p.add_argument("--" + f.name.replace("_", "-"), type=type(f.default), default=None, help=f"default {f.default}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgroups", description="Translation and parallel transport groups of metric charts.")
    parser.add_argument("--version", action="version", version=f"rgroups {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("manifolds", help="list built-in manifolds")

    p = sub.add_parser("verify", help="run the identity catalogue at seeded samples")
    _add_common(p)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--identities", help="comma-separated subset of identity ids")
    p.add_argument("--tol", action="append", default=[], metavar="ID=VALUE", help="tolerance override, repeatable")

    p = sub.add_parser("geodesic", help="distance and frame parameter between two points, or a geodesic endpoint")
    _add_common(p)
    p.add_argument("--from", dest="from_", required=False)
    p.add_argument("--to")
    p.add_argument("--t", help="frame vector for exp instead of --to")

    p = sub.add_parser("transport", help="pi- and lambda-transport of a vector from exp_x(t) back to x")
    _add_common(p)
    p.add_argument("--at")
    p.add_argument("--t", help="frame translation parameter")
    p.add_argument("--vector", help="frame components at exp_x(t)")

    p = sub.add_parser("holonomy", help="rotation around a small geodesic quadrilateral")
    _add_common(p)
    p.add_argument("--at")
    p.add_argument("--dirs", default="e1,e2")
    p.add_argument("--scale", type=float, default=None)
    return parser


def _merge_config(args) -> dict:
    """Flag values over config file values."""
    values = {}
    if getattr(args, "config", None):
        try:
            values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"--config: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError("--config: top level must be an object")
        values = {k.replace("-", "_"): v for k, v in values.items()}
    for k, v in vars(args).items():
        if v is not None and v != []:
            values[k.rstrip("_") if k == "from_" else k] = v
        elif k not in values:
            values[k.rstrip("_") if k == "from_" else k] = v
    return values


def _explog(values: dict) -> gd.ExpLogConfig:
    kw = {f.name: values[f.name] for f in fields(gd.ExpLogConfig) if values.get(f.name) is not None}
    try:
        return gd.ExpLogConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _manifold(ref: str) -> mf.Manifold:
    if ref is None:
        raise ConfigError("--manifold is required")
    if ref.endswith(".metric") and not Path(ref).is_file():
        raise ConfigError(f"--manifold: no such file {ref!r}")
    try:
        return mf.resolve(ref)
    except MetricParseError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _require(values: dict, key: str, flag: str):
    if values.get(key) is None:
        raise ConfigError(f"{flag} is required")
    return values[key]


def _point(M, text, flag):
    x = _vector(str(text), flag)
    if x.shape != (M.dim,):
        raise ConfigError(f"{flag}: expected {M.dim} coordinates")
    return x


# ---------------------------------------------------------------- commands

def cmd_manifolds(values: dict) -> tuple[int, dict]:
    out = []
    for name in ("euclidean2", "euclidean3", "sphere", "halfplane"):
        M = mf.resolve(name)
        out.append({"name": name, "dim": M.dim, "lower": M.lower.tolist(), "upper": M.upper.tolist()})
    return EXIT_OK, {"manifolds": out, "pattern": "euclidean<n> for any n >= 1, or a path ending in .metric"}


def cmd_verify(values: dict) -> tuple[int, dict]:
    M = _manifold(values.get("manifold"))
    cfg = _explog(values)
    samples = values.get("samples") if values.get("samples") is not None else 20
    seed = values.get("seed") if values.get("seed") is not None else 0
    if not isinstance(samples, int) or isinstance(samples, bool) or samples < 1:
        raise ConfigError("--samples must be a positive integer")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("--seed must be an integer")
    tols = {}
    raw_tols = values.get("tol") or []
    if isinstance(raw_tols, dict):
        raw_tols = [f"{k}={v}" for k, v in raw_tols.items()]
    for item in raw_tols:
        key, _, val = str(item).partition("=")
        try:
            tols[key] = float(val)
        except ValueError:
            raise ConfigError(f"--tol: expected ID=VALUE, got {item!r}") from None
        if not tols[key] > 0:
            raise ConfigError(f"--tol: tolerance for {key} must be positive")
    ids = values.get("identities")
    if isinstance(ids, str):
        ids = [i for i in ids.split(",") if i]
    try:
        suite.select(ids)
        suite.select(list(tols) or None)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None

    report = suite.run_suite(M, samples, seed, cfg, ids, tols)
    body = {
        "tool": "rgroups",
        "version": __version__,
        "config": {"manifold": values.get("manifold"), "samples": samples, "seed": seed,
                   "explog": asdict(cfg), "tolerance_overrides": tols, "identities": ids},
        "aggregates": {k: {"count": a.count, "max_residual": a.max_residual, "pass": a.passed,
                           "failures": a.failures, "skipped": a.skipped} for k, a in report.aggregates.items()},
        "records": [r.to_json() for r in report.records],
        "pass": report.passed,
    }
    for k, a in report.aggregates.items():
        mx = "n/a" if a.max_residual is None else f"{a.max_residual:.3e}"
        print(f"{'PASS' if a.passed else 'FAIL'}  {k:38s} max {mx}", file=sys.stderr)
    return (EXIT_OK if report.passed else EXIT_FAIL), body


def cmd_geodesic(values: dict) -> tuple[int, dict]:
    M = _manifold(values.get("manifold"))
    cfg = _explog(values)
    x = _point(M, _require(values, "from", "--from"), "--from")
    if values.get("to") is not None:
        y = _point(M, values["to"], "--to")
        t = gd.log_map(M, x, y, cfg)
    elif values.get("t") is not None:
        t = _vector(str(values["t"]), "--t")
        if t.shape != (M.dim,):
            raise ConfigError(f"--t: expected {M.dim} components")
        y = gd.exp_map(M, x, t, cfg)
    else:
        raise ConfigError("geodesic needs --to or --t")
    return EXIT_OK, {"from": x, "to": y, "t": t, "distance": float(np.linalg.norm(t))}


def cmd_transport(values: dict) -> tuple[int, dict]:
    M = _manifold(values.get("manifold"))
    cfg = _explog(values)
    x = _point(M, _require(values, "at", "--at"), "--at")
    t = _vector(str(_require(values, "t", "--t")), "--t")
    v = _vector(str(_require(values, "vector", "--vector")), "--vector")
    if t.shape != (M.dim,) or v.shape != (M.dim,):
        raise ConfigError(f"--t and --vector need {M.dim} components")
    pi = dp.pi_transport(M, x, t, v, cfg)
    lam = rt.lambda_transport(M, x, t, v, cfg)
    return EXIT_OK, {"at": x, "t": t, "vector": v, "endpoint": gd.exp_map(M, x, t, cfg), "pi": pi, "lambda": lam,
                     "pi_norm": float(np.linalg.norm(pi)), "lambda_norm": float(np.linalg.norm(lam)),
                     "difference": float(np.linalg.norm(pi - lam))}


def cmd_holonomy(values: dict) -> tuple[int, dict]:
    M = _manifold(values.get("manifold"))
    cfg = _explog(values)
    x = _point(M, _require(values, "at", "--at"), "--at")
    names = str(values.get("dirs") or "e1,e2").split(",")
    if len(names) != 2:
        raise ConfigError("--dirs needs exactly two basis names")
    a, b = (_basis(nm, M.dim) for nm in names)
    scale = values.get("scale") if values.get("scale") is not None else 0.1
    if not scale > 0:
        raise ConfigError("--scale must be positive")
    h = dp.holonomy_loop(M, x, a, b, float(scale), cfg)
    return EXIT_OK, {"at": x, "dirs": names, "scale": float(scale), "rotation": h.rotation, "angle": h.angle,
                     "closure_defect": h.closure_defect, "vertices": h.vertices}


COMMANDS = {"manifolds": cmd_manifolds, "verify": cmd_verify, "geodesic": cmd_geodesic,
            "transport": cmd_transport, "holonomy": cmd_holonomy}


def _emit(body: dict, path: str | None):
    text = dumps(body)
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with status 2
    start = time.perf_counter()
    try:
        values = _merge_config(args)
        code, body = COMMANDS[args.command](values)
    except ConfigError as exc:
        print(f"rgroups: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MetricParseError as exc:
        print(f"rgroups: metric parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SolverError, DomainError, MetricError) as exc:
        reason = getattr(exc, "reason", "domain-exit" if isinstance(exc, DomainError) else "non-finite")
        sys.stdout.write(dumps({"error": "solver-failure", "reason": reason, "message": str(exc)}))
        return EXIT_SOLVER
    _emit(body, values.get("output"))
    if args.command == "verify":
        # wall time stays out of the report so that reports are byte-identical across runs
        print(f"wall time {time.perf_counter() - start:.2f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
