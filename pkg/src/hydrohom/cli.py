"""Command-line front end.

Usage::

    hydrohom COMMAND [--config PATH] [--out DIR] [--threads N] [--seed U64]
                     [--tol REAL] [--allow-seminorm]

Commands: tensor, transport, bounds, sweep-lambda, sweep-eps, ordering,
random-subadd, check. Exit codes: 0 all asserted invariants hold, 1 some
invariant failed, 2 configuration error, 3 no convergence, 4 degenerate
form.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import io
from .exceptions import (ConfigError, DegenerateForm, DegenerateThermodynamics,
                         DimensionMismatch, HydroHomError, NoConvergence, SingularBasis)
from .experiments import (bc_ordering_check, eps_convergence_study, small_osc_sweep,
                          subadditivity_mc)
from .fields import (default_gamma, dirac_preset, galilean_preset, oscillation,
                     scalar_preset, small_oscillation_family)
from .forms import FormContext, estimate_stability_constant
from .grid import Grid, mean
from .solver import (DEFAULT_TOL, dense_oracle_tensor, effective_tensor, effective_tensor_natural,
                     effective_tensor_natural_periodic, reconstruct_fields, weak_residual)
from .transport import transport_summary, voigt_bound

log = logging.getLogger("hydrohom")

COMMANDS = ("tensor", "transport", "bounds", "sweep-lambda", "sweep-eps", "ordering",
            "random-subadd", "check")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NOCONV, EXIT_DEGENERATE = 0, 1, 2, 3, 4

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_mode = {
    "type": "object",
    "additionalProperties": False,
    "required": ["wavevector"],
    "properties": {
        "amplitude": _num,
        "wavevector": {"type": "array", "items": {"type": "integer"}, "minItems": 1, "maxItems": 2},
        "phase": _num,
    },
}
_profile = {
    "oneOf": [
        _num,
        {"const": "default"},
        {"type": "object", "additionalProperties": False, "required": ["modes"],
         "properties": {"offset": _num, "modes": {"type": "array", "items": _mode}}},
    ]
}
_preset_params = {
    "dirac": {"gamma": _profile, "sigma_q": _pos, "eta": _pos, "zeta": _nonneg},
    "galilean": {"kappa_q": _pos, "n": _profile, "s": _profile, "eta": _pos, "zeta": _nonneg},
    "scalar": {"n": _profile, "eta": _pos, "zeta": _nonneg},
    "small_oscillation": {"lam": _nonneg, "eta": _pos, "zeta": _nonneg},
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "preset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {"name": {"enum": list(_preset_params)}, "params": {"type": "object"}},
            "allOf": [
                {"if": {"properties": {"name": {"const": name}}},
                 "then": {"properties": {"params": {"type": "object", "additionalProperties": False,
                                                    "properties": props}}}}
                for name, props in _preset_params.items()
            ],
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["shape"],
            "properties": {
                "shape": {"type": "array", "items": {"type": "integer", "minimum": 4},
                          "minItems": 1, "maxItems": 2},
                "lengths": {"type": "array", "items": _pos, "minItems": 1, "maxItems": 2},
                "kind": {"enum": ["periodic", "dirichlet", "natural"]},
                "scheme": {"enum": ["spectral", "fd"]},
            },
        },
        "bc": {"enum": ["periodic", "dirichlet", "natural", "natural_periodic"]},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": _pos,
                "maxiter": {"type": ["integer", "null"], "minimum": 1},
                "dealias": {"type": "boolean"},
                "theta_samples": {"type": "integer", "minimum": 64},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambdas": {"type": "array", "items": _pos, "minItems": 2},
                "epsilons": {"type": "array", "items": _pos, "minItems": 2},
                "min_reduction": {"type": "number", "minimum": 0, "maximum": 1},
                "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
                "samples": {"type": "integer", "minimum": 2},
                "points_per_cell": {"type": "integer", "minimum": 4},
                "amplitude": _nonneg,
                "smoothing_radius": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "transport": {"type": "object", "additionalProperties": False,
                      "properties": {"T0": _pos}},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "threads": {"type": "integer", "minimum": 1},
        "allow_seminorm": {"type": "boolean"},
        "write_fields": {"type": "boolean"},
        "out": {"type": "string"},
    },
}

DEFAULTS = {
    "preset": {"name": "dirac", "params": {}},
    "grid": {"shape": [16, 16], "kind": "periodic"},
    "bc": "periodic",
    "solver": {"tol": DEFAULT_TOL, "maxiter": None, "dealias": False, "theta_samples": 256},
    "sweep": {"lambdas": [0.2, 0.1, 0.05, 0.025], "epsilons": [0.5, 0.25, 0.125, 0.0625],
              "min_reduction": 0.2, "sizes": [1, 2, 4, 8], "samples": 16, "points_per_cell": 8,
              "amplitude": 1.0, "smoothing_radius": 0.5},
    "transport": {"T0": 1.0},
    "seed": 0,
    "allow_seminorm": False,
    "write_fields": False,
    "out": "results",
}


# ---------------------------------------------------------------------------
# configuration


def bundled_config(name: str = "dirac16.json") -> dict:
    text = resources.files("hydrohom").joinpath("configs", name).read_text()
    return json.loads(text)


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides=None) -> dict:
    """Read, validate and complete a configuration.

    Raises
    ------
    ConfigError
        On unreadable files, schema violations or unknown keys.
    """
    if path is None:
        raw = bundled_config()
    else:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    cfg = _merge(DEFAULTS, raw)
    if "params" not in cfg["preset"]:
        cfg["preset"]["params"] = {}
    return cfg


def _profile_fn(profile, grid):
    if profile is None:
        return None
    if profile == "default":
        return default_gamma(grid)
    if isinstance(profile, (int, float)):
        return float(profile)
    offset = float(profile.get("offset", 0.0))
    modes = profile["modes"]

    def fn(*x):
        out = np.full(x[0].shape, offset)
        for md in modes:
            k = md["wavevector"]
            if len(k) != grid.dim:
                raise ConfigError(f"wavevector {k} does not match dimension {grid.dim}")
            arg = sum(2 * np.pi * k[d] * x[d] / grid.lengths[d] for d in range(grid.dim))
            out = out + float(md.get("amplitude", 1.0)) * np.sin(arg + float(md.get("phase", 0.0)))
        return out

    return fn


def build_grid(cfg) -> Grid:
    g = cfg["grid"]
    try:
        return Grid(tuple(g["shape"]), tuple(g["lengths"]) if "lengths" in g else None,
                    g.get("kind", "periodic"), g.get("scheme"))
    except (ValueError, DimensionMismatch) as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc


def build_coefficients(cfg, grid=None):
    grid = build_grid(cfg) if grid is None else grid
    name = cfg["preset"]["name"]
    p = dict(cfg["preset"]["params"])
    try:
        if name == "dirac":
            if "gamma" in p:
                p["gamma"] = _profile_fn(p["gamma"], grid)
            return dirac_preset(grid, **p)
        if name == "galilean":
            for k in ("n", "s"):
                if k in p:
                    p[k] = _profile_fn(p[k], grid)
            return galilean_preset(grid, **p)
        if name == "scalar":
            if "n" in p:
                p["n"] = _profile_fn(p["n"], grid)
            return scalar_preset(grid, **p)
        lam = p.pop("lam", 0.1)
        return small_oscillation_family(grid, lam, **p)
    except (ValueError, DimensionMismatch, SingularBasis, DegenerateThermodynamics) as exc:
        raise ConfigError(f"invalid {name} medium: {exc}") from exc


def _context(cfg, coeffs):
    s = cfg["solver"]
    try:
        return FormContext(coeffs, dealias=s["dealias"], theta_samples=s["theta_samples"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _echo(cfg) -> dict:
    """Configuration as recorded in outputs (run-environment keys removed)."""
    return {k: v for k, v in cfg.items() if k not in ("threads", "out")}


# ---------------------------------------------------------------------------
# commands; each returns (outputs, passed) with outputs mapping names to payloads


def _tensor(cfg, ctx):
    s = cfg["solver"]
    kw = dict(tol=s["tol"], maxiter=s["maxiter"], allow_seminorm=cfg["allow_seminorm"],
              threads=cfg["threads"])
    bc = cfg["bc"]
    if bc == "natural":
        return effective_tensor_natural(ctx, **kw)
    if bc == "natural_periodic":
        return effective_tensor_natural_periodic(ctx, **kw)
    return effective_tensor(ctx, bc=bc, **kw)


def _tensor_payload(t):
    d = t.to_dict()
    d["eigenvalues"] = [float(x) for x in t.eigenvalues]
    return d


def _solve_rows(t):
    return [{"column": i, "iterations": it, "residual": r}
            for i, (it, r) in enumerate(zip(t.iterations, t.residuals))]


def cmd_tensor(cfg):
    coeffs = build_coefficients(cfg)
    ctx = _context(cfg, coeffs)
    t = _tensor(cfg, ctx)
    sym = float(np.max(np.abs(t.matrix - t.matrix.T)))
    checks = {
        "residuals": max(t.residuals) <= cfg["solver"]["tol"],
        "positive_definite": t.positive_definite,
        "symmetric": sym <= 1e-12 * max(1.0, float(np.max(np.abs(t.matrix)))),
    }
    out = {
        "tensor.json": _tensor_payload(t),
        "summary.json": {"command": "tensor", "oscillation": ctx.oscillation.value,
                         "dual_residual": coeffs.dual_residual(), "checks": checks,
                         "passed": all(checks.values()), "config": _echo(cfg)},
        "rows.csv": _solve_rows(t),
    }
    if cfg["write_fields"]:
        for i, J in enumerate(t.solutions):
            out[f"fields/current_{i}.bin"] = (J.values, {"grid": t.grid, "column": i,
                                                         "layout": "D, m, *nodes"})
    return out, all(checks.values())


def cmd_transport(cfg):
    coeffs = build_coefficients(cfg)
    if coeffs.m != 2:
        raise ConfigError("transport needs two conserved currents (m = 2)")
    ctx = _context(cfg, coeffs)
    t = _tensor(cfg, ctx)
    A = np.linalg.inv(t.matrix) if cfg["bc"].startswith("natural") else t.matrix
    ts = transport_summary(A, t.D, T0=cfg["transport"]["T0"])
    ident = float(np.max(np.abs(ts.block_matrix() @ A - np.eye(A.shape[0]))))
    schur = float(np.min(np.linalg.eigvalsh(ts.kappa_tilde - ts.kappa)))
    checks = {"block_inverse": ident < 1e-9, "kappa_below_kappa_tilde": schur >= -1e-12}
    row = {"lorenz": ts.lorenz, "wf_ratio": ts.wf_ratio, "wf_ratio_measured": ts.wf_ratio_measured,
           "block_identity_error": ident}
    out = {
        "tensor.json": _tensor_payload(t),
        "summary.json": {"command": "transport", "transport": ts.to_dict(), "checks": checks,
                         "passed": all(checks.values()), "config": _echo(cfg)},
        "rows.csv": [row],
    }
    return out, all(checks.values())


def cmd_bounds(cfg):
    coeffs = build_coefficients(cfg)
    ctx = _context(cfg, coeffs)
    t = _tensor(cfg, ctx)
    if cfg["bc"].startswith("natural"):
        raise ConfigError("bounds compares against periodic or dirichlet tensors")
    tctx = ctx if cfg["bc"] == "periodic" else FormContext(coeffs.to_box("dirichlet"))
    rows = []
    D, m = t.D, t.m
    for i in range(D * m):
        c = np.eye(D * m)[i].reshape(D, m)
        vb = voigt_bound(tctx, c)
        val = t.quadratic(c)
        rows.append({"column": i, "voigt": vb, "tensor": val, "margin": vb - val})
    ok = all(r["margin"] >= -1e-9 for r in rows)
    out = {
        "tensor.json": _tensor_payload(t),
        "summary.json": {"command": "bounds", "checks": {"voigt_above_tensor": ok},
                         "passed": ok, "config": _echo(cfg)},
        "rows.csv": rows,
    }
    return out, ok


def _study_outputs(cfg, name, res, columns=None):
    summary = {"command": name, **res.summary(), "config": _echo(cfg)}
    return {"summary.json": summary, "rows.csv": (res.rows, columns)}, res.passed


def cmd_sweep_lambda(cfg):
    grid = build_grid(cfg)
    p = cfg["preset"]["params"]
    if cfg["preset"]["name"] != "small_oscillation":
        log.info("sweep-lambda always uses the small-oscillation family")
    res = small_osc_sweep(grid, cfg["sweep"]["lambdas"], eta=p.get("eta", 0.1),
                          zeta=p.get("zeta", 0.0), tol=cfg["solver"]["tol"], threads=cfg["threads"])
    return _study_outputs(cfg, "sweep-lambda", res)


def cmd_sweep_eps(cfg):
    grid = build_grid(cfg)
    if not grid.periodic:
        raise ConfigError("sweep-eps needs a periodic unit-cell grid")
    coeffs = build_coefficients(cfg, grid)
    sw = cfg["sweep"]
    res = eps_convergence_study(coeffs, sw["epsilons"], tol=cfg["solver"]["tol"],
                                min_reduction=sw["min_reduction"],
                                allow_seminorm=cfg["allow_seminorm"], threads=cfg["threads"])
    return _study_outputs(cfg, "sweep-eps", res)


def cmd_ordering(cfg):
    grid = build_grid(cfg)
    if not grid.periodic:
        raise ConfigError("ordering needs periodic coefficients")
    coeffs = build_coefficients(cfg, grid)
    res = bc_ordering_check(coeffs, tol=cfg["solver"]["tol"], allow_seminorm=cfg["allow_seminorm"],
                            threads=cfg["threads"])
    return _study_outputs(cfg, "ordering", res)


def cmd_random_subadd(cfg):
    sw = cfg["sweep"]
    p = cfg["preset"]["params"]
    res = subadditivity_mc(cfg["seed"], sw["sizes"], sw["samples"], sw["points_per_cell"],
                           sw["amplitude"], sw["smoothing_radius"], eta=p.get("eta", 0.1),
                           zeta=p.get("zeta", 0.0), tol=cfg["solver"]["tol"], threads=cfg["threads"])
    if res.extra["degenerate_samples"] == res.extra["samples"]:
        raise DegenerateForm("every sampled medium has vanishing oscillation", oscillation=0.0)
    return _study_outputs(cfg, "random-subadd", res)


def run_checks(cfg) -> list:
    """Invariant suite on the configured (small) medium; one dict per check."""
    coeffs = build_coefficients(cfg)
    ctx = _context(cfg, coeffs)
    tol = cfg["solver"]["tol"]
    kw = dict(tol=tol, allow_seminorm=cfg["allow_seminorm"], threads=cfg["threads"])
    rows = []

    def add(name, value, threshold, passed):
        rows.append({"check": name, "value": float(value), "threshold": float(threshold),
                     "passed": bool(passed)})

    add("dual_residual", coeffs.dual_residual(), 1e-10, coeffs.dual_residual() < 1e-10)
    osc = ctx.oscillation.value
    add("oscillation_positive", osc, 0.0, osc > 0)
    t = effective_tensor(ctx, **kw)
    add("cg_residual", max(t.residuals), tol, max(t.residuals) <= tol)
    ev = t.eigenvalues
    add("tensor_min_eigenvalue", ev[0], 0.0, ev[0] > 0)
    if ctx.n_dofs <= 4096:
        dense = dense_oracle_tensor(ctx, allow_seminorm=cfg["allow_seminorm"])
        err = float(np.max(np.abs(dense.matrix - t.matrix)) / np.max(np.abs(t.matrix)))
        add("dense_oracle_agreement", err, 1e-9, err < 1e-9)
    D, m = t.D, t.m
    margins = [voigt_bound(ctx, np.eye(D * m)[i].reshape(D, m)) - t.quadratic(np.eye(D * m)[i])
               for i in range(D * m)]
    add("voigt_margin", min(margins), -1e-9, min(margins) >= -1e-9)
    rel, weak = 0.0, 0.0
    for i, J in enumerate(t.solutions):
        c = np.eye(D * m)[i].reshape(D, m)
        v, gpsi, _ = reconstruct_fields(ctx, J)
        lhs = -mean(gpsi, ctx.grid)
        rhs = t.apply(c)
        rel = max(rel, float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)))
        weak = max(weak, weak_residual(ctx, gpsi, v))
    add("homogenized_relation", rel, 1e-6, rel < 1e-6)
    add("weak_residual", weak, 1e-6, weak < 1e-6)
    if m == 2:
        ts = transport_summary(t.matrix, D, cfg["transport"]["T0"])
        ident = float(np.max(np.abs(ts.block_matrix() @ t.matrix - np.eye(D * m))))
        add("transport_block_inverse", ident, 1e-9, ident < 1e-9)
        schur = float(np.min(np.linalg.eigvalsh(ts.kappa_tilde - ts.kappa)))
        add("kappa_below_kappa_tilde", schur, -1e-12, schur >= -1e-12)
    if D == 2 and osc > 0:
        order = bc_ordering_check(coeffs, tol=tol, threads=cfg["threads"])
        r0, r1, r2 = order.rows
        add("ordering_dirichlet_periodic", r0["eig_min"], -1e-7, order.flags["dirichlet_above_periodic"])
        add("ordering_dual_identity", r1["norm"], 1e-7, order.flags["periodic_equals_dual"])
        add("ordering_dual_natural", r2["eig_min"], -1e-7, order.flags["dual_above_natural"])
        C, _, ratios = estimate_stability_constant(ctx, samples=128, seed=cfg["seed"])
        add("stability_constant", C, float("inf"), np.isfinite(C) and C > 0)
    return rows


def cmd_check(cfg):
    rows = run_checks(cfg)
    passed = all(r["passed"] for r in rows)
    out = {
        "summary.json": {"command": "check", "checks": {r["check"]: r["passed"] for r in rows},
                         "passed": passed, "config": _echo(cfg)},
        "rows.csv": (rows, ["check", "value", "threshold", "passed"]),
    }
    return out, passed


HANDLERS = {
    "tensor": cmd_tensor,
    "transport": cmd_transport,
    "bounds": cmd_bounds,
    "sweep-lambda": cmd_sweep_lambda,
    "sweep-eps": cmd_sweep_eps,
    "ordering": cmd_ordering,
    "random-subadd": cmd_random_subadd,
    "check": cmd_check,
}


# ---------------------------------------------------------------------------
# entry point


def write_outputs(out_dir, outputs):
    """Serialize every payload; each file is replaced atomically."""
    out_dir = Path(out_dir)
    blobs = {}
    for name, payload in outputs.items():
        if name.endswith(".json"):
            blobs[name] = io.dumps(payload).encode()
        elif name.endswith(".csv"):
            rows, cols = payload if isinstance(payload, tuple) else (payload, None)
            blobs[name] = io.csv_text(rows, cols).encode()
        elif name.endswith(".bin"):
            arr, meta = payload
            blobs[name] = ("field", arr, meta)
    for name in sorted(blobs):
        blob = blobs[name]
        if isinstance(blob, tuple):
            io.write_field(out_dir / name, blob[1], blob[2])
        else:
            io.atomic_write_bytes(out_dir / name, blob)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hydrohom", description="Effective tensors of "
                                "multi-current fluids by cell-problem minimization.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration (default: bundled 16x16 Dirac medium)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="concurrent solves (default: CPU count)")
    p.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    p.add_argument("--tol", type=float, help="relative CG residual")
    p.add_argument("--allow-seminorm", action="store_true", default=None,
                   help="solve even when the oscillation vanishes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        overrides = {"seed": args.seed, "threads": args.threads, "out": args.out,
                     "allow_seminorm": args.allow_seminorm}
        cfg = load_config(args.config, overrides)
        if args.tol is not None:
            if not args.tol > 0:
                raise ConfigError("--tol must be positive")
            cfg["solver"]["tol"] = args.tol
        if cfg.get("command", args.command) != args.command:
            log.info("config command %s overridden by %s", cfg["command"], args.command)
        cfg["command"] = args.command
        cfg.setdefault("threads", os.cpu_count() or 1)
        outputs, passed = HANDLERS[args.command](cfg)
        write_outputs(cfg["out"], outputs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except DegenerateForm as exc:
        osc = getattr(exc, "oscillation", None)
        print(f"degenerate form (oscillation = {osc}): {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except HydroHomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if not passed:
        print("some invariants failed; see summary.json", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
