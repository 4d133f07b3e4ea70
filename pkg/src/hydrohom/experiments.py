"""Reproducible numerical studies built on the cell-problem solvers.

Each study returns a :class:`StudyResult` whose rows are ordered by the
sweep parameter (or sample index) and carry the residuals of their solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateForm, ResolutionInsufficient
from .fields import (CoefficientSet, build_dual_basis, dirac_preset, oscillation,
                     random_stationary_field, small_oscillation_family)
from .forms import FormContext, integer_scale, tile_coefficients
from .grid import FROZEN_LAYERS, Grid
from .solver import (DEFAULT_TOL, ConstantTensorForm, _run, effective_tensor,
                     effective_tensor_natural, effective_tensor_natural_periodic,
                     homogenized_preconditioner, solve_cell_problem)
from .transport import leading_quotients, small_oscillation_eigen_split

MIN_POINTS_PER_CELL = 8


@dataclass
class StudyResult:
    """Rows of one study plus fitted quantities and pass/fail flags."""

    name: str
    parameter: str
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.flags.values())

    @property
    def values(self) -> list:
        return [r[self.parameter] for r in self.rows]

    def column(self, key) -> np.ndarray:
        return np.array([r[key] for r in self.rows], dtype=float)

    def summary(self) -> dict:
        return {
            "study": self.name,
            "parameter": self.parameter,
            "values": self.values,
            "fits": self.fits,
            "flags": {k: bool(v) for k, v in self.flags.items()},
            "passed": self.passed,
            "seeds": self.seeds,
            **self.extra,
        }


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _l2(f, grid) -> float:
    return float(np.sqrt(np.sum(grid.weights * np.sum(f ** 2, axis=0))))


# ---------------------------------------------------------------------------
# epsilon -> 0


def _fd_cell(cell: CoefficientSet) -> CoefficientSet:
    g = cell.grid
    if not g.periodic:
        raise ValueError("unit-cell coefficients must be periodic")
    if g.scheme == "fd":
        return cell
    return cell.scaled_copy(g.with_kind("periodic", "fd"))


def eps_convergence_study(cell: CoefficientSet, epsilons=(1 / 2, 1 / 4, 1 / 8, 1 / 16), c0=None,
                          data=None, tol=DEFAULT_TOL, min_reduction=0.2, tensor_gap=True,
                          allow_seminorm=False, frozen=1, threads=1) -> StudyResult:
    """Dirichlet problems on ``epsilon``-periodic media against the homogenized one.

    For every ``epsilon = 1/N`` the unit cell is tiled ``N`` times over the
    unit box and the heterogeneous problem with boundary current ``c0`` (plus
    the optional data potential) is solved. The homogenized problem uses the
    constant periodic cell tensor on the same grid and stencils, so the
    reported error isolates the coefficient oscillation.

    Parameters
    ----------
    cell : CoefficientSet
        Periodic unit-cell coefficients; at least 8 nodes per axis.
    epsilons : sequence of float
        Each ``1/epsilon`` must be an integer.
    c0 : array_like, shape (D, m), optional
        Constant boundary current; defaults to all entries ``1/sqrt(D m)``.
    data : callable, optional
        ``data(*coords)`` returning an ``(m, *nodes)`` smooth potential that
        is added to both problems and fixes their boundary values.
    min_reduction : float
        Required relative error decrease per halving of ``epsilon``.
    tensor_gap : bool
        Also compute the Dirichlet tensor of each tiled medium.
    frozen : int
        Pinned boundary layers of the Dirichlet grids. One layer is the plain
        boundary condition; thicker layers eat into the coarsest media.

    Returns
    -------
    StudyResult
        Rows carry ``epsilon``, the L2 error of the potentials, the
        iterations and residuals, and optionally the tensor gap.
    """
    cell = _fd_cell(cell)
    ppc = min(cell.grid.shape)
    if ppc < MIN_POINTS_PER_CELL:
        raise ResolutionInsufficient(
            f"{ppc} points per cell; at least {MIN_POINTS_PER_CELL} are needed")
    D, m = cell.dim, cell.m
    c0 = np.full((D, m), 1 / np.sqrt(D * m)) if c0 is None else np.asarray(c0, dtype=float)
    cell_ctx = FormContext(cell)
    abar = effective_tensor(cell_ctx, tol=tol, allow_seminorm=allow_seminorm, threads=threads)

    eps_sorted = sorted((float(e) for e in epsilons), reverse=True)
    rows = []
    for eps in eps_sorted:
        N = integer_scale(eps)
        tiled = tile_coefficients(cell, N, "dirichlet")
        g = tiled.grid
        grid = Grid(g.shape, g.lengths, "dirichlet", "fd", frozen)
        coeffs = tiled.scaled_copy(grid)
        ctx = FormContext(coeffs, epsilon=1.0 / N)
        ctx.require_nondegenerate(allow_seminorm)
        M = homogenized_preconditioner(ctx, abar.matrix)
        dvals = None if data is None else np.asarray(grid.sample(data), dtype=float).reshape(
            (m,) + grid.node_shape)
        f_eps, _, rep = solve_cell_problem(ctx, c0, tol, allow_seminorm=allow_seminorm, data=dvals,
                                           precond=M)
        hom = ConstantTensorForm(grid, m, abar.matrix)
        f_hom, _, rep_h = solve_cell_problem(hom, c0, tol, data=dvals)
        row = {
            "epsilon": eps,
            "cells": N,
            "nodes": grid.node_shape[0],
            "error_l2": _l2(f_eps.values - f_hom.values, grid),
            "iterations": rep.iterations,
            "residual": max(rep.residual, rep_h.residual),
        }
        if tensor_gap:
            aD = effective_tensor(ctx, bc="dirichlet", tol=tol, allow_seminorm=allow_seminorm,
                                  threads=threads, precond=M)
            ev = np.linalg.eigvalsh(aD.matrix - abar.matrix)
            row["gap_min"] = float(ev[0])
            row["gap_max"] = float(ev[-1])
            row["residual"] = max(row["residual"], max(aD.residuals))
        rows.append(row)

    err = np.array([r["error_l2"] for r in rows])
    ratios = err[1:] / np.where(err[:-1] > 0, err[:-1], np.inf)
    res = StudyResult("eps_convergence", "epsilon", rows)
    res.fits = {"reduction_ratios": [float(r) for r in ratios],
                "cell_tensor": [float(x) for x in abar.matrix.reshape(-1)]}
    if np.all(err[:-1] > 0):
        res.fits["rate"] = loglog_slope([r["epsilon"] for r in rows], np.maximum(err, 1e-300))
    res.flags = {
        "strictly_decreasing": bool(np.all(np.diff(err) < 0)),
        "min_reduction": bool(np.all(ratios <= 1 - min_reduction)),
    }
    if tensor_gap and len(rows) > 1:
        gaps = [max(abs(r["gap_min"]), abs(r["gap_max"])) for r in rows]
        res.flags["gap_shrinks"] = bool(gaps[-1] < gaps[0])
    return res


# ---------------------------------------------------------------------------
# ordering of boundary conditions


def bc_ordering_check(coeffs: CoefficientSet, tol=DEFAULT_TOL, abs_tol=1e-7,
                      allow_seminorm=False, threads=1) -> StudyResult:
    """Compare the Dirichlet, periodic and natural tensors of one medium.

    The periodic coefficients are evaluated with the finite-difference
    stencil on the torus and wrap-padded onto the box, so all four problems
    share one discretization. Reported are the eigenvalues of
    ``A_D - A_per``, ``A_per - inv(B_per)`` and ``inv(B_per) - inv(B_nat)``.

    Flags pass when both outer differences are above ``-abs_tol`` and the
    middle one is below ``abs_tol`` relative to ``|A_per|``.
    """
    coeffs = _fd_cell(coeffs)
    ctx = FormContext(coeffs)
    kw = dict(tol=tol, allow_seminorm=allow_seminorm, threads=threads)
    a_per = effective_tensor(ctx, **kw)
    a_dir = effective_tensor(ctx, bc="dirichlet", **kw)
    b_per = effective_tensor_natural_periodic(ctx, **kw)
    b_nat = effective_tensor_natural(ctx, **kw)
    Ap = a_per.matrix
    Bp_inv = np.linalg.inv(b_per.matrix)
    Bn_inv = np.linalg.inv(b_nat.matrix)
    pairs = [
        ("dirichlet_minus_periodic", a_dir.matrix - Ap, a_dir),
        ("periodic_minus_dual_periodic", Ap - Bp_inv, b_per),
        ("dual_periodic_minus_natural", Bp_inv - Bn_inv, b_nat),
    ]
    rows = []
    for name, diff, t in pairs:
        ev = np.linalg.eigvalsh(0.5 * (diff + diff.T))
        rows.append({"comparison": name, "eig_min": float(ev[0]), "eig_max": float(ev[-1]),
                     "norm": float(np.linalg.norm(diff, 2)),
                     "residual": float(max(max(t.residuals), max(a_per.residuals)))})
    scale = float(np.linalg.norm(Ap, 2))
    res = StudyResult("bc_ordering", "comparison", rows)
    res.flags = {
        "dirichlet_above_periodic": rows[0]["eig_min"] >= -abs_tol,
        "periodic_equals_dual": rows[1]["norm"] < abs_tol * scale,
        "dual_above_natural": rows[2]["eig_min"] >= -abs_tol,
    }
    res.extra = {"tensors": {t.kind: [float(x) for x in t.matrix.reshape(-1)]
                             for t in (a_per, a_dir, b_per, b_nat)}}
    return res


# ---------------------------------------------------------------------------
# small oscillations


def small_osc_sweep(grid: Grid, lams=(0.2, 0.1, 0.05, 0.025), include_zero=True, a0=None,
                    b0=None, eta=0.1, zeta=0.0, tol=DEFAULT_TOL, slope_tol=0.1,
                    osc_rtol=0.01, threads=1) -> StudyResult:
    """Effective tensors of the small-oscillation family over ``lam``.

    Rows hold the oscillation, its ratio to ``lam**2`` and the eigenvalues
    of the tensor split along ``{c : c w0^T = 0}``. Fitted log-log slopes of
    the small and large eigenvalues are checked against 2 and 0.
    """
    a0 = np.array([[-1.0, 0.0]]) if a0 is None else np.atleast_2d(np.asarray(a0, dtype=float))
    b0 = np.array([0.0, 1.0]) if b0 is None else np.asarray(b0, dtype=float)
    _, w0 = build_dual_basis(a0, b0)
    lams = sorted({float(x) for x in lams} | ({0.0} if include_zero else set()))
    rows = []
    for lam in lams:
        coeffs = small_oscillation_family(grid, lam, a0=a0, b0=b0, eta=eta, zeta=zeta)
        ctx = FormContext(coeffs)
        abar = effective_tensor(ctx, tol=tol, allow_seminorm=lam == 0, threads=threads)
        large, small = small_oscillation_eigen_split(abar, w0)
        osc = ctx.oscillation.value
        rows.append({
            "lam": lam,
            "oscillation": osc,
            "osc_over_lam2": osc / lam ** 2 if lam > 0 else float("nan"),
            "small": [float(x) for x in small],
            "large": [float(x) for x in large],
            "tensor": [float(x) for x in abar.matrix.reshape(-1)],
            "residual": float(max(abar.residuals)),
            "iterations": int(max(abar.iterations)),
        })
    pos = [r for r in rows if r["lam"] > 0]
    x = [r["lam"] for r in pos]
    small_slopes = [loglog_slope(x, [r["small"][i] for r in pos]) for i in range(len(pos[0]["small"]))]
    large_slopes = [loglog_slope(x, [r["large"][i] for r in pos]) for i in range(len(pos[0]["large"]))]
    ratio = np.array([r["osc_over_lam2"] for r in pos])
    spread = float((ratio.max() - ratio.min()) / ratio.mean())
    res = StudyResult("small_oscillation", "lam", rows)
    res.fits = {"small_slopes": small_slopes, "large_slopes": large_slopes,
                "osc_ratio_spread": spread,
                "leading_quotients": [float(q) for q in leading_quotients(w0, grid.dim)]}
    res.flags = {
        "small_slope": all(abs(s - 2.0) <= slope_tol for s in small_slopes),
        "large_slope": all(abs(s) <= slope_tol for s in large_slopes),
        "osc_scaling": spread < osc_rtol,
    }
    zero = [r for r in rows if r["lam"] == 0]
    if zero:
        res.flags["small_vanish_at_zero"] = all(v == 0 for v in zero[0]["small"])
    return res


# ---------------------------------------------------------------------------
# random media


def _box_starts(level_cells, total_cells, ppc, dim):
    k = total_cells // level_cells
    step = level_cells * ppc
    return [tuple(step * i for i in idx) for idx in np.ndindex(*(k,) * dim)]


def _subadd_sample(index, seed, samples, sizes, ppc, amplitude, smoothing_radius, eta, zeta, c,
                   tol, osc_threshold, max_attempts):
    """Energies of all sub-boxes of one realization; resamples degenerate media."""
    Nmax = max(sizes)
    grid = Grid((Nmax * ppc,) * 2, (float(Nmax),) * 2, "dirichlet", "fd")
    for attempt in range(max_attempts):
        stream = index + attempt * samples
        gamma = random_stationary_field(grid, seed, Nmax, smoothing_radius, amplitude, stream)
        coeffs = dirac_preset(grid, gamma, eta=eta, zeta=zeta)
        osc = oscillation(coeffs).value
        if osc < osc_threshold:
            continue
        energies, residual = {}, 0.0
        try:
            for N in sizes:
                vals = []
                for start in _box_starts(N, Nmax, ppc, 2):
                    sub = coeffs if N == Nmax else coeffs.restrict(start, (N * ppc,) * 2)
                    _, _, rep = solve_cell_problem(FormContext(sub), c, tol)
                    vals.append(rep.energy)
                    residual = max(residual, rep.residual)
                energies[N] = np.array(vals)
        except DegenerateForm:
            continue
        return {"sample": index, "stream": stream, "attempts": attempt + 1, "oscillation": osc,
                "energies": energies, "residual": residual, "degenerate": False}
    return {"sample": index, "stream": None, "attempts": max_attempts, "oscillation": 0.0,
            "energies": {}, "residual": 0.0, "degenerate": True}


def _children(N, Nmax, dim=2):
    """Indices of the level-``N`` boxes inside each level-``2N`` box."""
    k_fine = Nmax // N
    k_coarse = k_fine // 2
    out = []
    for idx in np.ndindex(*(k_coarse,) * dim):
        kids = []
        for off in np.ndindex(*(2,) * dim):
            fine = [2 * i + o for i, o in zip(idx, off)]
            kids.append(int(np.ravel_multi_index(fine, (k_fine,) * dim)))
        out.append(kids)
    return out


def subadditivity_mc(seed: int = 0, sizes=(1, 2, 4, 8), samples: int = 16, points_per_cell=8,
                     amplitude=1.0, smoothing_radius=0.5, eta=0.1, zeta=0.0, c=None,
                     tol=DEFAULT_TOL, osc_threshold=1e-8, max_attempts=5, rel_tol=1e-8,
                     threads=1) -> StudyResult:
    """Monte-Carlo study of Dirichlet energies on nested boxes of a random medium.

    Each sample draws a random Dirac medium (``gamma`` from
    :func:`random_stationary_field`, ``n = gamma``, ``s = 1``) on the box of
    ``max(sizes)`` cells per side and solves the Dirichlet problem with the
    same mean current ``c`` on every dyadic sub-box. Checks:

    * each level-``2N`` energy is at most the sum over its ``2^D`` children
      plus ``rel_tol`` times that sum;
    * the per-volume energy averaged over all boxes of a level does not
      increase with the box size;
    * the sample variance of the per-volume energy of the corner box is
      smaller at the largest size than at size 2 (or the smallest size).

    Samples whose oscillation falls below ``osc_threshold`` are redrawn from
    a fresh stream up to ``max_attempts`` times; the counts are reported.
    """
    sizes = sorted(int(N) for N in sizes)
    Nmax = sizes[-1]
    for N in sizes:
        if Nmax % N:
            raise ValueError("sizes must divide the largest size")
    if points_per_cell * min(sizes) < 2 * FROZEN_LAYERS:
        raise ResolutionInsufficient("smallest box has no free potential values")
    D, m = 2, 2
    c = np.full((D, m), 1 / np.sqrt(D * m)) if c is None else np.asarray(c, dtype=float)
    tasks = [lambda i=i: _subadd_sample(i, seed, samples, sizes, points_per_cell, amplitude,
                                        smoothing_radius, eta, zeta, c, tol, osc_threshold,
                                        max_attempts)
             for i in range(samples)]
    results = _run(tasks, threads)

    rows, worst = [], -np.inf
    good = [r for r in results if not r["degenerate"]]
    for r in results:
        row = {"sample": r["sample"], "stream": r["stream"], "attempts": r["attempts"],
               "degenerate": r["degenerate"], "oscillation": r["oscillation"],
               "residual": r["residual"]}
        for N in sizes:
            e = r["energies"].get(N)
            row[f"nu_{N}"] = float(e[0]) / N ** D if e is not None else float("nan")
            row[f"mean_nu_{N}"] = float(e.mean()) / N ** D if e is not None else float("nan")
        for N in sizes:
            if 2 * N in sizes and not r["degenerate"]:
                fine, coarse = r["energies"][N], r["energies"][2 * N]
                margins = []
                for parent, kids in enumerate(_children(N, Nmax)):
                    total = fine[kids].sum()
                    margins.append((coarse[parent] - total - rel_tol * total) / total)
                row[f"partition_{N}"] = float(max(margins))
                worst = max(worst, float(max(margins)))
        rows.append(row)

    res = StudyResult("subadditivity", "sample", rows, seeds=[int(seed)])
    stats = {}
    for N in sizes:
        vals = np.array([r[f"nu_{N}"] for r in rows if not r["degenerate"]])
        means = np.array([r[f"mean_nu_{N}"] for r in rows if not r["degenerate"]])
        stats[N] = {
            "mean": float(means.mean()) if means.size else float("nan"),
            "corner_mean": float(vals.mean()) if vals.size else float("nan"),
            "variance": float(vals.var(ddof=1)) if vals.size > 1 else float("nan"),
        }
    res.fits = {"levels": {str(N): s for N, s in stats.items()},
                "worst_partition_margin": worst if np.isfinite(worst) else None}
    n_deg = sum(r["degenerate"] for r in results)
    res.extra = {"samples": samples, "degenerate_samples": n_deg,
                 "resamples": int(sum(r["attempts"] - 1 for r in good))}
    if good:
        ref = 2 if 2 in sizes else sizes[0]
        means = [stats[N]["mean"] for N in sizes]
        res.flags = {
            "partition": worst <= 0,
            "mean_nonincreasing": bool(np.all(np.diff(means) <= rel_tol * abs(means[0]))),
            "variance_decreasing": bool(stats[Nmax]["variance"] < stats[ref]["variance"]),
        }
    else:
        res.flags = {"nondegenerate_samples": False}
    return res
