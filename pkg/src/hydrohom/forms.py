"""Matrix-free evaluation of the dissipation form and its normal operator.

For a current ``J`` with velocity ``v = J u^T`` the form reads::

    a(J, K) = <J w^T, K w^T> + s [<eta grad v, grad v_K> + <zeta div v, div v_K>]

with ``s = 1`` for the cell form and ``s = eps**2`` for the rescaled form on
an ``eps``-periodic medium. Brackets are quadratures over the domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateForm, DimensionMismatch, NonIntegerScale
from .fields import CoefficientSet, make_coefficients, oscillation
from .grid import (CurrentField, Grid, PotentialField, deriv, deriv_T, fourier_interpolate,
                   fourier_interpolate_T, perp_current, perp_current_T)


def integer_scale(epsilon: float, tol: float = 1e-9) -> int:
    """``1/epsilon`` as an integer, or :class:`NonIntegerScale`."""
    if epsilon is None or epsilon <= 0:
        raise NonIntegerScale(f"epsilon must be positive, got {epsilon}")
    N = 1.0 / epsilon
    if abs(N - round(N)) > tol * N:
        raise NonIntegerScale(f"1/epsilon = {N} is not an integer")
    return int(round(N))


@dataclass
class _Quadrature:
    """Coefficients at the level where products are formed."""

    grid: Grid
    w: np.ndarray
    u: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    grad_u: np.ndarray
    weights: np.ndarray


class FormContext:
    """Everything needed to evaluate the form on one medium.

    Parameters
    ----------
    coeffs : CoefficientSet
    epsilon : float, optional
        Scale of the oscillations when ``coeffs`` holds a medium already
        sampled at ``x / epsilon``; the velocity term is then weighted by
        ``epsilon**2``. ``None`` gives the unscaled form.
    dealias : bool
        Evaluate products on a grid refined by the 3/2 rule (periodic
        spectral grids only).
    theta_samples : int
        Direction samples for the oscillation.
    """

    def __init__(self, coeffs: CoefficientSet, epsilon: float = None, dealias: bool = False,
                 theta_samples: int = 256):
        self.coeffs = coeffs
        self.grid = coeffs.grid
        self.epsilon = epsilon
        if epsilon is not None and self.grid.periodic:
            integer_scale(epsilon)
        self.s_u = 1.0 if epsilon is None else float(epsilon) ** 2
        self.dealias = bool(dealias)
        self.oscillation = oscillation(coeffs, theta_samples)
        self.eta0 = coeffs.eta0
        self._fine = None
        if self.dealias:
            if self.grid.scheme != "spectral":
                raise ValueError("dealiasing requires a periodic spectral grid")
            shape = tuple(3 * n // 2 + (3 * n // 2) % 2 for n in self.grid.shape)
            self._fine = Grid(shape, self.grid.lengths, "periodic", "spectral")
            interp = lambda arr: fourier_interpolate(arr, self.grid, self._fine)
            q = _Quadrature(self._fine, interp(coeffs.w), interp(coeffs.u), interp(coeffs.eta),
                            interp(coeffs.zeta), interp(coeffs.grad_u), self._fine.weights)
        else:
            q = _Quadrature(self.grid, coeffs.w, coeffs.u, coeffs.eta, coeffs.zeta,
                            coeffs.grad_u, self.grid.weights)
        self._q = q

    @property
    def degenerate(self) -> bool:
        return self.oscillation.degenerate

    @property
    def m(self) -> int:
        return self.coeffs.m

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def free_mask(self) -> np.ndarray:
        return self.grid.free_mask

    @property
    def n_dofs(self) -> int:
        if self.dim == 1:
            return 0
        return self.m * int(self.free_mask.sum())

    def require_nondegenerate(self, allow_seminorm: bool = False):
        if self.degenerate and not allow_seminorm:
            raise DegenerateForm(
                "oscillation of b vanishes; the form is only a seminorm "
                "(pass allow_seminorm to proceed)", oscillation=self.oscillation.value)

    # -- potentials <-> currents ------------------------------------------

    def potential(self, x) -> PotentialField:
        return PotentialField.from_dofs(self.grid, self.m, x)

    def current(self, x, c) -> CurrentField:
        """Current ``J = div f + c`` from free potential values ``x``."""
        c = np.asarray(c, dtype=float).reshape(self.dim, self.m)
        if self.dim == 1:
            return CurrentField(self.grid, np.broadcast_to(
                c.reshape(c.shape + (1,)), c.shape + self.grid.node_shape).copy(), c)
        vals = np.zeros((self.m,) + self.grid.node_shape)
        vals[:, self.free_mask] = np.asarray(x, dtype=float).reshape(self.m, -1)
        J = perp_current(vals, self.grid) + c.reshape(c.shape + (1, 1))
        return CurrentField(self.grid, J, c)

    def current_T(self, g) -> np.ndarray:
        """Transpose of the potential-to-current map on free values."""
        if self.dim == 1:
            return np.zeros(0)
        return perp_current_T(g, self.grid)[:, self.free_mask].reshape(-1)

    # -- pointwise features ------------------------------------------------

    def _lift(self, J: CurrentField):
        if self._fine is None:
            return J.values
        return fourier_interpolate(J.values, self.grid, self._fine)

    def features(self, J: CurrentField):
        """``(J w^T, grad v, div v)`` at the quadrature nodes."""
        q = self._q
        V = self._lift(J)
        c = J.mean_part
        Jw = np.einsum("lk...,rk...->lr...", V, q.w)
        fl = V - c.reshape(c.shape + (1,) * self.dim)
        vfl = np.einsum("lk...,k...->l...", fl, q.u)
        gv = np.einsum("lk,ik...->il...", c, q.grad_u)
        for i in range(self.dim):
            gv[i] += deriv(vfl, i, q.grid)
        div = np.einsum("ii...->...", gv)
        return Jw, gv, div

    def pair(self, F1, F2) -> float:
        q = self._q
        Jw1, gv1, d1 = F1
        Jw2, gv2, d2 = F2
        dens = np.einsum("lr...,lr...->...", Jw1, Jw2)
        visc = np.einsum("ij...,jl...,il...->...", q.eta, gv1, gv2) + q.zeta * d1 * d2
        return float(np.sum(q.weights * (dens + self.s_u * visc)))

    def energy_gradient(self, J: CurrentField, with_mean: bool = False):
        """Euclidean gradient of ``a(J, J) / 2`` in the nodal values of ``J``.

        Returns ``(g, energy)`` where ``g`` has the shape of ``J.values`` and
        ``energy = a(J, J)``. With ``with_mean`` the gradient with respect to
        the constant part ``c`` is appended.
        """
        q = self._q
        Jw, gv, div = F = self.features(J)
        energy = self.pair(F, F)
        wq = q.weights
        T = np.einsum("ij...,jl...->il...", q.eta, gv)
        for i in range(self.dim):
            T[i, i] += q.zeta * div
        T *= wq
        h = sum(deriv_T(T[i], i, q.grid) for i in range(self.dim))
        g = wq * np.einsum("lr...,rk...->lk...", Jw, q.w) + self.s_u * np.einsum("l...,k...->lk...", h, q.u)
        if self._fine is not None:
            g = fourier_interpolate_T(g, self.grid, self._fine)
        if not with_mean:
            return g, energy
        axes = tuple(range(2, 2 + self.dim))
        gc = np.sum(wq * np.einsum("lr...,rk...->lk...", Jw, q.w), axis=axes) \
            + self.s_u * np.sum(np.einsum("il...,ik...->lk...", T, q.grad_u), axis=axes)
        return g, energy, gc

    # -- operators on potential dofs ---------------------------------------

    def normal_apply(self, x, c=None) -> np.ndarray:
        c = np.zeros((self.dim, self.m)) if c is None else c
        g, _ = self.energy_gradient(self.current(x, c))
        return self.current_T(g)

    def matvec(self, x) -> np.ndarray:
        return self.normal_apply(x, None)

    def rhs(self, c) -> np.ndarray:
        return -self.normal_apply(np.zeros(self.n_dofs), c)


# ---------------------------------------------------------------------------


def _check_current(ctx, J):
    if not isinstance(J, CurrentField):
        J = CurrentField(ctx.grid, J)
    if J.grid.node_shape != ctx.grid.node_shape or J.values.shape[:2] != (ctx.dim, ctx.m):
        raise DimensionMismatch(f"current {J.values.shape} does not match the form context")
    return J


def apply_form(ctx: FormContext, J, Jt) -> float:
    """Bilinear form ``a(J, Jt)``.

    Parameters
    ----------
    ctx : FormContext
    J, Jt : CurrentField
        Currents on ``ctx.grid``. A bare ``(D, m, *nodes)`` array is treated
        as a current with zero constant part.

    Returns
    -------
    float
    """
    J = _check_current(ctx, J)
    Jt = _check_current(ctx, Jt)
    return ctx.pair(ctx.features(J), ctx.features(Jt))


def apply_form_eps(ctx: FormContext, J, Jt) -> float:
    """Rescaled form on an ``epsilon``-periodic medium.

    ``ctx`` must carry ``epsilon``; its coefficients are those of the unit
    cell evaluated at ``x / epsilon`` (see :func:`tile_coefficients`).
    """
    if ctx.epsilon is None:
        raise ValueError("context has no epsilon; use apply_form")
    return apply_form(ctx, J, Jt)


def normal_apply(ctx: FormContext, f_dofs, c=None) -> np.ndarray:
    """Gradient in the free potential values of ``f -> a(c + div f, c + div f) / 2``.

    Equals ``P^T A P f + P^T A c`` with ``P`` the potential-to-current map.
    """
    f_dofs = np.asarray(f_dofs, dtype=float)
    if f_dofs.shape != (ctx.n_dofs,):
        raise DimensionMismatch(f"expected {ctx.n_dofs} potential values, got {f_dofs.shape}")
    return ctx.normal_apply(f_dofs, c)


def tile_coefficients(cell: CoefficientSet, N: int, kind: str = "periodic") -> CoefficientSet:
    """Unit-cell coefficients evaluated at ``x * N`` on the unit domain.

    The cell arrays are repeated ``N`` times per axis and gradients gain the
    chain-rule factor ``N``. With ``kind`` other than periodic the result is
    a box grid whose end nodes repeat the first ones.
    """
    g = cell.grid
    if not g.periodic:
        raise ValueError("cell coefficients must live on a periodic grid")
    N = int(N)
    if N < 1:
        raise NonIntegerScale(f"number of cells must be a positive integer, got {N}")
    reps = (N,) * g.dim
    fine = Grid(tuple(N * n for n in g.shape), g.lengths, "periodic", g.scheme)

    def tile(arr, scale=1.0):
        lead = arr.ndim - g.dim
        return np.tile(arr, (1,) * lead + reps) * scale

    out = make_coefficients(
        fine, tile(cell.a), tile(cell.b), tile(cell.eta), tile(cell.zeta),
        u=tile(cell.u), w=tile(cell.w), grad_b=tile(cell.grad_b, N), grad_u=tile(cell.grad_u, N),
        label=cell.label, params=dict(cell.params, cells=N))
    if kind != "periodic":
        out = out.to_box(kind)
    return out


# ---------------------------------------------------------------------------
# stability constant


def random_current(ctx: FormContext, rng: np.random.Generator, bandwidth: int = 4) -> CurrentField:
    """Random admissible current with band-limited potential.

    The random coefficients depend only on ``rng`` and ``bandwidth``, not on
    the grid, so the same generator state yields the same continuum current
    on every resolution.
    """
    D, m = ctx.dim, ctx.m
    c = rng.standard_normal((D, m))
    if D == 1:
        return ctx.current(np.zeros(0), c)
    grid = ctx.grid
    x = grid.coords
    L = grid.lengths
    K = bandwidth
    f = np.zeros((m,) + grid.node_shape)
    for k in range(m):
        for k1 in range(K + 1):
            for k2 in range(K + 1):
                if k1 == 0 and k2 == 0:
                    continue
                amp = rng.standard_normal(4) / (2 * np.pi * np.hypot(k1, k2))
                if grid.periodic:
                    p1 = 2 * np.pi * k1 * x[0] / L[0]
                    p2 = 2 * np.pi * k2 * x[1] / L[1]
                    f[k] += (amp[0] * np.cos(p1) * np.cos(p2) + amp[1] * np.cos(p1) * np.sin(p2)
                             + amp[2] * np.sin(p1) * np.cos(p2) + amp[3] * np.sin(p1) * np.sin(p2))
                else:
                    f[k] += amp[0] * np.sin(np.pi * k1 * x[0] / L[0]) * np.sin(np.pi * k2 * x[1] / L[1])
    return ctx.current(f[:, ctx.free_mask].reshape(-1), c)


def estimate_stability_constant(ctx: FormContext, samples: int = 128, seed: int = 0,
                                bandwidth: int = 4):
    """Largest observed ratio ``O * <|J|^2> / a(J, J)`` over random currents.

    Parameters
    ----------
    ctx : FormContext
    samples : int
        Number of random admissible currents (at least 32).
    seed : int
    bandwidth : int
        Highest potential wavenumber in each direction.

    Returns
    -------
    C_hat : float
    worst : CurrentField
        The current attaining ``C_hat``.
    ratios : ndarray
        All sampled ratios.

    Raises
    ------
    DegenerateForm
        If the oscillation vanishes.
    """
    if samples < 32:
        raise ValueError("need at least 32 samples")
    osc = ctx.oscillation.value
    if not osc > 0:
        raise DegenerateForm("stability constant undefined for vanishing oscillation", oscillation=osc)
    rng = np.random.default_rng(seed)
    ratios = np.empty(samples)
    worst, best = None, -np.inf
    w = ctx.grid.weights
    for s in range(samples):
        J = random_current(ctx, rng, bandwidth)
        l2 = float(np.sum(w * np.sum(J.values ** 2, axis=(0, 1))))
        en = apply_form(ctx, J, J)
        ratios[s] = osc * l2 / en
        if ratios[s] > best:
            best, worst = ratios[s], J
    return float(best), worst, ratios
