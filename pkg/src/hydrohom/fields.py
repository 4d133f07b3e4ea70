"""Coefficient fields, reciprocal (dual) bases, presets and random media.

Pointwise matrices are stored with the matrix indices first and the spatial
axes last: ``a`` is ``(m-1, m, *nodes)``, ``b`` and ``u`` are ``(m, *nodes)``,
``eta`` is ``(D, D, *nodes)`` and gradients are ``(D, m, *nodes)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateThermodynamics, DimensionMismatch, SingularBasis
from .grid import Grid, deriv, mean

DEFAULT_COND_CAP = 1e12


def _nodes_last_inv_T(M):
    """Batched inverse-transpose of ``(m, m, *pts)`` matrices."""
    m = M.shape[0]
    Mp = np.moveaxis(M.reshape(m, m, -1), -1, 0)
    N = np.linalg.inv(Mp).transpose(0, 2, 1)
    return np.moveaxis(N, 0, -1).reshape(M.shape)


def stack_ab(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[1:] != b.shape or a.shape[0] != b.shape[0] - 1:
        raise DimensionMismatch(f"a {a.shape} and b {b.shape} are not (m-1)xm and 1xm")
    return np.concatenate([a, b[None]], axis=0)


def condition_numbers(a, b) -> np.ndarray:
    """Pointwise 2-norm condition number of the stacked ``(a; b)`` matrix."""
    M = stack_ab(a, b)
    m = M.shape[0]
    Mp = np.moveaxis(M.reshape(m, m, -1), -1, 0)
    s = np.linalg.svd(Mp, compute_uv=False)
    with np.errstate(divide="ignore"):
        cond = np.where(s[:, -1] > 0, s[:, 0] / np.where(s[:, -1] > 0, s[:, -1], 1), np.inf)
    return cond.reshape(M.shape[2:])


def build_dual_basis(a, b, cond_cap: float = DEFAULT_COND_CAP):
    """Reciprocal rows ``(u, w)`` of the stacked matrix ``(a; b)``.

    Parameters
    ----------
    a : ndarray, shape (m-1, m, ...)
    b : ndarray, shape (m, ...)
    cond_cap : float
        Largest admissible condition number of ``(a; b)``.

    Returns
    -------
    u : ndarray, shape (m, ...)
    w : ndarray, shape (m-1, m, ...)
        With ``w a^T = I``, ``w b^T = 0``, ``u a^T = 0`` and ``u b^T = 1``
        at every point.

    Raises
    ------
    SingularBasis
        At the first point where the condition number exceeds ``cond_cap``.
    """
    M = stack_ab(a, b)
    cond = condition_numbers(a, b)
    bad = ~(cond <= cond_cap)
    if np.any(bad):
        idx = np.unravel_index(np.argmax(np.where(bad, cond, -1)), cond.shape)
        raise SingularBasis(tuple(int(i) for i in idx), float(cond[idx]))
    N = _nodes_last_inv_T(M)
    return N[-1], N[:-1]


def dual_residual(a, b, u, w) -> float:
    """Largest pointwise violation of the dual-basis identities.

    Covers ``w a^T = I``, ``w b^T = 0``, ``u a^T = 0``, ``u b^T = 1`` and the
    completeness relation ``a^T w + b^T u = I``, relative to the scale of
    ``(a; b)`` times ``(w; u)``.
    """
    M = stack_ab(a, b)
    N = np.concatenate([w, u[None]], axis=0)
    m = M.shape[0]
    eye = np.eye(m).reshape((m, m) + (1,) * (M.ndim - 2))
    r1 = np.einsum("ik...,jk...->ij...", N, M) - eye
    r2 = np.einsum("ki...,kj...->ij...", M, N) - eye
    scale = np.max(np.abs(M)) * np.max(np.abs(N))
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))) / max(scale, 1.0))


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Pointwise PDE coefficients on a grid, with dual basis and gradients.

    Build instances with :func:`make_coefficients` or one of the presets.
    ``grad_u`` is the gradient of the velocity covector ``u``; it is used for
    the constant part of a current so that restrictions to sub-boxes keep the
    parent's values exactly.
    """

    grid: Grid
    a: np.ndarray
    b: np.ndarray
    u: np.ndarray
    w: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    grad_b: np.ndarray
    grad_u: np.ndarray
    condition: float = 1.0
    label: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def eta0(self) -> float:
        """Smallest eigenvalue of ``eta`` over the grid."""
        D = self.dim
        E = np.moveaxis(self.eta.reshape(D, D, -1), -1, 0)
        return float(np.min(np.linalg.eigvalsh(E)))

    def dual_residual(self) -> float:
        return dual_residual(self.a, self.b, self.u, self.w)

    def _map(self, fn, grid, **extra):
        return CoefficientSet(
            grid=grid,
            a=fn(self.a), b=fn(self.b), u=fn(self.u), w=fn(self.w),
            eta=fn(self.eta), zeta=fn(self.zeta),
            grad_b=fn(self.grad_b), grad_u=fn(self.grad_u),
            condition=self.condition, label=self.label, params=dict(self.params, **extra),
        )

    def restrict(self, starts, shape) -> "CoefficientSet":
        """Coefficients on the sub-box of ``shape`` intervals at node ``starts``.

        The parent must be a box grid; the result is a Dirichlet box whose
        arrays (including gradients) are slices of the parent's.
        """
        g = self.grid
        if g.periodic:
            raise ValueError("restrict expects a box grid; use to_box first")
        shape = tuple(int(s) for s in shape)
        starts = tuple(int(s) for s in starts)
        for s0, n, N in zip(starts, shape, g.shape):
            if s0 < 0 or s0 + n > N:
                raise DimensionMismatch("sub-box exceeds parent grid")
        lengths = tuple(n * dx for n, dx in zip(shape, g.spacing))
        sub = Grid(shape, lengths, "dirichlet", "fd", g.frozen)
        sl = tuple(slice(s0, s0 + n + 1) for s0, n in zip(starts, shape))

        def cut(arr):
            return np.ascontiguousarray(arr[(Ellipsis,) + sl])

        return self._map(cut, sub)

    def to_box(self, kind: str = "dirichlet") -> "CoefficientSet":
        """Box copy of periodic coefficients; the end node repeats node 0."""
        g = self.grid
        if not g.periodic:
            raise ValueError("to_box expects periodic coefficients")
        box = Grid(g.shape, g.lengths, kind, "fd")
        idx = [np.arange(n + 1) % n for n in g.shape]

        def wrap(arr):
            out = arr
            for axis in range(g.dim):
                out = np.take(out, idx[axis], axis=arr.ndim - g.dim + axis)
            return np.ascontiguousarray(out)

        return self._map(wrap, box)

    def scaled_copy(self, grid: Grid) -> "CoefficientSet":
        """Same node values re-labelled on another grid of identical node shape."""
        if grid.node_shape != self.grid.node_shape:
            raise DimensionMismatch("node shapes differ")
        return self._map(lambda x: x, grid)


def _field(grid, value, name):
    """Sample a scalar/callable/array onto the grid nodes."""
    try:
        arr = grid.sample(value)
    except ValueError as exc:
        raise DimensionMismatch(f"{name} does not fit the grid: {exc}") from exc
    if arr.shape != grid.node_shape:
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {grid.node_shape}")
    return arr


def _eta_field(grid, eta):
    D = grid.dim
    arr = np.asarray(eta(*grid.coords) if callable(eta) else eta, dtype=float)
    if arr.ndim == 0 or arr.shape == grid.node_shape:
        scal = np.broadcast_to(arr, grid.node_shape)
        return np.eye(D).reshape((D, D) + (1,) * D) * scal
    if arr.shape == (D, D):
        return np.broadcast_to(arr.reshape((D, D) + (1,) * D), (D, D) + grid.node_shape).copy()
    if arr.shape == (D, D) + grid.node_shape:
        return arr.copy()
    raise DimensionMismatch(f"eta of shape {arr.shape} not understood")


def field_gradient(arr, grid: Grid) -> np.ndarray:
    """``(D, *arr.shape)`` gradient using the grid's own derivative."""
    return np.stack([deriv(arr, i, grid) for i in range(grid.dim)])


def make_coefficients(grid: Grid, a, b, eta=0.1, zeta=0.0, *, u=None, w=None,
                      grad_b=None, grad_u=None, cond_cap=DEFAULT_COND_CAP,
                      label="custom", params=None) -> CoefficientSet:
    """Validate raw coefficient arrays and complete them to a CoefficientSet.

    Parameters
    ----------
    grid : Grid
    a : array_like, shape (m-1, m, *nodes) or (m-1, m)
    b : array_like, shape (m, *nodes) or (m,)
    eta : float, array or callable
        Scalar viscosity field, or a ``(D, D)`` / ``(D, D, *nodes)`` SPD field.
    zeta : float, array or callable
        Nonnegative bulk viscosity.
    u, w : ndarray, optional
        Precomputed dual basis; computed from ``(a, b)`` when omitted.
    grad_b, grad_u : ndarray, optional
        Precomputed gradients; by default differentiated on ``grid``.
    """
    nodes = grid.node_shape
    b = np.asarray(b, dtype=float)
    m = b.shape[0]
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        a = a.reshape((m - 1, m) + (1,) * grid.dim)
    a = np.broadcast_to(a, (m - 1, m) + nodes).copy()
    b = np.broadcast_to(b.reshape(b.shape + (1,) * (1 + grid.dim - b.ndim)), (m,) + nodes).copy()

    cond = condition_numbers(a, b)
    if u is None or w is None:
        u, w = build_dual_basis(a, b, cond_cap)
    else:
        bad = ~(cond <= cond_cap)
        if np.any(bad):
            idx = np.unravel_index(np.argmax(np.where(bad, cond, -1)), cond.shape)
            raise SingularBasis(tuple(int(i) for i in idx), float(cond[idx]))
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)

    eta_arr = _eta_field(grid, eta)
    D = grid.dim
    sym_err = np.max(np.abs(eta_arr - eta_arr.swapaxes(0, 1)))
    if sym_err > 1e-12 * max(1.0, np.max(np.abs(eta_arr))):
        raise ValueError("eta must be symmetric")
    eigs = np.linalg.eigvalsh(np.moveaxis(eta_arr.reshape(D, D, -1), -1, 0))
    if np.min(eigs) <= 0:
        raise ValueError(f"eta must be positive definite, min eigenvalue {np.min(eigs):.3g}")
    zeta_arr = _field(grid, zeta, "zeta")
    if np.min(zeta_arr) < 0:
        raise ValueError("zeta must be nonnegative")

    if grad_b is None:
        grad_b = field_gradient(b, grid)
    if grad_u is None:
        grad_u = field_gradient(u, grid)

    return CoefficientSet(
        grid=grid, a=a, b=b, u=u, w=w, eta=eta_arr, zeta=zeta_arr,
        grad_b=np.asarray(grad_b, dtype=float), grad_u=np.asarray(grad_u, dtype=float),
        condition=float(np.max(cond)), label=label, params=dict(params or {}),
    )


# ---------------------------------------------------------------------------
# presets


def default_gamma(grid: Grid):
    """``sin(2 pi x1 / L1)`` plus ``cos(2 pi x2 / L2)`` in two dimensions."""
    def gamma(*x):
        out = np.sin(2 * np.pi * x[0] / grid.lengths[0])
        if grid.dim == 2:
            out = out + np.cos(2 * np.pi * x[1] / grid.lengths[1])
        return out
    return gamma


def dirac_preset(grid: Grid, gamma=None, sigma_q=1.0, n_of_gamma=None, s_of_gamma=None,
                 eta=0.1, zeta=0.0, c0=1e-6) -> CoefficientSet:
    """Linearized Dirac-fluid coefficients ``a = sqrt(sigma_q) (-1, gamma)``,
    ``b = (n, s)``.

    Parameters
    ----------
    gamma : float, array or callable, optional
        Disorder potential; defaults to :func:`default_gamma`.
    n_of_gamma, s_of_gamma : callable, optional
        Thermodynamic maps; default ``n = gamma`` and ``s = 1``.
    c0 : float
        Required lower bound of ``gamma n + s``.

    Raises
    ------
    DegenerateThermodynamics
        If ``gamma n + s < c0`` somewhere.
    """
    if sigma_q <= 0:
        raise ValueError("sigma_q must be positive")
    g = _field(grid, default_gamma(grid) if gamma is None else gamma, "gamma")
    n = n_of_gamma(g) if n_of_gamma is not None else g.copy()
    s = s_of_gamma(g) if s_of_gamma is not None else np.ones_like(g)
    n = np.broadcast_to(np.asarray(n, dtype=float), g.shape)
    s = np.broadcast_to(np.asarray(s, dtype=float), g.shape)
    q = g * n + s
    if np.min(q) < c0:
        raise DegenerateThermodynamics(float(np.min(q)), c0)
    rs = np.sqrt(sigma_q)
    a = rs * np.stack([-np.ones_like(g), g])[None]
    b = np.stack([n, s])
    u = np.stack([g, np.ones_like(g)]) / q
    w = (np.stack([-s, n]) / (rs * q))[None]
    return make_coefficients(grid, a, b, eta, zeta, u=u, w=w, label="dirac",
                             params={"sigma_q": sigma_q, "eta": eta, "zeta": zeta})


def galilean_preset(grid: Grid, kappa_q=1.0, n=1.0, s=1.0, eta=0.1, zeta=0.0,
                    cond_cap=DEFAULT_COND_CAP) -> CoefficientSet:
    """Galilean-invariant fluid: ``a = sqrt(kappa_q) (0, 1)``, ``b = (n, s)``.

    The stacked matrix has determinant ``-n sqrt(kappa_q)``, so ``n`` must not
    vanish anywhere.
    """
    if kappa_q <= 0:
        raise ValueError("kappa_q must be positive")
    nf = _field(grid, n, "n")
    sf = _field(grid, s, "s")
    a = np.sqrt(kappa_q) * np.stack([np.zeros_like(nf), np.ones_like(nf)])[None]
    b = np.stack([nf, sf])
    return make_coefficients(grid, a, b, eta, zeta, cond_cap=cond_cap, label="galilean",
                             params={"kappa_q": kappa_q, "eta": eta, "zeta": zeta})


def scalar_preset(grid: Grid, n=1.0, eta=0.1, zeta=0.0, n0=1e-6) -> CoefficientSet:
    """Single conserved density (``m = 1``): ``a`` empty, ``b = n``, ``u = 1/n``."""
    nf = _field(grid, n, "n")
    if np.min(np.abs(nf)) < n0:
        raise DegenerateThermodynamics(float(np.min(np.abs(nf))), n0)
    a = np.zeros((0, 1) + grid.node_shape)
    b = nf[None]
    u = (1.0 / nf)[None]
    w = np.zeros((0, 1) + grid.node_shape)
    return make_coefficients(grid, a, b, eta, zeta, u=u, w=w, label="scalar",
                             params={"eta": eta, "zeta": zeta})


# ---------------------------------------------------------------------------
# oscillation


@dataclass(frozen=True)
class OscillationReport:
    """Oscillation of ``b``: min over directions of max over components."""

    value: float
    theta: np.ndarray
    per_component: np.ndarray

    @property
    def degenerate(self) -> bool:
        return not self.value > 0


def theta_grid(dim: int, samples: int = 256) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    t = np.pi * np.arange(samples) / samples
    return np.stack([np.cos(t), np.sin(t)], axis=1)


def oscillation(coeffs: CoefficientSet, theta_samples: int = 256,
                rtol: float = 1e-12) -> OscillationReport:
    """Directional mean-square variation of ``b``.

    For each unit direction ``theta`` on a uniform grid, take the largest
    over components ``j`` of the domain average of ``(theta . grad b_j)^2``;
    the oscillation is the smallest of these. Values below ``rtol`` times
    the largest directional average are reported as exactly zero.
    """
    g = coeffs.grid
    if g.dim == 2 and theta_samples < 64:
        raise ValueError("need at least 64 direction samples in two dimensions")
    G = coeffs.grad_b
    # M_j = <grad b_j grad b_j^T>, shape (m, D, D)
    M = mean(np.einsum("ij...,kj...->jik...", G, G), g)
    th = theta_grid(g.dim, theta_samples)
    q = np.einsum("ti,jik,tk->tj", th, M, th)
    qmax = q.max(axis=1)
    k = int(np.argmin(qmax))
    value = float(qmax[k])
    scale = float(np.max(np.abs(M))) if M.size else 0.0
    if value <= rtol * scale or scale == 0.0:
        value = 0.0
    return OscillationReport(value, th[k].copy(), q[k].copy())


# ---------------------------------------------------------------------------
# random media


def _bump(t):
    return np.where(np.abs(t) < 1, (1 - np.minimum(t * t, 1)) ** 3, 0.0)


def cell_values(seed: int, index, stream: int = 0) -> float:
    """Uniform(-1, 1) value of one cell, keyed by ``(seed, stream, index)``."""
    key = [int(seed), int(stream)] + [int(i) for i in index]
    return float(np.random.default_rng(key).uniform(-1.0, 1.0))


def random_stationary_field(grid: Grid, seed: int, cells_per_axis=None,
                            smoothing_radius: float = 0.5, amplitude: float = 1.0,
                            stream: int = 0, offset=None) -> np.ndarray:
    """Smoothed checkerboard with i.i.d. cell values.

    Unit cells ``[i, i+1)`` carry independent Uniform(-1, 1) values which are
    blended by a compactly supported bump of half-width ``1/2 + r`` about the
    cell centre, normalized to a partition of unity. The grid coordinates are
    in cell units, so ``grid.lengths`` should equal ``cells_per_axis``.

    Parameters
    ----------
    grid : Grid
    seed : int
    cells_per_axis : int, optional
        Defaults to the grid lengths.
    smoothing_radius : float in (0, 1]
    amplitude : float
    stream : int
        Independent stream selector for several fields from one seed.
    offset : tuple of int, optional
        Global index of the grid's first cell, so that sub-domains of one
        realization can be generated independently.
    """
    if not 0 < smoothing_radius <= 1:
        raise ValueError("smoothing_radius must lie in (0, 1]")
    if cells_per_axis is None:
        cells_per_axis = int(round(grid.lengths[0]))
    if cells_per_axis < 2:
        raise ValueError("need at least 2 cells per axis")
    if amplitude == 0:
        return np.zeros(grid.node_shape)
    D = grid.dim
    offset = (0,) * D if offset is None else tuple(int(o) for o in offset)
    hw = 0.5 + smoothing_radius
    lo, hi = -1, cells_per_axis
    cells = np.arange(lo, hi + 1)
    x = grid.coords
    # per-axis bump weights, shape (cells, *nodes)
    weights = [_bump((x[d][None] - (cells.reshape((-1,) + (1,) * D) + 0.5)) / hw) for d in range(D)]
    num = np.zeros(grid.node_shape)
    den = np.zeros(grid.node_shape)
    for idx in np.ndindex(*(len(cells),) * D):
        wgt = np.prod([weights[d][idx[d]] for d in range(D)], axis=0)
        gidx = [cells[idx[d]] + offset[d] - lo for d in range(D)]
        num += cell_values(seed, gidx, stream) * wgt
        den += wgt
    return amplitude * num / den


# ---------------------------------------------------------------------------
# small-oscillation family


def _default_beta(grid):
    def beta(*x):
        out = np.sin(2 * np.pi * x[0] / grid.lengths[0])
        if grid.dim == 2:
            out = out + np.sin(2 * np.pi * x[1] / grid.lengths[1])
        return out
    return beta


def small_oscillation_family(grid: Grid, lam: float, a0=None, b0=None, a1=None, b1=None,
                             eta=0.1, zeta=0.0, cond_cap=DEFAULT_COND_CAP) -> CoefficientSet:
    """Coefficients ``a = a0 + lam a1``, ``b = b0 + lam b1`` with constant
    ``(a0, b0)`` and zero-mean ``(a1, b1)``.

    The default is a weakly disordered Dirac fluid: ``a0 = (-1, 0)``,
    ``b0 = (0, 1)``, ``a1 = (0, beta)``, ``b1 = (beta, 0)`` with
    ``beta = sin(2 pi x1) + sin(2 pi x2)``. Since ``beta`` changes sign under
    a half-period shift, the effective tensor is even in ``lam``.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    beta = grid.sample(_default_beta(grid))
    if a0 is None:
        a0 = np.array([[-1.0, 0.0]])
    if b0 is None:
        b0 = np.array([0.0, 1.0])
    a0 = np.atleast_2d(np.asarray(a0, dtype=float))
    b0 = np.asarray(b0, dtype=float).reshape(-1)
    m = b0.size
    build_dual_basis(a0.reshape(m - 1, m), b0, cond_cap)  # full-rank check
    nodes = grid.node_shape
    if a1 is None:
        a1 = np.zeros((m - 1, m) + nodes)
        if m == 2:
            a1[0, 1] = beta
    if b1 is None:
        b1 = np.zeros((m,) + nodes)
        b1[0] = beta
    a1 = np.asarray(a1(*grid.coords) if callable(a1) else a1, dtype=float)
    b1 = np.asarray(b1(*grid.coords) if callable(b1) else b1, dtype=float)
    a = a0.reshape((m - 1, m) + (1,) * grid.dim) + lam * a1
    b = b0.reshape((m,) + (1,) * grid.dim) + lam * b1
    grads = {}
    if lam == 0:
        # the unperturbed medium is constant; keep its gradients exactly zero
        grads = {"grad_b": np.zeros((grid.dim, m) + nodes), "grad_u": np.zeros((grid.dim, m) + nodes)}
    return make_coefficients(grid, a, b, eta, zeta, cond_cap=cond_cap, label="small_oscillation",
                             params={"lam": lam, "eta": eta, "zeta": zeta}, **grads)


def dual_basis_first_order(a0, b0, a1, b1):
    """First-order term of ``(w; u)`` for ``(a0 + lam a1; b0 + lam b1)``.

    Returns ``(u1, w1)`` with ``(w; u)(lam) = (w0; u0) + lam (w1; u1) + O(lam^2)``.
    Fields carry trailing spatial axes like :func:`build_dual_basis`.
    """
    M0 = stack_ab(a0, b0)
    M1 = stack_ab(a1, b1)
    M0 = np.broadcast_to(M0.reshape(M0.shape + (1,) * (M1.ndim - M0.ndim)), M1.shape)
    N0 = _nodes_last_inv_T(np.ascontiguousarray(M0))
    N1 = -np.einsum("ij...,kj...,kl...->il...", N0, M1, N0)
    return N1[-1], N1[:-1]
