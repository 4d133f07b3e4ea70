"""Cell problems, effective tensors and field reconstruction.

All minimizations run preconditioned conjugate gradients on the free values
of the stream-function potentials. Effective tensors are read off from
minimal energies through polarization.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, lsqr

from .exceptions import DegenerateForm, DimensionMismatch, NoConvergence, TooLarge
from .forms import FormContext, apply_form
from .grid import CurrentField, Grid, PotentialField, deriv, deriv_T, mean, perp_current

DEFAULT_TOL = 1e-10
DENSE_LIMIT = 4096
NATURAL_MAXITER_FACTOR = 4


# ---------------------------------------------------------------------------
# conjugate gradients


@dataclass
class SolveReport:
    """Outcome of one minimization."""

    iterations: int
    residual: float
    energy: float = float("nan")
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual,
                "energy": self.energy, "degenerate": self.degenerate}


def default_maxiter(n: int) -> int:
    return max(100, int(50 * np.sqrt(max(n, 1))))


def pcg(matvec, b, x0=None, precond=None, tol=DEFAULT_TOL, maxiter=None, restarts=3):
    """Preconditioned conjugate gradients for symmetric semidefinite systems.

    Convergence is declared on the unpreconditioned relative residual
    ``|b - A x| / |b|``, recomputed from scratch before returning.

    Returns
    -------
    x : ndarray
    iterations : int
    residual : float
    converged : bool
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    maxiter = default_maxiter(n) if maxiter is None else int(maxiter)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0:
        return np.zeros(n), 0, 0.0, True
    M = precond if precond is not None else (lambda r: r)
    it = 0
    r = b - matvec(x)
    for _ in range(restarts + 1):
        z = M(r)
        p = z.copy()
        rz = r @ z
        while it < maxiter and np.linalg.norm(r) > tol * bnorm:
            Ap = matvec(p)
            pAp = p @ Ap
            if pAp <= 0 or rz <= 0:
                break
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            z = M(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
            it += 1
        r = b - matvec(x)
        res = np.linalg.norm(r) / bnorm
        if res <= tol or it >= maxiter:
            break
    res = np.linalg.norm(r) / bnorm
    return x, it, float(res), bool(res <= tol)


# ---------------------------------------------------------------------------
# preconditioners

# weight of the compact-stencil correction in natural-grid symbols; keeps
# near-checkerboard modes, which the one-sided boundary rows stiffen, from
# being modelled as almost free
HF_BLEND = 0.1


def _wavenumbers_periodic(grid: Grid, true_nyquist=False):
    ks = []
    for axis, (n, L) in enumerate(zip(grid.shape, grid.lengths)):
        freq = np.fft.rfftfreq(n, 1.0 / n) if axis == grid.dim - 1 else np.fft.fftfreq(n, 1.0 / n)
        k = 2 * np.pi * freq / L
        if grid.scheme == "spectral":
            if not true_nyquist:
                k = np.where(np.abs(freq) == n // 2, 0.0, k)
        else:
            dx = L / n
            k = np.sin(k * dx) / dx
            k[np.abs(k) < 1e-12 / dx] = 0.0
        ks.append(k)
    return np.stack(np.meshgrid(*ks, indexing="ij"))


def _nyquist_mask(grid: Grid) -> np.ndarray:
    masks = []
    for axis, n in enumerate(grid.shape):
        freq = np.fft.rfftfreq(n, 1.0 / n) if axis == grid.dim - 1 else np.fft.fftfreq(n, 1.0 / n)
        masks.append(np.abs(freq) == n // 2)
    grids = np.meshgrid(*masks, indexing="ij")
    return np.logical_or.reduce(grids)


def _wavenumbers_box(grid: Grid, counts, offset, blend=0.0):
    ks = []
    for n, L, K in zip(grid.shape, grid.lengths, counts):
        dx = L / n
        j = np.arange(K) + offset
        period = (K + 1) * dx if offset == 1 else (K - 1) * dx
        th = np.pi * j / period * dx
        ks.append(np.sqrt(np.sin(th) ** 2 + blend * 4 * np.sin(th / 2) ** 4) / dx)
    return np.stack(np.meshgrid(*ks, indexing="ij"))


def _invert_symbol(S, m):
    Sp = np.moveaxis(S.reshape(m, m, -1), -1, 0)
    inv = np.linalg.pinv(Sp, hermitian=True)
    return np.moveaxis(inv, 0, -1).reshape(S.shape)


class SpectralPreconditioner:
    """Inverse of a constant-coefficient model operator, diagonal in a
    trigonometric basis matched to the grid kind.

    ``symbol(kt)`` maps effective wavenumbers ``(D, *modes)`` to the ``m x m``
    model matrix per mode, ``(m, m, *modes)``; the Euclidean operator is the
    symbol times the cell volume. Periodic grids use real FFTs, Dirichlet
    grids a type-I sine transform of the free block, natural grids a type-I
    cosine transform of all nodes.

    With ``transform`` (pointwise ``m x m`` matrices ``T`` on the free nodes)
    the preconditioner is ``T^T S^{-1} T``: the model acts on potentials
    rotated into the frame of ``T``. On spectral grids the rotation would
    smear the Nyquist modes, on which the derivative vanishes, into their
    neighbours; those modes are split off and handled by ``nyquist_symbol``
    without rotation.
    """

    def __init__(self, grid: Grid, m: int, symbol, free_mask=None, transform=None,
                 nyquist_symbol=None):
        self.grid = grid
        self.m = m
        kind = grid.kind
        self.nyq = None
        if kind == "dirichlet":
            mask = grid.free_mask if free_mask is None else free_mask
            counts = tuple(int(np.any(mask, axis=tuple(a for a in range(grid.dim) if a != ax)).sum())
                           for ax in range(grid.dim))
            self.block = counts
            kt = _wavenumbers_box(grid, counts, 1)
        elif kind == "natural":
            self.block = grid.node_shape
            kt = _wavenumbers_box(grid, grid.node_shape, 0, HF_BLEND)
        else:
            self.block = grid.shape
            split = transform is not None and grid.scheme == "spectral"
            kt = _wavenumbers_periodic(grid, true_nyquist=split)
            if split:
                self.nyq = _nyquist_mask(grid)
                sym = nyquist_symbol if nyquist_symbol is not None else symbol
                Sn = np.asarray(sym(_wavenumbers_periodic(grid)), dtype=float) * grid.cell_volume
                self.inv_nyq = _invert_symbol(Sn, m)
        S = np.asarray(symbol(kt), dtype=float) * grid.cell_volume
        self.inv = _invert_symbol(S, m)
        self.T = None if transform is None else transform.reshape((m, m) + self.block)

    def _periodic(self, X, inv=None, keep=None):
        axes = tuple(range(1, 1 + self.grid.dim))
        F = np.fft.rfftn(X, axes=axes)
        if keep is not None:
            F = np.where(keep, F, 0)
        if inv is not None:
            F = np.einsum("ij...,j...->i...", inv, F)
        return np.fft.irfftn(F, s=self.grid.shape, axes=axes)

    def _rotated(self, X, solve):
        if self.T is None:
            return solve(X)
        X = np.einsum("ij...,j...->i...", self.T, X)
        return np.einsum("ji...,j...->i...", self.T, solve(X))

    def __call__(self, r):
        g = self.grid
        m = self.m
        axes = tuple(range(1, 1 + g.dim))
        X = r.reshape((m,) + self.block)
        if g.kind == "periodic":
            if self.nyq is None:
                Y = self._rotated(X, lambda Z: self._periodic(Z, self.inv))
            else:
                smooth = self._periodic(X, keep=~self.nyq)
                Y = self._rotated(smooth, lambda Z: self._periodic(Z, self.inv))
                Y = self._periodic(Y, keep=~self.nyq)
                Y = Y + self._periodic(X, self.inv_nyq, self.nyq)
        elif g.kind == "dirichlet":
            Y = self._rotated(X, lambda Z: sfft.idstn(np.einsum(
                "ij...,j...->i...", self.inv, sfft.dstn(Z, type=1, axes=axes, norm="ortho")),
                type=1, axes=axes, norm="ortho"))
        else:
            Y = self._rotated(X, lambda Z: sfft.idctn(np.einsum(
                "ij...,j...->i...", self.inv, sfft.dctn(Z, type=1, axes=axes, norm="ortho")),
                type=1, axes=axes, norm="ortho"))
        return Y.reshape(-1)


def _lowest_wavenumber(grid: Grid) -> float:
    return np.pi / max(grid.lengths) if not grid.periodic else 2 * np.pi / max(grid.lengths)


def _form_averages(ctx):
    coeffs = ctx.coeffs
    g = ctx.grid
    eta = float(mean(np.einsum("ii...->...", coeffs.eta), g)) / g.dim
    W = mean(np.einsum("rk...,rj...->kj...", coeffs.w, coeffs.w), g)
    U = mean(np.einsum("k...,j...->kj...", coeffs.u, coeffs.u), g)
    return eta, W, U


def averaged_symbol(ctx):
    """Model symbol from domain averages of ``w^T w``, ``u^T u`` and ``eta``."""
    eta, W, U = _form_averages(ctx)
    s = ctx.s_u

    def symbol(kt):
        k2 = np.sum(kt ** 2, axis=0)
        e = (slice(None), slice(None)) + (None,) * k2.ndim
        return k2 * W[e] + s * eta * k2 ** 2 * U[e]

    return symbol


def rotated_symbol(ctx):
    """Model symbol in the frame rotated by ``(a; b)``.

    Writing ``f = a^T phi_w + b^T phi_u`` pointwise, the dissipative part
    acts to leading order as ``-Laplace`` on ``phi_w`` (stiffened by the
    velocity it induces through ``grad u``) and the viscous part as
    ``eta Laplace^2`` on ``phi_u``; variations of ``b`` add a zeroth-order
    term ``|w (grad b)^T|^2`` to the latter.
    """
    coeffs = ctx.coeffs
    g = ctx.grid
    m = ctx.m
    eta, _, _ = _form_averages(ctx)
    s = ctx.s_u
    wgb = np.einsum("rk...,lk...->rl...", coeffs.w, coeffs.grad_b)
    zeroth = float(mean(np.sum(wgb ** 2, axis=(0, 1)), g))
    agu = np.einsum("rk...,lk...->rl...", coeffs.a, coeffs.grad_u)
    stiff = mean(np.sum(agu ** 2, axis=1), g) if m > 1 else np.zeros(0)
    kmin2 = _lowest_wavenumber(g) ** 2

    def symbol(kt):
        k2 = np.maximum(np.sum(kt ** 2, axis=0), kmin2)
        out = np.zeros((m, m) + k2.shape)
        for r in range(m - 1):
            out[r, r] = k2 * (1 + s * eta * stiff[r])
        out[m - 1, m - 1] = s * eta * k2 ** 2 + zeroth
        return out

    return symbol


def make_preconditioner(ctx):
    """Preconditioner for the normal operator of ``ctx`` (``None`` in 1D)."""
    if ctx.dim == 1 or ctx.n_dofs == 0:
        return None
    if hasattr(ctx, "symbol"):
        return SpectralPreconditioner(ctx.grid, ctx.m, ctx.symbol(), ctx.free_mask)
    stack = np.concatenate([ctx.coeffs.a, ctx.coeffs.b[None]], axis=0)
    T = stack[:, :, ctx.free_mask]
    return SpectralPreconditioner(ctx.grid, ctx.m, rotated_symbol(ctx), ctx.free_mask, T,
                                  nyquist_symbol=averaged_symbol(ctx))


def homogenized_preconditioner(ctx, tensor):
    """Preconditioner for a finely oscillating medium with known cell tensor.

    On scales much larger than the oscillation the form acts like the
    constant tensor, so the model symbol is ``p^T A p`` (``p`` the rotated
    wavevector) plus the averaged viscous term that dominates on the finest
    scales.
    """
    if ctx.dim == 1 or ctx.n_dofs == 0:
        return None
    D, m = ctx.dim, ctx.m
    A4 = np.asarray(tensor, dtype=float).reshape(D, m, D, m)
    eta, _, U = _form_averages(ctx)
    s = ctx.s_u
    kmin2 = _lowest_wavenumber(ctx.grid) ** 2

    def symbol(kt):
        k2 = np.sum(kt ** 2, axis=0)
        scale = np.sqrt(np.maximum(k2, kmin2) / np.where(k2 > 0, k2, 1.0))
        kt = np.where(k2 > 0, kt * scale, np.sqrt(kmin2 / 2))
        k2 = np.maximum(k2, kmin2)
        p = np.stack([-kt[1], kt[0]])
        e = (slice(None), slice(None)) + (None,) * k2.ndim
        return np.einsum("l...,lkij,i...->kj...", p, A4, p) + s * eta * k2 ** 2 * U[e]

    return SpectralPreconditioner(ctx.grid, m, symbol, ctx.free_mask)


# ---------------------------------------------------------------------------
# constant-tensor form (homogenized problems)


class ConstantTensorForm:
    """The form ``<A J, J>`` for a constant symmetric ``(D m) x (D m)`` tensor.

    Shares the solver interface of :class:`FormContext`, so homogenized
    problems run through the same machinery as heterogeneous ones.
    """

    degenerate = False

    def __init__(self, grid: Grid, m: int, tensor):
        self.grid = grid
        self.m = m
        self.tensor = np.asarray(tensor, dtype=float)
        D = grid.dim
        if self.tensor.shape != (D * m, D * m):
            raise DimensionMismatch(f"tensor must be {(D * m, D * m)}")
        self._A4 = self.tensor.reshape(D, m, D, m)

    dim = property(lambda self: self.grid.dim)
    free_mask = property(lambda self: self.grid.free_mask)
    n_dofs = property(lambda self: 0 if self.dim == 1 else self.m * int(self.free_mask.sum()))

    current = FormContext.current
    current_T = FormContext.current_T
    normal_apply = FormContext.normal_apply
    matvec = FormContext.matvec
    rhs = FormContext.rhs

    def require_nondegenerate(self, allow_seminorm=False):
        return None

    def energy_gradient(self, J: CurrentField, with_mean: bool = False):
        w = self.grid.weights
        AJ = np.einsum("lkij,ij...->lk...", self._A4, J.values)
        energy = float(np.sum(w * np.einsum("lk...,lk...->...", AJ, J.values)))
        g = w * AJ
        if with_mean:
            return g, energy, np.sum(g, axis=tuple(range(2, 2 + self.dim)))
        return g, energy

    def form(self, J, Jt) -> float:
        w = self.grid.weights
        AJ = np.einsum("lkij,ij...->lk...", self._A4, J.values)
        return float(np.sum(w * np.einsum("lk...,lk...->...", AJ, Jt.values)))

    def symbol(self):
        A4 = self._A4

        kmin2 = _lowest_wavenumber(self.grid) ** 2

        def sym(kt):
            k2 = np.sum(kt ** 2, axis=0)
            scale = np.sqrt(np.maximum(k2, kmin2) / np.where(k2 > 0, k2, 1.0))
            kt = np.where(k2 > 0, kt * scale, np.sqrt(kmin2 / 2))
            p = np.stack([-kt[1], kt[0]])
            return np.einsum("l...,lkij,i...->kj...", p, A4, p)

        return sym


def _energy(ctx, J) -> float:
    if isinstance(ctx, ConstantTensorForm):
        return ctx.form(J, J)
    return apply_form(ctx, J, J)


# ---------------------------------------------------------------------------
# cell problems


def _run(tasks, threads):
    if threads is None or threads <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(t) for t in tasks]
        return [f.result() for f in futures]


def _check_cg(ctx, it, res, ok, allow_seminorm):
    if ok:
        return
    if ctx.degenerate:
        raise DegenerateForm(f"conjugate gradients stalled at residual {res:.3e} on a "
                             "seminorm-only form", oscillation=0.0)
    raise NoConvergence(it, res)


def solve_cell_problem(ctx, c, tol=DEFAULT_TOL, maxiter=None, allow_seminorm=False,
                       data=None, precond=None):
    """Minimize ``a(c + J, c + J)`` over admissible fluctuations ``J = div f``.

    Parameters
    ----------
    ctx : FormContext or ConstantTensorForm
        Periodic grids give the torus problem, Dirichlet grids the problem
        with potentials pinned near the boundary.
    c : array_like, shape (D, m)
        Mean current.
    tol, maxiter : CG controls.
    allow_seminorm : bool
        Solve even when the oscillation vanishes.
    data : ndarray, shape (m, *nodes), optional
        Extra boundary potential added to the unknown one, for Dirichlet
        problems with non-affine data.
    precond : callable, optional
        Reuse a preconditioner across solves.

    Returns
    -------
    f : PotentialField
        Total potential (free values plus any ``data``).
    J : CurrentField
    report : SolveReport
    """
    ctx.require_nondegenerate(allow_seminorm)
    grid = ctx.grid
    if grid.kind == "natural":
        raise ValueError("natural grids define a dual problem; use effective_tensor_natural")
    c = np.asarray(c, dtype=float)
    if c.shape != (ctx.dim, ctx.m):
        raise DimensionMismatch(f"mean current must be {(ctx.dim, ctx.m)}, got {c.shape}")
    if ctx.dim == 1:
        J = ctx.current(np.zeros(0), c)
        return PotentialField(grid, ctx.m), J, SolveReport(0, 0.0, _energy(ctx, J), ctx.degenerate)

    base = None
    if data is not None:
        data = np.asarray(data, dtype=float)
        base = perp_current(data, grid)

    def with_base(J):
        if base is not None:
            J = CurrentField(grid, J.values + base, J.mean_part)
        return J

    def gradient(x, cc):
        g, _ = ctx.energy_gradient(with_base(ctx.current(x, cc)))
        return ctx.current_T(g)

    zero = np.zeros(ctx.n_dofs)
    rhs = -gradient(zero, c)
    matvec = ctx.matvec
    M = precond if precond is not None else make_preconditioner(ctx)
    x, it, res, ok = pcg(matvec, rhs, precond=M, tol=tol, maxiter=maxiter)
    _check_cg(ctx, it, res, ok, allow_seminorm)
    J = with_base(ctx.current(x, c))
    vals = np.zeros((ctx.m,) + grid.node_shape)
    vals[:, ctx.free_mask] = x.reshape(ctx.m, -1)
    if data is not None:
        vals = vals + data
    f = PotentialField(grid, ctx.m, vals)
    return f, J, SolveReport(it, res, _energy(ctx, J), ctx.degenerate)


# ---------------------------------------------------------------------------
# effective tensors


KINDS = ("a_sharp", "a_dirichlet", "b_natural", "b_sharp", "a_oracle")


@dataclass
class EffectiveTensor:
    """Symmetric ``(D m) x (D m)`` effective tensor with provenance.

    Tensor indices flatten ``c[l, k]`` row-major to ``l * m + k``.
    """

    matrix: np.ndarray
    kind: str
    bc: str
    D: int
    m: int
    grid: dict
    residuals: list
    iterations: list = field(default_factory=list)
    degenerate: bool = False
    solutions: list = field(default_factory=list, repr=False)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @property
    def positive_definite(self) -> bool:
        return bool(self.eigenvalues[0] > 0)

    def quadratic(self, c) -> float:
        c = np.asarray(c, dtype=float).reshape(-1)
        return float(c @ self.matrix @ c)

    def apply(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        return (self.matrix @ c.reshape(-1)).reshape(c.shape)

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "bc": self.bc,
            "D": self.D,
            "m": self.m,
            "matrix": [float(x) for x in self.matrix.reshape(-1)],
            "residuals": [float(r) for r in self.residuals],
            "iterations": [int(i) for i in self.iterations],
            "degenerate": bool(self.degenerate),
            "grid": self.grid,
        }


def _basis(D, m):
    n = D * m
    return [np.eye(n)[i].reshape(D, m) for i in range(n)]


def _polarize(ctx, currents, volume):
    """Tensor from minimal energies of basis currents using linearity."""
    n = len(currents)
    diag = np.array([_energy(ctx, J) for J in currents]) / volume
    A = np.diag(diag)
    for i in range(n):
        for j in range(i + 1, n):
            q = _energy(ctx, currents[i] + currents[j]) / volume
            A[i, j] = A[j, i] = 0.5 * (q - diag[i] - diag[j])
    return A


def _context_for(ctx, kind):
    """Context on the requested boundary kind for the same medium."""
    if ctx.grid.kind == kind:
        return ctx
    if ctx.grid.periodic and kind in ("dirichlet", "natural"):
        return FormContext(ctx.coeffs.to_box(kind), epsilon=ctx.epsilon)
    if kind in ("dirichlet", "natural") and not ctx.grid.periodic:
        return FormContext(ctx.coeffs.scaled_copy(ctx.grid.with_kind(kind)), epsilon=ctx.epsilon)
    raise ValueError(f"cannot turn a {ctx.grid.kind} context into a {kind} one")


def effective_tensor(ctx, bc=None, tol=DEFAULT_TOL, maxiter=None, allow_seminorm=False,
                     threads=1, precond=None) -> EffectiveTensor:
    """Effective tensor from the cell problems with periodic or Dirichlet data.

    Parameters
    ----------
    ctx : FormContext
    bc : {"periodic", "dirichlet"}, optional
        Defaults to the kind of ``ctx.grid``. A periodic context asked for
        Dirichlet data is converted to the equivalent box.
    tol, maxiter, allow_seminorm : see :func:`solve_cell_problem`.
    threads : int
        Basis columns are solved concurrently; results do not depend on it.
    precond : callable, optional
        Preconditioner for the (possibly converted) context.

    Returns
    -------
    EffectiveTensor
    """
    bc = ctx.grid.kind if bc is None else bc
    if bc not in ("periodic", "dirichlet"):
        raise ValueError(f"bc must be periodic or dirichlet, got {bc!r}")
    ctx = _context_for(ctx, bc)
    ctx.require_nondegenerate(allow_seminorm)
    M = precond if precond is not None else make_preconditioner(ctx)
    tasks = [lambda c=c: solve_cell_problem(ctx, c, tol, maxiter, allow_seminorm, precond=M)
             for c in _basis(ctx.dim, ctx.m)]
    results = _run(tasks, threads)
    currents = [r[1] for r in results]
    A = _polarize(ctx, currents, ctx.grid.volume)
    A = 0.5 * (A + A.T)
    return EffectiveTensor(
        A, "a_sharp" if bc == "periodic" else "a_dirichlet", bc, ctx.dim, ctx.m,
        ctx.grid.describe(), [r[2].residual for r in results], [r[2].iterations for r in results],
        ctx.degenerate, currents)


def solve_natural(ctx, p, tol=DEFAULT_TOL, maxiter=None, allow_seminorm=False, precond=None):
    """Maximize ``-a(J, J)/2 + <p, J>`` over ``J = div f`` with free potentials."""
    ctx.require_nondegenerate(allow_seminorm)
    grid = ctx.grid
    p = np.asarray(p, dtype=float).reshape(ctx.dim, ctx.m)
    if ctx.dim == 1:
        raise ValueError("the natural problem needs D = 2")
    load = grid.weights * p.reshape(p.shape + (1,) * grid.dim)
    rhs = ctx.current_T(load)
    M = precond if precond is not None else make_preconditioner(ctx)
    if maxiter is None:
        # free boundary layers converge markedly slower than pinned or periodic ones
        maxiter = NATURAL_MAXITER_FACTOR * default_maxiter(ctx.n_dofs)
    x, it, res, ok = pcg(ctx.matvec, rhs, precond=M, tol=tol, maxiter=maxiter)
    _check_cg(ctx, it, res, ok, allow_seminorm)
    J = ctx.current(x, np.zeros((ctx.dim, ctx.m)))
    return ctx.potential(x), J, SolveReport(it, res, _energy(ctx, J), ctx.degenerate)


def effective_tensor_natural(ctx, tol=DEFAULT_TOL, maxiter=None, allow_seminorm=False,
                             threads=1) -> EffectiveTensor:
    """Tensor of the natural-boundary dual problem.

    For each basis load ``p`` the maximizer satisfies
    ``(p, B p) |X| = a(J, J)``; off-diagonal entries follow by polarization.
    """
    ctx = _context_for(ctx, "natural")
    ctx.require_nondegenerate(allow_seminorm)
    M = make_preconditioner(ctx)
    tasks = [lambda p=p: solve_natural(ctx, p, tol, maxiter, allow_seminorm, precond=M)
             for p in _basis(ctx.dim, ctx.m)]
    results = _run(tasks, threads)
    currents = [r[1] for r in results]
    B = _polarize(ctx, currents, ctx.grid.volume)
    B = 0.5 * (B + B.T)
    return EffectiveTensor(B, "b_natural", "natural", ctx.dim, ctx.m, ctx.grid.describe(),
                           [r[2].residual for r in results], [r[2].iterations for r in results],
                           ctx.degenerate, currents)


def solve_natural_periodic(ctx, p, tol=DEFAULT_TOL, maxiter=None, allow_seminorm=False,
                           precond=None):
    """Maximize ``-a(c + J, c + J)/2 + <p, c + J>`` jointly over ``(c, f)`` on the torus.

    Returns ``(c, f, J, report)``.
    """
    ctx.require_nondegenerate(allow_seminorm)
    grid = ctx.grid
    if not grid.periodic:
        raise ValueError("the joint (c, f) problem lives on a periodic grid")
    D, m = ctx.dim, ctx.m
    nc = D * m
    nf = ctx.n_dofs
    p = np.asarray(p, dtype=float).reshape(D, m)

    def split(z):
        return z[:nc].reshape(D, m), z[nc:]

    def matvec(z):
        cc, x = split(z)
        g, _, gc = ctx.energy_gradient(ctx.current(x, cc), with_mean=True)
        return np.concatenate([gc.reshape(-1), ctx.current_T(g)])

    # exact inverse on the mean block, spectral model on the potential block
    Acc = np.stack([matvec(np.concatenate([e.reshape(-1), np.zeros(nf)]))[:nc]
                    for e in _basis(D, m)], axis=1)
    Acc_inv = np.linalg.pinv(0.5 * (Acc + Acc.T), hermitian=True)
    Mf = precond if precond is not None else make_preconditioner(ctx)

    def M(r):
        zc = Acc_inv @ r[:nc]
        zf = Mf(r[nc:]) if Mf is not None else np.zeros(0)
        return np.concatenate([zc, zf])

    rhs = np.concatenate([grid.volume * p.reshape(-1), np.zeros(nf)])
    z, it, res, ok = pcg(matvec, rhs, precond=M, tol=tol, maxiter=maxiter)
    _check_cg(ctx, it, res, ok, allow_seminorm)
    cc, x = split(z)
    J = ctx.current(x, cc)
    return cc, ctx.potential(x), J, SolveReport(it, res, _energy(ctx, J), ctx.degenerate)


def effective_tensor_natural_periodic(ctx, tol=DEFAULT_TOL, maxiter=None, allow_seminorm=False,
                                      threads=1) -> EffectiveTensor:
    """Tensor of the periodic dual problem with free mean current."""
    if not ctx.grid.periodic:
        raise ValueError("needs a periodic context")
    ctx.require_nondegenerate(allow_seminorm)
    Mf = make_preconditioner(ctx)
    tasks = [lambda p=p: solve_natural_periodic(ctx, p, tol, maxiter, allow_seminorm, precond=Mf)
             for p in _basis(ctx.dim, ctx.m)]
    results = _run(tasks, threads)
    currents = [r[2] for r in results]
    B = _polarize(ctx, currents, ctx.grid.volume)
    B = 0.5 * (B + B.T)
    return EffectiveTensor(B, "b_sharp", "periodic", ctx.dim, ctx.m, ctx.grid.describe(),
                           [r[3].residual for r in results], [r[3].iterations for r in results],
                           ctx.degenerate, currents)


# ---------------------------------------------------------------------------
# dense oracle


def assemble_dense(ctx) -> np.ndarray:
    """Matrix of the normal operator, column by column."""
    n = ctx.n_dofs
    if n > DENSE_LIMIT:
        raise TooLarge(f"{n} potential values exceed the dense limit {DENSE_LIMIT}")
    A = np.empty((n, n))
    e = np.zeros(n)
    for i in range(n):
        e[i] = 1.0
        A[:, i] = ctx.matvec(e)
        e[i] = 0.0
    return A


def dense_oracle_tensor(ctx, allow_seminorm=False) -> EffectiveTensor:
    """Effective tensor by dense assembly and minimum-norm least squares."""
    ctx.require_nondegenerate(allow_seminorm)
    if ctx.dim == 1:
        return effective_tensor(ctx, allow_seminorm=allow_seminorm)
    A = assemble_dense(ctx)
    A = 0.5 * (A + A.T)
    currents, residuals = [], []
    for c in _basis(ctx.dim, ctx.m):
        rhs = ctx.rhs(c)
        x = np.linalg.lstsq(A, rhs, rcond=1e-13)[0]
        residuals.append(float(np.linalg.norm(A @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)))
        currents.append(ctx.current(x, c))
    M = _polarize(ctx, currents, ctx.grid.volume)
    M = 0.5 * (M + M.T)
    return EffectiveTensor(M, "a_oracle", ctx.grid.kind, ctx.dim, ctx.m, ctx.grid.describe(),
                           residuals, [0] * len(currents), ctx.degenerate, currents)


# ---------------------------------------------------------------------------
# reconstruction


def _curl_free_residual(G, grid: Grid) -> float:
    """Relative distance of ``G - <G>`` from discrete gradients.

    ``G`` has shape ``(D, m, *nodes)``; each column is a vector field.
    """
    Gt = G - mean(G, grid).reshape(G.shape[:2] + (1,) * grid.dim)
    total = np.sqrt(np.sum(grid.weights * np.sum(Gt ** 2, axis=(0, 1))))
    if total == 0:
        return 0.0
    D, m = G.shape[:2]
    if grid.periodic:
        kt = _wavenumbers_periodic(grid) if grid.dim == 2 else None
        axes = tuple(range(2, 2 + grid.dim))
        if grid.dim == 1:
            return 0.0
        F = np.fft.rfftn(Gt, axes=axes)
        k2 = np.sum(kt ** 2, axis=0)
        safe = np.where(k2 > 0, k2, 1.0)
        proj = np.einsum("i...,ik...->k...", kt, F) / safe
        R = F - np.einsum("i...,k...->ik...", kt, proj)
        R = np.where(k2 > 0, R, F)
        resid = np.fft.irfftn(R, s=grid.shape, axes=axes)
        return float(np.sqrt(np.sum(grid.weights * np.sum(resid ** 2, axis=(0, 1)))) / total)
    sw = np.sqrt(grid.weights).reshape(-1)
    nn = grid.n_nodes
    out = 0.0
    for k in range(m):
        def mv(phi):
            gr = np.stack([deriv(phi.reshape(grid.node_shape), i, grid) for i in range(D)])
            return (gr.reshape(D, -1) * sw).reshape(-1)

        def rmv(y):
            y = (y.reshape(D, -1) * sw).reshape((D,) + grid.node_shape)
            return sum(deriv_T(y[i], i, grid) for i in range(D)).reshape(-1)

        op = LinearOperator((D * nn, nn), matvec=mv, rmatvec=rmv)
        target = (Gt[:, k].reshape(D, -1) * sw).reshape(-1)
        phi = lsqr(op, target, atol=1e-14, btol=1e-14, iter_lim=20 * nn)[0]
        out += np.sum((mv(phi) - target) ** 2)
    return float(np.sqrt(out) / total)


def reconstruct_fields(ctx, J: CurrentField):
    """Velocity and potential gradient carried by a minimizing current.

    Returns
    -------
    v : ndarray, shape (D, *nodes)
        ``J u^T``.
    grad_psi : ndarray, shape (D, m, *nodes)
        ``-A J`` where ``A J`` is the pointwise operator of the form, so that
        the domain average of ``-grad_psi`` equals the effective tensor
        applied to the mean current.
    curl_residual : float
        Relative distance of ``grad_psi`` from discrete gradient fields.
    """
    grid = ctx.grid
    v = np.einsum("lk...,k...->l...", J.values, ctx.coeffs.u)
    if not np.any(J.values):
        return v, np.zeros_like(J.values), 0.0
    g, _ = ctx.energy_gradient(J)
    grad_psi = -g / grid.weights
    return v, grad_psi, _curl_free_residual(grad_psi, grid)


def flux(ctx, grad_psi, v) -> np.ndarray:
    """``-(grad psi) a^T a + v b`` pointwise, shape ``(D, m, *nodes)``."""
    a = ctx.coeffs.a
    aTa = np.einsum("rk...,rj...->kj...", a, a)
    return -np.einsum("lk...,kj...->lj...", grad_psi, aTa) + np.einsum("l...,k...->lk...", v, ctx.coeffs.b)


def weak_residual(ctx, grad_psi, v, modes: int = 3) -> float:
    """Largest normalized ``<F, grad phi>`` over trigonometric test functions.

    ``F`` is the flux of :func:`flux`; test functions are ``cos`` and ``sin``
    products up to wavenumber ``modes``. On box grids they are multiplied by
    a bump vanishing at the boundary.
    """
    grid = ctx.grid
    F = flux(ctx, grad_psi, v)
    w = grid.weights
    x = grid.coords
    L = grid.lengths
    nrm = np.sqrt(np.sum(w * np.sum(F ** 2, axis=(0, 1))))
    if nrm == 0:
        return 0.0
    window = np.ones(grid.node_shape)
    if not grid.periodic:
        for d in range(grid.dim):
            window = window * np.sin(np.pi * x[d] / L[d]) ** 4
    worst = 0.0
    for ks in np.ndindex(*[modes + 1] * grid.dim):
        if not any(ks) and grid.periodic:
            continue
        for trig in np.ndindex(*[2] * grid.dim):
            phi = window.copy()
            for d in range(grid.dim):
                arg = 2 * np.pi * ks[d] * x[d] / L[d]
                phi = phi * (np.cos(arg) if trig[d] == 0 else np.sin(arg))
            gphi = np.stack([deriv(phi, i, grid) for i in range(grid.dim)])
            gn = np.sqrt(np.sum(w * np.sum(gphi ** 2, axis=0)))
            if gn == 0:
                continue
            val = np.einsum("lk...,l...->k...", F, gphi)
            r = np.sqrt(np.sum(np.sum(w * val, axis=tuple(range(1, 1 + grid.dim))) ** 2))
            worst = max(worst, float(r / (nrm * gn)))
    return worst
