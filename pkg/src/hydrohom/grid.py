"""Uniform grids, discrete differential operators and the stream-function
representation of divergence-free currents.

Array layout: every field carries its component axes first and the ``D``
spatial axes last, e.g. a current is ``(D, m, *nodes)`` and a potential is
``(m, *nodes)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import DimensionMismatch

KINDS = ("periodic", "dirichlet", "natural")
SCHEMES = ("spectral", "fd")

# Potentials on Dirichlet grids are pinned to zero on the boundary node and the
# next three layers; with one-sided boundary stencils this is the thinnest
# layer for which a zero-extended potential has exactly the same energy on any
# larger box (required for exact discrete subadditivity).
FROZEN_LAYERS = 4


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid on a box or torus of dimension 1 or 2.

    ``shape`` counts intervals per axis. A periodic grid has ``n`` nodes per
    axis at ``i * L / n``; a box grid (``dirichlet`` or ``natural``) has
    ``n + 1`` nodes including both end points. On Dirichlet grids the
    potential is pinned on ``frozen`` node layers at each end of every axis.
    """

    shape: tuple
    lengths: tuple = None
    kind: str = "periodic"
    scheme: str = None
    frozen: int = FROZEN_LAYERS

    def __post_init__(self):
        shape = tuple(int(s) for s in np.atleast_1d(self.shape))
        lengths = self.lengths
        if lengths is None:
            lengths = (1.0,) * len(shape)
        lengths = tuple(float(x) for x in np.atleast_1d(lengths))
        scheme = self.scheme
        if scheme is None:
            scheme = "spectral" if self.kind == "periodic" else "fd"
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "scheme", scheme)

        if len(shape) not in (1, 2):
            raise DimensionMismatch(f"only D in {{1, 2}} is supported, got D={len(shape)}")
        if len(lengths) != len(shape):
            raise DimensionMismatch("lengths and shape differ in dimension")
        if self.kind not in KINDS:
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        if any(n < 4 for n in shape):
            raise ValueError(f"need at least 4 points per axis, got {shape}")
        if int(self.frozen) < 1:
            raise ValueError("at least one frozen layer is needed on Dirichlet grids")
        object.__setattr__(self, "frozen", int(self.frozen))
        if any(L <= 0 for L in lengths):
            raise ValueError("domain lengths must be positive")
        if scheme == "spectral":
            if self.kind != "periodic":
                raise ValueError("spectral differentiation requires a periodic grid")
            if any(n % 2 for n in shape):
                raise ValueError(f"spectral grids need an even number of points, got {shape}")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def periodic(self) -> bool:
        return self.kind == "periodic"

    @property
    def spacing(self) -> tuple:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def node_shape(self) -> tuple:
        if self.periodic:
            return self.shape
        return tuple(n + 1 for n in self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    def axis_coords(self, axis: int) -> np.ndarray:
        n, L = self.shape[axis], self.lengths[axis]
        count = n if self.periodic else n + 1
        return np.arange(count) * (L / n)

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(D, *node_shape)``."""
        axes = [self.axis_coords(i) for i in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: rectangle rule on the torus, trapezoid on boxes."""
        w = np.ones(self.node_shape)
        for axis, dx in enumerate(self.spacing):
            wa = np.full(self.node_shape[axis], dx)
            if not self.periodic:
                wa[0] = wa[-1] = dx / 2
            shape = [1] * self.dim
            shape[axis] = -1
            w = w * wa.reshape(shape)
        return w

    @cached_property
    def free_mask(self) -> np.ndarray:
        """Nodes where potential degrees of freedom are unconstrained."""
        mask = np.ones(self.node_shape, dtype=bool)
        if self.kind == "dirichlet":
            for axis in range(self.dim):
                idx = [slice(None)] * self.dim
                idx[axis] = slice(0, self.frozen)
                mask[tuple(idx)] = False
                idx[axis] = slice(self.node_shape[axis] - self.frozen, None)
                mask[tuple(idx)] = False
        return mask

    def with_kind(self, kind: str, scheme: str = None) -> "Grid":
        if scheme is None:
            scheme = self.scheme if kind == "periodic" else "fd"
        return Grid(self.shape, self.lengths, kind, scheme, self.frozen)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "scheme": self.scheme,
            "shape": list(self.shape),
            "lengths": list(self.lengths),
            **({"frozen": self.frozen} if self.kind == "dirichlet" else {}),
        }

    def sample(self, fn):
        """Evaluate ``fn(*coords)`` at the nodes; constants are broadcast."""
        out = np.asarray(fn(*self.coords) if callable(fn) else fn, dtype=float)
        if out.ndim >= self.dim and out.shape[out.ndim - self.dim:] == self.node_shape:
            return out.copy()
        return np.broadcast_to(out, self.node_shape).copy()


# ---------------------------------------------------------------------------
# one-dimensional derivative kernels along a chosen array axis


def _wavenumbers(n: int, L: float) -> np.ndarray:
    k = 2 * np.pi / L * np.fft.rfftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[-1] = 0.0  # Nyquist mode has no real derivative
    return k


def _spectral(arr, ax, n, L):
    k = _wavenumbers(n, L)
    shape = [1] * arr.ndim
    shape[ax] = -1
    fhat = np.fft.rfft(arr, axis=ax)
    return np.fft.irfft(fhat * (1j * k).reshape(shape), n=n, axis=ax)


def _fd_periodic(arr, ax, dx):
    return (np.roll(arr, -1, axis=ax) - np.roll(arr, 1, axis=ax)) / (2 * dx)


def _fd_box(arr, ax, dx):
    a = np.moveaxis(arr, ax, 0)
    out = np.empty_like(a)
    out[1:-1] = a[2:] - a[:-2]
    out[0] = -3 * a[0] + 4 * a[1] - a[2]
    out[-1] = 3 * a[-1] - 4 * a[-2] + a[-3]
    out /= 2 * dx
    return np.moveaxis(out, 0, ax)


def _fd_box_T(arr, ax, dx):
    g = np.moveaxis(arr, ax, 0)
    out = np.zeros_like(g)
    out[2:] += g[1:-1]
    out[:-2] -= g[1:-1]
    out[0] -= 3 * g[0]
    out[1] += 4 * g[0]
    out[2] -= g[0]
    out[-1] += 3 * g[-1]
    out[-2] -= 4 * g[-1]
    out[-3] += g[-1]
    out /= 2 * dx
    return np.moveaxis(out, 0, ax)


def deriv(arr: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Partial derivative along spatial ``axis`` of a field on ``grid``."""
    arr = np.asarray(arr, dtype=float)
    ax = arr.ndim - grid.dim + axis
    if grid.scheme == "spectral":
        return _spectral(arr, ax, grid.shape[axis], grid.lengths[axis])
    if grid.periodic:
        return _fd_periodic(arr, ax, grid.spacing[axis])
    return _fd_box(arr, ax, grid.spacing[axis])


def deriv_T(arr: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Euclidean transpose of :func:`deriv` (no quadrature weights)."""
    arr = np.asarray(arr, dtype=float)
    if grid.periodic:
        return -deriv(arr, axis, grid)
    ax = arr.ndim - grid.dim + axis
    return _fd_box_T(arr, ax, grid.spacing[axis])


def _check_spatial(arr, grid):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim < grid.dim or arr.shape[arr.ndim - grid.dim:] != grid.node_shape:
        raise DimensionMismatch(
            f"field of shape {arr.shape} does not live on grid nodes {grid.node_shape}"
        )
    return arr


def gradient(arr, grid: Grid) -> np.ndarray:
    """Gradient; the derivative index is prepended: ``(D, *arr.shape)``."""
    arr = _check_spatial(arr, grid)
    return np.stack([deriv(arr, i, grid) for i in range(grid.dim)])


def divergence(vec, grid: Grid) -> np.ndarray:
    """Divergence of a field whose leading axis is the spatial component.

    On periodic grids this is exactly minus the adjoint of :func:`gradient`;
    on box grids the two are adjoint for fields vanishing near the boundary.
    """
    vec = _check_spatial(vec, grid)
    if vec.shape[0] != grid.dim:
        raise DimensionMismatch(f"leading axis must have length D={grid.dim}")
    return sum(deriv(vec[i], i, grid) for i in range(grid.dim))


def inner_product(F, G, grid: Grid) -> float:
    """Quadrature of ``(F, G) = Tr(F^T G)`` over the domain."""
    F = _check_spatial(F, grid)
    G = _check_spatial(G, grid)
    if F.shape != G.shape:
        raise DimensionMismatch(f"shapes differ: {F.shape} vs {G.shape}")
    prod = (F * G).reshape(-1, *grid.node_shape).sum(axis=0)
    return float(np.sum(prod * grid.weights))


def mean(F, grid: Grid) -> np.ndarray:
    """Domain average of every component of ``F``."""
    F = _check_spatial(F, grid)
    axes = tuple(range(F.ndim - grid.dim, F.ndim))
    return np.sum(F * grid.weights, axis=axes) / grid.volume


# ---------------------------------------------------------------------------
# potentials and currents


@dataclass
class PotentialField:
    """Stream functions, one per current column (empty in D=1)."""

    grid: Grid
    m: int
    values: np.ndarray = None

    def __post_init__(self):
        if self.grid.dim == 1:
            self.values = None
            return
        if self.values is None:
            self.values = np.zeros((self.m,) + self.grid.node_shape)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.m,) + self.grid.node_shape:
            raise DimensionMismatch(
                f"potential shape {self.values.shape} != {(self.m,) + self.grid.node_shape}"
            )

    @property
    def n_dofs(self) -> int:
        if self.values is None:
            return 0
        return self.m * int(self.grid.free_mask.sum())

    def dofs(self) -> np.ndarray:
        if self.values is None:
            return np.zeros(0)
        return self.values[:, self.grid.free_mask].reshape(-1)

    @classmethod
    def from_dofs(cls, grid: Grid, m: int, x) -> "PotentialField":
        if grid.dim == 1:
            return cls(grid, m)
        vals = np.zeros((m,) + grid.node_shape)
        vals[:, grid.free_mask] = np.asarray(x, dtype=float).reshape(m, -1)
        return cls(grid, m, vals)


@dataclass
class CurrentField:
    """A ``D x m`` current field ``J = div f + c``.

    ``mean_part`` is the constant tensor ``c``; ``values`` holds the full
    field including it.
    """

    grid: Grid
    values: np.ndarray
    mean_part: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        D = self.grid.dim
        if self.values.ndim != 2 + D or self.values.shape[0] != D \
                or self.values.shape[2:] != self.grid.node_shape:
            raise DimensionMismatch(f"current shape {self.values.shape} invalid for grid")
        if self.mean_part is None:
            self.mean_part = np.zeros(self.values.shape[:2])
        self.mean_part = np.asarray(self.mean_part, dtype=float).reshape(self.values.shape[:2])

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def fluctuation(self) -> np.ndarray:
        return self.values - _broadcast_const(self.mean_part, self.grid)

    def __add__(self, other):
        return CurrentField(self.grid, self.values + other.values, self.mean_part + other.mean_part)

    def __mul__(self, s):
        return CurrentField(self.grid, self.values * s, self.mean_part * s)

    __rmul__ = __mul__


def _broadcast_const(c, grid):
    c = np.asarray(c, dtype=float)
    return np.broadcast_to(c.reshape(c.shape + (1,) * grid.dim), c.shape + grid.node_shape)


def constant_current(c, grid: Grid) -> CurrentField:
    c = np.asarray(c, dtype=float)
    return CurrentField(grid, _broadcast_const(c, grid).copy(), c)


def perp_current(fvals: np.ndarray, grid: Grid) -> np.ndarray:
    """``(D, m, *nodes)`` array of ``grad^perp f_k = (-d2 f_k, d1 f_k)``."""
    return np.stack([-deriv(fvals, 1, grid), deriv(fvals, 0, grid)])


def perp_current_T(G: np.ndarray, grid: Grid) -> np.ndarray:
    """Euclidean transpose of :func:`perp_current`."""
    return -deriv_T(G[0], 1, grid) + deriv_T(G[1], 0, grid)


def potential_to_current(f: PotentialField, c) -> CurrentField:
    """Current ``J = div f + c`` generated by a potential."""
    grid = f.grid
    c = np.asarray(c, dtype=float)
    if c.shape != (grid.dim, f.m):
        raise DimensionMismatch(f"constant tensor must be {(grid.dim, f.m)}, got {c.shape}")
    base = _broadcast_const(c, grid)
    if grid.dim == 1:
        return CurrentField(grid, base.copy(), c)
    return CurrentField(grid, base + perp_current(f.values, grid), c)


# ---------------------------------------------------------------------------
# Fourier interpolation between periodic grids (used for 3/2-rule quadrature)


def _interp_axis(arr, ax, n, nf):
    X = np.fft.fft(arr, axis=ax)
    shape = list(arr.shape)
    shape[ax] = nf
    Y = np.zeros(shape, dtype=complex)
    h = n // 2
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    src[ax] = dst[ax] = slice(0, h)
    Y[tuple(dst)] = X[tuple(src)]
    src[ax] = slice(n - h + 1, n)
    dst[ax] = slice(nf - h + 1, nf)
    Y[tuple(dst)] = X[tuple(src)]
    return np.fft.ifft(Y, axis=ax).real * (nf / n)


def _restrict_axis(arr, ax, nf, n):
    Y = np.fft.fft(arr, axis=ax)
    shape = list(arr.shape)
    shape[ax] = n
    X = np.zeros(shape, dtype=complex)
    h = n // 2
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    src[ax] = dst[ax] = slice(0, h)
    X[tuple(dst)] = Y[tuple(src)]
    src[ax] = slice(nf - h + 1, nf)
    dst[ax] = slice(n - h + 1, n)
    X[tuple(dst)] = Y[tuple(src)]
    return np.fft.ifft(X, axis=ax).real


def fourier_interpolate(arr, coarse: Grid, fine: Grid) -> np.ndarray:
    """Band-limited interpolation from ``coarse`` to ``fine`` (Nyquist dropped)."""
    out = np.asarray(arr, dtype=float)
    for axis in range(coarse.dim):
        ax = out.ndim - coarse.dim + axis
        out = _interp_axis(out, ax, coarse.shape[axis], fine.shape[axis])
    return out


def fourier_interpolate_T(arr, coarse: Grid, fine: Grid) -> np.ndarray:
    """Euclidean transpose of :func:`fourier_interpolate`."""
    out = np.asarray(arr, dtype=float)
    for axis in range(coarse.dim):
        ax = out.ndim - coarse.dim + axis
        out = _restrict_axis(out, ax, fine.shape[axis], coarse.shape[axis])
    return out
