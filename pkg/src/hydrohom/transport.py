"""Transport coefficients derived from effective tensors.

For two conserved currents (charge and heat) the inverse of the effective
tensor splits into conductivity blocks::

    inv(A) = [[sigma,       alpha      ],
              [alpha_tilde, kappa_tilde]]

where each block is ``D x D`` and indexed by spatial direction. Tensor
entries follow the flattening ``c[l, k] -> l * m + k`` of
:class:`~hydrohom.solver.EffectiveTensor`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateForm, DimensionMismatch, SingularTensor
from .fields import CoefficientSet, oscillation
from .forms import FormContext, apply_form
from .grid import constant_current, mean
from .solver import EffectiveTensor

SINGULAR_COND = 1e14


def _unpack(abar, D=None, m=None):
    """Matrix, D and m from an EffectiveTensor or a plain array."""
    if isinstance(abar, EffectiveTensor):
        return np.asarray(abar.matrix, dtype=float), abar.D, abar.m
    A = np.asarray(abar, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"tensor must be square, got shape {A.shape}")
    n = A.shape[0]
    if D is None and m is None:
        m = 2
    if D is None:
        D = n // m
    if m is None:
        m = n // D
    if D * m != n:
        raise DimensionMismatch(f"tensor of size {n} does not factor as D={D} times m={m}")
    return A, int(D), int(m)


def _require_pd(A, what="effective tensor"):
    sym = 0.5 * (A + A.T)
    ev = np.linalg.eigvalsh(sym)
    if not ev[0] > 0 or ev[-1] / ev[0] > SINGULAR_COND:
        raise SingularTensor(f"{what} is singular or not positive definite "
                             f"(eigenvalues {ev[0]:.3e} .. {ev[-1]:.3e})")


def _blocks(M, D, m):
    """``(D, m, D, m)`` view split by current index into 2 x 2 blocks."""
    R = M.reshape(D, m, D, m)
    return R[:, 0, :, 0], R[:, 0, :, 1], R[:, 1, :, 0], R[:, 1, :, 1]


@dataclass
class TransportSummary:
    """Conductivity blocks of an inverted effective tensor.

    ``lorenz`` is a scalar only when ``kappa sigma^-1`` is a multiple of the
    identity (always for ``D = 1``); otherwise it is ``None`` and the full
    matrix is in ``lorenz_matrix``.
    """

    sigma: np.ndarray
    alpha: np.ndarray
    alpha_tilde: np.ndarray
    kappa_tilde: np.ndarray
    kappa: np.ndarray = None
    lorenz: float = None
    lorenz_matrix: np.ndarray = None
    wf_ratio: float = None
    wf_ratio_measured: float = None
    T0: float = 1.0

    @property
    def D(self) -> int:
        return self.sigma.shape[0]

    def block_matrix(self) -> np.ndarray:
        """Reassembled ``2D x 2D`` matrix in tensor ordering."""
        D = self.D
        R = np.empty((D, 2, D, 2))
        R[:, 0, :, 0] = self.sigma
        R[:, 0, :, 1] = self.alpha
        R[:, 1, :, 0] = self.alpha_tilde
        R[:, 1, :, 1] = self.kappa_tilde
        return R.reshape(2 * D, 2 * D)

    def to_dict(self) -> dict:
        def mat(x):
            return None if x is None else [[float(v) for v in row] for row in np.atleast_2d(x)]

        def num(x):
            return None if x is None else float(x)

        return {
            "D": self.D,
            "T0": float(self.T0),
            "sigma": mat(self.sigma),
            "alpha": mat(self.alpha),
            "alpha_tilde": mat(self.alpha_tilde),
            "kappa_tilde": mat(self.kappa_tilde),
            "kappa": mat(self.kappa),
            "lorenz": num(self.lorenz),
            "lorenz_matrix": mat(self.lorenz_matrix),
            "wf_ratio": num(self.wf_ratio),
            "wf_ratio_measured": num(self.wf_ratio_measured),
        }


def invert_to_conductivities(abar, D=None) -> TransportSummary:
    """Blocks ``sigma, alpha, alpha_tilde, kappa_tilde`` of the inverse tensor.

    Parameters
    ----------
    abar : EffectiveTensor or array_like, shape (2D, 2D)
    D : int, optional
        Spatial dimension when ``abar`` is a plain array.

    Raises
    ------
    SingularTensor
        If ``abar`` is not safely positive definite.
    """
    A, D, m = _unpack(abar, D, 2)
    if m != 2:
        raise DimensionMismatch(f"conductivity blocks need m = 2, got m = {m}")
    _require_pd(A)
    inv = np.linalg.inv(A)
    s, al, alt, kt = (np.array(x) for x in _blocks(inv, D, m))
    return TransportSummary(s, al, alt, kt)


def measured_kappa(abar, D=None) -> np.ndarray:
    """Thermal conductivity at vanishing charge current.

    Equals the Schur complement ``kappa_tilde - alpha_tilde sigma^-1 alpha``
    of the inverse tensor, which is evaluated as the inverse of the
    heat-heat block of ``abar`` itself.
    """
    A, D, m = _unpack(abar, D, 2)
    if m != 2:
        raise DimensionMismatch(f"measured kappa needs m = 2, got m = {m}")
    _require_pd(A)
    heat = np.array(_blocks(A, D, m)[3])
    _require_pd(heat, "heat block")
    return np.linalg.inv(heat)


def lorenz_ratio(abar, D=None, rtol=1e-8) -> float:
    """Lorenz ratio ``kappa / sigma``.

    In one dimension this is ``det(abar) / abar[1, 1]**2``. In two
    dimensions a scalar exists only if ``kappa sigma^-1`` is isotropic.

    Raises
    ------
    SingularTensor
    ValueError
        For an anisotropic two-dimensional tensor.
    """
    A, D, m = _unpack(abar, D, 2)
    if m != 2:
        raise DimensionMismatch(f"Lorenz ratio needs m = 2, got m = {m}")
    _require_pd(A)
    if D == 1:
        return float(np.linalg.det(A) / A[1, 1] ** 2)
    L = lorenz_matrix(A, D)
    lam = np.trace(L) / D
    if np.linalg.norm(L - lam * np.eye(D)) > rtol * abs(lam):
        raise ValueError("kappa sigma^-1 is anisotropic; use lorenz_matrix")
    return float(lam)


def lorenz_matrix(abar, D=None) -> np.ndarray:
    """``kappa sigma^-1`` as a ``D x D`` matrix."""
    A, D, m = _unpack(abar, D, 2)
    blocks = invert_to_conductivities(A, D)
    return measured_kappa(A, D) @ np.linalg.inv(blocks.sigma)


def wf_deviation(summary: TransportSummary, T0: float = 1.0, measured: bool = False) -> float:
    """Relative departure from ``kappa_tilde = (pi^2 T0 / 3) sigma``.

    Returns ``|kappa_tilde - (pi^2 T0 / 3) sigma| / |kappa_tilde|`` in the
    Frobenius norm; with ``measured=True`` the measured ``kappa`` replaces
    ``kappa_tilde``.
    """
    K = summary.kappa if measured else summary.kappa_tilde
    if K is None:
        raise ValueError("summary carries no measured kappa")
    ref = (np.pi ** 2 * T0 / 3.0) * summary.sigma
    return float(np.linalg.norm(K - ref) / np.linalg.norm(K))


def transport_summary(abar, D=None, T0: float = 1.0) -> TransportSummary:
    """All transport quantities of one tensor."""
    A, D, m = _unpack(abar, D, 2)
    out = invert_to_conductivities(A, D)
    out.kappa = measured_kappa(A, D)
    out.lorenz_matrix = out.kappa @ np.linalg.inv(out.sigma)
    try:
        out.lorenz = lorenz_ratio(A, D)
    except ValueError:
        out.lorenz = None
    out.T0 = float(T0)
    out.wf_ratio = wf_deviation(out, T0)
    out.wf_ratio_measured = wf_deviation(out, T0, measured=True)
    return out


# ---------------------------------------------------------------------------
# bounds and closed forms


def voigt_bound(ctx: FormContext, c) -> float:
    """Energy per volume of the constant trial current ``J = c``.

    The derivative in the velocity term acts on ``u`` only, so this is
    ``<|c w^T|^2 + eta grad(c u^T) : grad(c u^T) + zeta div(c u^T)^2>``
    averaged over the domain; it bounds ``(c, A c)`` from above.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (ctx.dim, ctx.m):
        raise DimensionMismatch(f"c must have shape {(ctx.dim, ctx.m)}, got {c.shape}")
    J = constant_current(c, ctx.grid)
    return apply_form(ctx, J, J) / ctx.grid.volume


def voigt_tensor(ctx: FormContext) -> np.ndarray:
    """Matrix of :func:`voigt_bound` over the basis currents."""
    D, m = ctx.dim, ctx.m
    n = D * m
    E = np.eye(n)
    V = np.empty((n, n))
    diag = [voigt_bound(ctx, E[i].reshape(D, m)) for i in range(n)]
    for i in range(n):
        V[i, i] = diag[i]
        for j in range(i + 1, n):
            q = voigt_bound(ctx, (E[i] + E[j]).reshape(D, m))
            V[i, j] = V[j, i] = 0.5 * (q - diag[i] - diag[j])
    return V


def exact_1d_tensor(coeffs: CoefficientSet, allow_seminorm: bool = False) -> EffectiveTensor:
    """One-dimensional tensor ``<nu u'^T u' + w^T w>`` with ``nu = eta + zeta``.

    Raises
    ------
    DegenerateForm
        If the oscillation vanishes and ``allow_seminorm`` is false.
    """
    g = coeffs.grid
    if g.dim != 1:
        raise DimensionMismatch("exact_1d_tensor needs a one-dimensional grid")
    osc = oscillation(coeffs)
    if osc.degenerate and not allow_seminorm:
        raise DegenerateForm("oscillation of b vanishes; the one-dimensional tensor is singular",
                             oscillation=osc.value)
    nu = coeffs.eta[0, 0] + coeffs.zeta
    du = coeffs.grad_u[0]
    integrand = (nu * np.einsum("i...,j...->ij...", du, du)
                 + np.einsum("li...,lj...->ij...", coeffs.w, coeffs.w))
    A = mean(integrand, g)
    A = 0.5 * (A + A.T)
    return EffectiveTensor(A, "a_exact_1d", g.kind, 1, coeffs.m, g.describe(), [0.0], [0],
                           osc.degenerate)


# ---------------------------------------------------------------------------
# small oscillations


def _orthonormal_split(w0, D):
    """Bases of ``{c : c w0^T = 0}`` and its orthogonal complement."""
    w0 = np.atleast_2d(np.asarray(w0, dtype=float))
    m = w0.shape[1]
    # null space of w0 acting on rows of c
    _, s, Vt = np.linalg.svd(w0)
    rank = int(np.sum(s > 1e-12 * max(s.max(initial=0.0), 1.0)))
    null = Vt[rank:].T          # (m, m - rank)
    rng = Vt[:rank].T           # (m, rank)
    eye = np.eye(D)
    return np.kron(eye, null), np.kron(eye, rng)


def small_oscillation_eigen_split(abar, w0, D=None):
    """Rayleigh quotients of ``abar`` on the two invariant subspaces.

    Parameters
    ----------
    abar : EffectiveTensor or array_like
    w0 : array_like, shape (m-1, m)
        Dual rows of the unperturbed medium.

    Returns
    -------
    large : ndarray, shape (D (m-1),)
        Eigenvalues of the form compressed to the complement of
        ``{c : c w0^T = 0}``.
    small : ndarray, shape (D,)
        Eigenvalues of the form compressed to ``{c : c w0^T = 0}``.
    """
    w0 = np.atleast_2d(np.asarray(w0, dtype=float))
    m = w0.shape[1]
    A, D, m = _unpack(abar, D, m)
    Qs, Ql = _orthonormal_split(w0, D)
    A = 0.5 * (A + A.T)
    small = np.linalg.eigvalsh(Qs.T @ A @ Qs)
    large = np.linalg.eigvalsh(Ql.T @ A @ Ql)
    return large, small


def leading_quotients(w0, D: int) -> np.ndarray:
    """Eigenvalues of ``c -> |c w0^T|^2`` on the complement subspace."""
    w0 = np.atleast_2d(np.asarray(w0, dtype=float))
    _, Ql = _orthonormal_split(w0, D)
    G = np.kron(np.eye(D), w0.T @ w0)
    return np.linalg.eigvalsh(Ql.T @ G @ Ql)
