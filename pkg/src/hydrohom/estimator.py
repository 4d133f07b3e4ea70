"""Estimator-style wrapper around the cell-problem solvers.

``fit`` computes the effective tensor of one medium; ``predict`` maps mean
currents to mean potential gradients. Hyperparameters follow the usual
``get_params`` / ``set_params`` protocol.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DimensionMismatch
from .fields import CoefficientSet, dirac_preset, galilean_preset, scalar_preset
from .forms import FormContext
from .grid import Grid
from .solver import (DEFAULT_TOL, effective_tensor, effective_tensor_natural,
                     effective_tensor_natural_periodic)

PRESETS = ("dirac", "galilean", "scalar")
BCS = ("periodic", "dirichlet", "natural", "natural_periodic")


def check_currents(C, D: int, m: int) -> np.ndarray:
    """Validate mean currents as an ``(n_samples, D * m)`` float array.

    A single ``(D, m)`` current is accepted and reshaped to one row.
    """
    C = np.asarray(C, dtype=float)
    if C.shape == (D, m):
        C = C.reshape(1, D * m)
    C = check_array(C, dtype=np.float64, ensure_2d=True)
    if C.shape[1] != D * m:
        raise DimensionMismatch(f"expected {D * m} columns (D={D}, m={m}), got {C.shape[1]}")
    return C


def check_coefficients(X) -> CoefficientSet:
    if not isinstance(X, CoefficientSet):
        raise TypeError(f"expected a CoefficientSet, got {type(X).__name__}")
    return X


def build_preset(name: str, grid: Grid, **params) -> CoefficientSet:
    """Coefficients of a named preset."""
    if name == "dirac":
        return dirac_preset(grid, **params)
    if name == "galilean":
        return galilean_preset(grid, **params)
    if name == "scalar":
        return scalar_preset(grid, **params)
    raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")


class HydroHomogenizer(BaseEstimator):
    """Effective tensor of a periodic or boxed medium.

    Parameters
    ----------
    preset : {"dirac", "galilean", "scalar"}
        Medium built by ``fit`` when it is called without coefficients.
    shape : tuple of int
        Grid intervals per axis for the preset.
    scheme : {"spectral", "fd"}, optional
        Derivative scheme on the torus.
    bc : {"periodic", "dirichlet", "natural", "natural_periodic"}
        Cell problem; the natural kinds give the dual tensor.
    eta, zeta : float
        Viscosities for the preset.
    tol : float
        Relative CG residual.
    allow_seminorm : bool
        Proceed on media with vanishing oscillation.
    threads : int
        Concurrent basis solves.

    Attributes
    ----------
    tensor_ : EffectiveTensor
    coefficients_ : CoefficientSet
    n_features_in_ : int
        ``D * m``.
    """

    def __init__(self, preset="dirac", shape=(16, 16), scheme=None, bc="periodic", eta=0.1,
                 zeta=0.0, tol=DEFAULT_TOL, allow_seminorm=False, threads=1):
        self.preset = preset
        self.shape = shape
        self.scheme = scheme
        self.bc = bc
        self.eta = eta
        self.zeta = zeta
        self.tol = tol
        self.allow_seminorm = allow_seminorm
        self.threads = threads

    def fit(self, X=None, y=None):
        """Solve the cell problems.

        Parameters
        ----------
        X : CoefficientSet, optional
            Medium on a periodic grid; built from the preset when omitted.
        y : ignored

        Returns
        -------
        self
        """
        if self.bc not in BCS:
            raise ValueError(f"bc must be one of {BCS}, got {self.bc!r}")
        if X is None:
            grid = Grid(tuple(self.shape), kind="periodic", scheme=self.scheme)
            X = build_preset(self.preset, grid, eta=self.eta, zeta=self.zeta)
        coeffs = check_coefficients(X)
        ctx = FormContext(coeffs)
        kw = dict(tol=self.tol, allow_seminorm=self.allow_seminorm, threads=self.threads)
        if self.bc == "natural":
            tensor = effective_tensor_natural(ctx, **kw)
        elif self.bc == "natural_periodic":
            tensor = effective_tensor_natural_periodic(ctx, **kw)
        else:
            tensor = effective_tensor(ctx, bc=self.bc, **kw)
        self.coefficients_ = coeffs
        self.tensor_ = tensor
        self.n_features_in_ = tensor.D * tensor.m
        return self

    def _matrix(self):
        check_is_fitted(self, "tensor_")
        M = self.tensor_.matrix
        if self.bc.startswith("natural"):
            M = np.linalg.inv(M)
        return M

    def predict(self, C) -> np.ndarray:
        """Mean gradient ``-<grad psi> = A c`` for each row of mean currents ``C``."""
        check_is_fitted(self, "tensor_")
        C = check_currents(C, self.tensor_.D, self.tensor_.m)
        return C @ self._matrix().T

    def energy(self, C) -> np.ndarray:
        """Minimal energy per volume ``(c, A c)`` for each row of ``C``."""
        check_is_fitted(self, "tensor_")
        C = check_currents(C, self.tensor_.D, self.tensor_.m)
        return np.einsum("ni,ij,nj->n", C, self._matrix(), C)
