import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrohom.exceptions import DimensionMismatch
from hydrohom.grid import (FROZEN_LAYERS, CurrentField, Grid, PotentialField, deriv, deriv_T,
                           divergence, fourier_interpolate, fourier_interpolate_T, gradient,
                           inner_product, mean, perp_current, perp_current_T)

ALL_GRIDS = [
    Grid((12, 10), (1.0, 2.0), "periodic", "spectral"),
    Grid((12, 10), (1.0, 2.0), "periodic", "fd"),
    Grid((12, 10), (1.0, 2.0), "dirichlet"),
    Grid((12, 10), (1.0, 2.0), "natural"),
    Grid((16,), kind="periodic"),
    Grid((16,), kind="dirichlet"),
]


def test_node_counts_and_weights():
    g = Grid((8, 6), (2.0, 3.0), "dirichlet")
    assert g.node_shape == (9, 7)
    assert np.isclose(g.weights.sum(), 6.0)
    p = Grid((8, 6), (2.0, 3.0))
    assert p.node_shape == (8, 6)
    assert np.isclose(p.weights.sum(), 6.0)


def test_validation():
    with pytest.raises(DimensionMismatch):
        Grid((4, 4, 4))
    with pytest.raises(ValueError):
        Grid((3, 8))
    with pytest.raises(ValueError):
        Grid((9, 8), scheme="spectral")
    with pytest.raises(ValueError):
        Grid((8, 8), kind="dirichlet", scheme="spectral")
    with pytest.raises(ValueError):
        Grid((8, 8), kind="dirichlet", frozen=0)


def test_free_mask_layers():
    g = Grid((12, 12), kind="dirichlet")
    free = g.free_mask
    assert free.sum() == (13 - 2 * FROZEN_LAYERS) ** 2
    assert not free[:FROZEN_LAYERS].any() and not free[-FROZEN_LAYERS:].any()
    assert Grid((12, 12), kind="dirichlet", frozen=1).free_mask.sum() == 11 ** 2
    assert Grid((12, 12), kind="natural").free_mask.all()


def test_spectral_derivative_exact_on_trig():
    g = Grid((16, 16), (1.0, 2.0))
    x, y = g.coords
    f = np.sin(2 * np.pi * 3 * x) * np.cos(2 * np.pi * y / 2.0)
    dfx = 6 * np.pi * np.cos(6 * np.pi * x) * np.cos(np.pi * y)
    dfy = -np.pi * np.sin(6 * np.pi * x) * np.sin(np.pi * y)
    assert np.max(np.abs(deriv(f, 0, g) - dfx)) < 1e-11
    assert np.max(np.abs(deriv(f, 1, g) - dfy)) < 1e-11


@pytest.mark.parametrize("kind", ["periodic", "dirichlet"])
def test_fd_second_order(kind):
    errs = []
    for n in (16, 32, 64):
        g = Grid((n,), kind=kind, scheme="fd")
        x = g.coords[0]
        errs.append(np.max(np.abs(deriv(np.sin(2 * np.pi * x), 0, g) - 2 * np.pi * np.cos(2 * np.pi * x))))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.8)


@pytest.mark.parametrize("g", ALL_GRIDS, ids=lambda g: f"{g.kind}-{g.scheme}-{g.dim}d")
def test_deriv_transpose(g, rng):
    for axis in range(g.dim):
        a = rng.standard_normal((2,) + g.node_shape)
        b = rng.standard_normal((2,) + g.node_shape)
        lhs = np.sum(deriv(a, axis, g) * b)
        rhs = np.sum(a * deriv_T(b, axis, g))
        assert abs(lhs - rhs) < 1e-11 * (1 + abs(lhs))


@pytest.mark.parametrize("g", ALL_GRIDS[:4], ids=lambda g: f"{g.kind}-{g.scheme}")
def test_perp_current_transpose_and_divergence_free(g, rng):
    f = rng.standard_normal((3,) + g.node_shape)
    G = rng.standard_normal((2, 3) + g.node_shape)
    J = perp_current(f, g)
    assert abs(np.sum(J * G) - np.sum(f * perp_current_T(G, g))) < 1e-10
    if g.periodic:
        # derivatives commute on the torus, so the generated current is divergence free
        div = sum(deriv(J[i], i, g) for i in range(2))
        assert np.max(np.abs(div)) < 1e-9


def test_gradient_divergence_shapes():
    g = Grid((8, 8))
    f = np.ones((3,) + g.node_shape)
    assert gradient(f, g).shape == (2, 3, 8, 8)
    assert divergence(np.zeros((2, 8, 8)), g).shape == (8, 8)
    with pytest.raises(DimensionMismatch):
        gradient(np.ones((7, 8)), g)


def test_mean_and_inner_product():
    g = Grid((10, 10), (2.0, 1.0), "natural")
    F = np.ones((2, 3) + g.node_shape) * 4.0
    assert np.allclose(mean(F, g), 4.0)
    assert np.isclose(inner_product(F, F, g), 16.0 * 6 * 2.0)


def test_fields_roundtrip(rng):
    g = Grid((8, 8), kind="dirichlet")
    f = PotentialField(g, 2)
    assert f.n_dofs == 2 * int(g.free_mask.sum())
    x = rng.standard_normal(f.n_dofs)
    assert np.array_equal(PotentialField.from_dofs(g, 2, x).dofs(), x)
    J = CurrentField(g, rng.standard_normal((2, 2) + g.node_shape), np.zeros((2, 2)))
    assert (J + J).values.shape == J.values.shape


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_fourier_interpolation_adjoint(seed):
    rng = np.random.default_rng(seed)
    c, f = Grid((8, 8)), Grid((12, 12))
    a = rng.standard_normal((2,) + c.node_shape)
    b = rng.standard_normal((2,) + f.node_shape)
    lhs = np.sum(fourier_interpolate(a, c, f) * b)
    rhs = np.sum(a * fourier_interpolate_T(b, c, f))
    assert abs(lhs - rhs) < 1e-10 * (1 + abs(lhs))


def test_fourier_interpolation_exact_for_band_limited():
    c, f = Grid((8, 8)), Grid((12, 12))
    fn = lambda x, y: np.sin(2 * np.pi * x) + np.cos(2 * np.pi * 2 * y)
    assert np.allclose(fourier_interpolate(c.sample(fn), c, f), f.sample(fn), atol=1e-12)
