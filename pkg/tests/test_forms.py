import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrohom.exceptions import DegenerateForm, DimensionMismatch, NonIntegerScale
from hydrohom.fields import dirac_preset, field_gradient, scalar_preset
from hydrohom.forms import (FormContext, apply_form, apply_form_eps, estimate_stability_constant,
                            integer_scale, normal_apply, random_current, tile_coefficients)
from hydrohom.grid import CurrentField, Grid, constant_current

KINDS = [("periodic", "spectral"), ("periodic", "fd"), ("dirichlet", "fd"), ("natural", "fd")]


def _ctx(kind, scheme, n=10, **kw):
    g = Grid((n, n), kind=kind, scheme=scheme)
    return FormContext(dirac_preset(g, zeta=0.05), **kw)


@pytest.mark.parametrize("kind,scheme", KINDS)
def test_form_symmetric_and_nonnegative(kind, scheme, rng):
    ctx = _ctx(kind, scheme)
    J = random_current(ctx, rng)
    K = random_current(ctx, rng)
    assert abs(apply_form(ctx, J, K) - apply_form(ctx, K, J)) < 1e-10 * (1 + abs(apply_form(ctx, J, K)))
    assert apply_form(ctx, J, J) > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3))
def test_form_bilinear(seed, s):
    rng = np.random.default_rng(seed)
    ctx = _ctx("periodic", "spectral", 8)
    J, K, L = (random_current(ctx, rng, 2) for _ in range(3))
    JK = CurrentField(ctx.grid, J.values + s * K.values, J.mean_part + s * K.mean_part)
    lhs = apply_form(ctx, JK, L)
    rhs = apply_form(ctx, J, L) + s * apply_form(ctx, K, L)
    assert abs(lhs - rhs) < 1e-9 * (1 + abs(lhs))


@pytest.mark.parametrize("kind,scheme", KINDS)
def test_normal_operator_is_gradient(kind, scheme, rng):
    ctx = _ctx(kind, scheme, 8)
    c = rng.standard_normal((2, 2))
    x = rng.standard_normal(ctx.n_dofs)
    d = rng.standard_normal(ctx.n_dofs)
    E = lambda y: 0.5 * apply_form(ctx, ctx.current(y, c), ctx.current(y, c))
    h = 1e-5
    fd = (E(x + h * d) - E(x - h * d)) / (2 * h)
    assert abs(fd - normal_apply(ctx, x, c) @ d) < 1e-6 * (1 + abs(fd))


@pytest.mark.parametrize("kind,scheme", KINDS)
def test_normal_operator_self_adjoint(kind, scheme, rng):
    ctx = _ctx(kind, scheme, 8)
    x, y = rng.standard_normal((2, ctx.n_dofs))
    assert abs(ctx.matvec(x) @ y - x @ ctx.matvec(y)) < 1e-9 * (1 + abs(x @ ctx.matvec(y)))


def test_dealiased_form_consistent(rng):
    g = Grid((12, 12))
    ctx = FormContext(dirac_preset(g), dealias=True)
    x, y = rng.standard_normal((2, ctx.n_dofs))
    assert abs(ctx.matvec(x) @ y - x @ ctx.matvec(y)) < 1e-9 * (1 + abs(x @ ctx.matvec(y)))
    J = random_current(ctx, rng, 2)
    base = apply_form(FormContext(dirac_preset(g)), J, J)
    assert abs(apply_form(ctx, J, J) - base) < 0.05 * base
    with pytest.raises(ValueError):
        FormContext(dirac_preset(Grid((12, 12), scheme="fd")), dealias=True)


def test_dimension_mismatch(ctx16):
    with pytest.raises(DimensionMismatch):
        apply_form(ctx16, np.zeros((2, 3, 16, 16)), np.zeros((2, 3, 16, 16)))
    with pytest.raises(DimensionMismatch):
        normal_apply(ctx16, np.zeros(3))


def test_constant_current_energy_closed_form():
    # constant medium: a(c, c) = |X| |c w^T|^2 since grad u = 0
    g = Grid((8, 8), (2.0, 1.0))
    ctx = FormContext(dirac_preset(g, gamma=0.5), theta_samples=64)
    c = np.array([[1.0, 2.0], [-0.5, 0.3]])
    w = ctx.coeffs.w[..., 0, 0]
    assert np.isclose(apply_form(ctx, constant_current(c, g), constant_current(c, g)),
                      2.0 * np.sum((c @ w.T) ** 2), rtol=1e-13)


def test_integer_scale():
    assert integer_scale(0.25) == 4
    assert integer_scale(1 / 3) == 3
    with pytest.raises(NonIntegerScale):
        integer_scale(0.3)
    with pytest.raises(NonIntegerScale):
        integer_scale(-1.0)


def test_eps_form_scales_velocity_term(rng):
    cell = dirac_preset(Grid((8, 8)))
    coeffs = tile_coefficients(cell, 2)
    plain = FormContext(coeffs)
    scaled = FormContext(coeffs, epsilon=0.5)
    J = random_current(plain, rng, 2)
    Jw, gv, div = plain.features(J)
    dens = plain.pair((Jw, 0 * gv, 0 * div), (Jw, 0 * gv, 0 * div))
    visc = apply_form(plain, J, J) - dens
    assert np.isclose(apply_form_eps(scaled, J, J), dens + 0.25 * visc, rtol=1e-12)
    with pytest.raises(ValueError):
        apply_form_eps(plain, J, J)
    with pytest.raises(NonIntegerScale):
        FormContext(coeffs, epsilon=0.3)


def test_tile_coefficients_matches_rescaled_sampling():
    cell = dirac_preset(Grid((8, 8)))
    tiled = tile_coefficients(cell, 3)
    direct = dirac_preset(Grid((24, 24)), gamma=lambda x, y: np.sin(6 * np.pi * x) + np.cos(6 * np.pi * y))
    assert np.allclose(tiled.b, direct.b, atol=1e-14)
    assert np.allclose(tiled.grad_u, field_gradient(direct.u, direct.grid), atol=1e-9)
    box = tile_coefficients(cell, 2, "dirichlet")
    assert box.grid.kind == "dirichlet" and box.grid.node_shape == (17, 17)
    with pytest.raises(NonIntegerScale):
        tile_coefficients(cell, 0)


def test_random_current_grid_independent():
    # the same generator state yields the same continuum current on two grids
    c16 = FormContext(dirac_preset(Grid((16, 16))))
    c32 = FormContext(dirac_preset(Grid((32, 32))))
    J16 = random_current(c16, np.random.default_rng(3))
    J32 = random_current(c32, np.random.default_rng(3))
    assert np.allclose(J16.values, J32.values[:, :, ::2, ::2], atol=1e-10)


def test_stability_constant(ctx16):
    C, worst, ratios = estimate_stability_constant(ctx16, samples=64, seed=1)
    assert ratios.shape == (64,) and np.isclose(C, ratios.max())
    assert C == estimate_stability_constant(ctx16, samples=64, seed=1)[0]
    osc = ctx16.oscillation.value
    l2 = np.sum(ctx16.grid.weights * np.sum(worst.values ** 2, axis=(0, 1)))
    assert np.isclose(osc * l2, C * apply_form(ctx16, worst, worst))
    with pytest.raises(ValueError):
        estimate_stability_constant(ctx16, samples=8)


def test_degenerate_context():
    ctx = FormContext(dirac_preset(Grid((8, 8)), gamma=0.2), theta_samples=64)
    assert ctx.degenerate
    with pytest.raises(DegenerateForm):
        ctx.require_nondegenerate()
    ctx.require_nondegenerate(allow_seminorm=True)
    with pytest.raises(DegenerateForm):
        estimate_stability_constant(ctx, samples=32)


def test_scalar_medium_form(rng):
    g = Grid((8, 8))
    ctx = FormContext(scalar_preset(g, n=lambda x, y: 2 + np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)))
    assert ctx.m == 1
    J = random_current(ctx, rng, 2)
    assert apply_form(ctx, J, J) > 0
