import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hydrohom.exceptions import DegenerateForm, DimensionMismatch, SingularTensor
from hydrohom.fields import dirac_preset, small_oscillation_family
from hydrohom.forms import FormContext
from hydrohom.grid import Grid
from hydrohom.solver import effective_tensor
from hydrohom.transport import (exact_1d_tensor, invert_to_conductivities, leading_quotients,
                                lorenz_matrix, lorenz_ratio, measured_kappa,
                                small_oscillation_eigen_split, transport_summary, voigt_bound,
                                voigt_tensor, wf_deviation)

# tensor of gamma = sin(2 pi x), n = gamma, s = 1, eta = 1, zeta = 0 on the unit circle,
# integrated with adaptive quadrature (scipy.integrate.quad, epsabs 1e-14)
QUAD_1D = np.diag([9.25391033543851, 5.410924845025797])


def spd(draw_matrix):
    return draw_matrix @ draw_matrix.T + 0.5 * np.eye(draw_matrix.shape[0])


mats = arrays(np.float64, (4, 4), elements=st.floats(-2, 2))


def test_identity_tensor():
    out = transport_summary(np.eye(2), D=1)
    assert np.allclose(out.sigma, 1) and np.allclose(out.kappa_tilde, 1)
    assert np.allclose(out.alpha, 0) and out.lorenz == pytest.approx(1.0)


def test_diagonal_tensor():
    out = transport_summary(np.diag([2.0, 4.0]), D=1)
    assert out.sigma[0, 0] == pytest.approx(0.5)
    assert out.kappa_tilde[0, 0] == pytest.approx(0.25)
    assert out.kappa[0, 0] == pytest.approx(0.25)
    assert out.lorenz == pytest.approx(0.5)
    assert out.wf_ratio == pytest.approx(abs(0.25 - np.pi ** 2 / 6) / 0.25)


def test_coupled_one_dimensional():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    out = transport_summary(A, D=1)
    # Schur complement of the inverse equals the inverse heat block
    assert out.kappa[0, 0] == pytest.approx(1 / 3)
    assert out.lorenz == pytest.approx(5 / 9)
    assert np.allclose(out.block_matrix(), np.linalg.inv(A))


@settings(max_examples=60, deadline=None)
@given(mats)
def test_schur_inequality_and_block_identity(M):
    A = spd(M)
    out = transport_summary(A, D=2)
    schur = out.kappa_tilde - out.alpha_tilde @ np.linalg.inv(out.sigma) @ out.alpha
    assert np.allclose(out.kappa, schur, atol=1e-8 * np.abs(schur).max() + 1e-10)
    assert np.linalg.eigvalsh(out.kappa_tilde - out.kappa)[0] > -1e-9 * np.abs(out.kappa_tilde).max()
    assert np.allclose(out.block_matrix() @ A, np.eye(4), atol=1e-8 * np.linalg.cond(A))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 2), elements=st.floats(-2, 2)), st.floats(0.01, 100))
def test_lorenz_scale_invariant(M, t):
    A = spd(M)
    assert lorenz_ratio(t * A, D=1) == pytest.approx(lorenz_ratio(A, D=1), rel=1e-9)
    assert lorenz_ratio(A, D=1) > 0


def test_lorenz_isotropic_two_dimensional():
    A1 = np.array([[2.0, 0.5], [0.5, 1.0]])
    A = np.kron(np.eye(2), A1)
    assert lorenz_ratio(A, D=2) == pytest.approx(lorenz_ratio(A1, D=1))
    B = A.copy()
    B[0, 0] = 5.0
    with pytest.raises(ValueError):
        lorenz_ratio(B, D=2)
    assert lorenz_matrix(B, D=2).shape == (2, 2)
    assert transport_summary(B, D=2).lorenz is None


def test_singular_tensor():
    with pytest.raises(SingularTensor):
        invert_to_conductivities(np.array([[1.0, 1.0], [1.0, 1.0]]), D=1)
    with pytest.raises(SingularTensor):
        measured_kappa(np.diag([1.0, -1.0]), D=1)
    with pytest.raises(DimensionMismatch):
        invert_to_conductivities(np.eye(3))


def test_wf_deviation_zero_on_reference():
    sig = 0.7
    A = np.diag([1 / sig, 3 / (np.pi ** 2 * sig)])
    out = transport_summary(A, D=1)
    assert wf_deviation(out) < 1e-14 and out.wf_ratio_measured < 1e-14


def test_exact_1d_against_quadrature():
    g = Grid((256,))
    co = dirac_preset(g, gamma=lambda x: np.sin(2 * np.pi * x), eta=1.0)
    t = exact_1d_tensor(co)
    assert np.max(np.abs(t.matrix - QUAD_1D)) < 1e-10 * np.abs(QUAD_1D).max()
    s = effective_tensor(FormContext(co))
    assert np.allclose(s.matrix, t.matrix, rtol=1e-12, atol=1e-12)


def test_exact_1d_degenerate():
    co = dirac_preset(Grid((32,)), gamma=0.5)
    with pytest.raises(DegenerateForm):
        exact_1d_tensor(co)
    assert exact_1d_tensor(co, allow_seminorm=True).degenerate


def test_voigt_bounds_tensor(ctx16, rng):
    A = effective_tensor(ctx16).matrix
    V = voigt_tensor(ctx16)
    assert np.linalg.eigvalsh(V - A)[0] > -1e-10
    c = rng.standard_normal((2, 2))
    assert voigt_bound(ctx16, c) == pytest.approx(c.reshape(-1) @ V @ c.reshape(-1), rel=1e-12)


def test_voigt_exact_in_one_dimension():
    co = dirac_preset(Grid((64,)), gamma=lambda x: 0.5 * np.cos(2 * np.pi * x), eta=0.3)
    ctx = FormContext(co)
    assert np.allclose(voigt_tensor(ctx), effective_tensor(ctx).matrix, rtol=1e-12, atol=1e-13)


def test_eigen_split_at_zero_oscillation():
    g = Grid((8, 8))
    co = small_oscillation_family(g, 0.0)
    t = effective_tensor(FormContext(co), allow_seminorm=True)
    w0 = co.w[..., 0, 0]
    large, small = small_oscillation_eigen_split(t, w0)
    assert np.max(np.abs(small)) < 1e-12
    assert np.allclose(large, leading_quotients(w0, 2), rtol=1e-10)
