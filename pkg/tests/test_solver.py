import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrohom.exceptions import DegenerateForm, NoConvergence, TooLarge
from hydrohom.fields import dirac_preset, galilean_preset, scalar_preset
from hydrohom.forms import FormContext, apply_form, random_current
from hydrohom.grid import Grid, mean
from hydrohom.solver import (ConstantTensorForm, dense_oracle_tensor, effective_tensor,
                             effective_tensor_natural, effective_tensor_natural_periodic,
                             make_preconditioner, pcg, reconstruct_fields, solve_cell_problem,
                             solve_natural, weak_residual)


def test_pcg_matches_direct(rng):
    B = rng.standard_normal((40, 40))
    A = B @ B.T + 40 * np.eye(40)
    b = rng.standard_normal(40)
    x, it, res, ok = pcg(lambda v: A @ v, b, tol=1e-12)
    assert ok and res <= 1e-12
    assert np.allclose(x, np.linalg.solve(A, b), rtol=1e-9)
    x, it, res, ok = pcg(lambda v: A @ v, b, precond=lambda r: r / np.diag(A), tol=1e-12)
    assert ok
    assert pcg(lambda v: A @ v, np.zeros(40))[1] == 0


def test_pcg_semidefinite_consistent(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((30, 30)))
    A = Q[:, :25] @ np.diag(np.linspace(1, 5, 25)) @ Q[:, :25].T
    b = A @ rng.standard_normal(30)
    x, _, res, ok = pcg(lambda v: A @ v, b, tol=1e-11)
    assert ok and np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_constant_medium_tensor_is_voigt():
    g = Grid((8, 8))
    ctx = FormContext(dirac_preset(g, gamma=0.4), theta_samples=64)
    t = effective_tensor(ctx, allow_seminorm=True)
    w = ctx.coeffs.w[..., 0, 0]
    assert t.degenerate
    assert np.allclose(t.matrix, np.kron(np.eye(2), w.T @ w), atol=1e-12)
    with pytest.raises(DegenerateForm):
        effective_tensor(ctx)


def test_one_dimensional_trivial_path():
    ctx = FormContext(dirac_preset(Grid((64,)), eta=1.0))
    f, J, rep = solve_cell_problem(ctx, np.array([[1.0, 0.5]]))
    assert rep.iterations == 0 and f.n_dofs == 0
    assert np.allclose(J.values, np.array([1.0, 0.5])[None, :, None])


def test_dense_oracle_agreement_small():
    ctx = FormContext(dirac_preset(Grid((6, 6))))
    t = effective_tensor(ctx, tol=1e-13)
    d = dense_oracle_tensor(ctx)
    assert np.max(np.abs(t.matrix - d.matrix)) < 1e-10


def test_dense_limit():
    ctx = FormContext(dirac_preset(Grid((48, 48))))
    with pytest.raises(TooLarge):
        dense_oracle_tensor(ctx)


def test_tensor_symmetric_pd_and_thread_independent(ctx16):
    t1 = effective_tensor(ctx16, threads=1)
    t2 = effective_tensor(ctx16, threads=3)
    assert np.array_equal(t1.matrix, t2.matrix)
    assert np.array_equal(t1.matrix, t1.matrix.T)
    assert t1.positive_definite
    assert max(t1.residuals) <= 1e-10


def test_default_dirac_tensor_structure(ctx16):
    # gamma = sin(2 pi x1) + cos(2 pi x2) is symmetric under the swap of axes combined with shifts,
    # so the tensor is isotropic in the spatial index and diagonal in the current index
    A = effective_tensor(ctx16).matrix.reshape(2, 2, 2, 2)
    assert np.allclose(A[0, :, 0, :], A[1, :, 1, :], atol=1e-9)
    assert np.max(np.abs(A[0, :, 1, :])) < 1e-9


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_minimizer_is_optimal(seed):
    rng = np.random.default_rng(seed)
    ctx = FormContext(dirac_preset(Grid((8, 8))))
    c = rng.standard_normal((2, 2))
    f, J, rep = solve_cell_problem(ctx, c, tol=1e-12)
    d = random_current(ctx, rng, 2)
    d = type(d)(ctx.grid, d.values - d.mean_part[..., None, None], np.zeros((2, 2)))
    pert = type(J)(ctx.grid, J.values + 1e-2 * d.values, J.mean_part)
    assert apply_form(ctx, pert, pert) >= rep.energy * (1 - 1e-12)


def test_dirichlet_above_periodic_fd():
    ctx = FormContext(dirac_preset(Grid((16, 16), scheme="fd")))
    ap = effective_tensor(ctx)
    ad = effective_tensor(ctx, bc="dirichlet")
    assert ad.bc == "dirichlet"
    assert np.linalg.eigvalsh(ad.matrix - ap.matrix)[0] > -1e-9


def test_dual_periodic_is_inverse(ctx16):
    ap = effective_tensor(ctx16)
    bp = effective_tensor_natural_periodic(ctx16)
    assert np.linalg.norm(np.linalg.inv(bp.matrix) - ap.matrix) < 1e-8 * np.linalg.norm(ap.matrix)


def test_natural_energy_identity():
    ctx = FormContext(dirac_preset(Grid((12, 12), kind="natural")))
    p = np.array([[1.0, 0.0], [0.5, -1.0]])
    _, J, rep = solve_natural(ctx, p)
    B = effective_tensor_natural(ctx).matrix
    assert np.isclose(p.reshape(-1) @ B @ p.reshape(-1) * ctx.grid.volume, rep.energy, rtol=1e-8)


def test_no_convergence():
    ctx = FormContext(dirac_preset(Grid((16, 16))))
    with pytest.raises(NoConvergence) as exc:
        solve_cell_problem(ctx, np.ones((2, 2)), maxiter=2)
    assert exc.value.iterations == 2


def test_reconstruction_relation(ctx16):
    t = effective_tensor(ctx16)
    for i, J in enumerate(t.solutions):
        c = np.eye(4)[i].reshape(2, 2)
        v, gpsi, curl = reconstruct_fields(ctx16, J)
        assert np.allclose(-mean(gpsi, ctx16.grid), t.apply(c), atol=1e-8)
        assert weak_residual(ctx16, gpsi, v) < 1e-8
        assert curl < 1e-1


def test_constant_tensor_form_trivial_solution():
    g = Grid((16, 16), kind="dirichlet")
    A = np.diag([1.0, 2.0, 3.0, 4.0])
    form = ConstantTensorForm(g, 2, A)
    f, J, rep = solve_cell_problem(form, np.ones((2, 2)))
    assert np.max(np.abs(f.values)) < 1e-12
    assert np.isclose(rep.energy, 10.0)


def test_preconditioner_keeps_iterations_low():
    ctx = FormContext(dirac_preset(Grid((32, 32), kind="dirichlet")))
    _, _, rep = solve_cell_problem(ctx, np.ones((2, 2)))
    assert rep.iterations < 150
    assert make_preconditioner(FormContext(dirac_preset(Grid((16,))))) is None


def test_other_presets_solve():
    g = Grid((16, 16))
    gal = galilean_preset(g, n=lambda x, y: 1 + 0.5 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))
    assert effective_tensor(FormContext(gal)).positive_definite
    sc = scalar_preset(g, n=lambda x, y: 3 + np.sin(2 * np.pi * x) + np.cos(2 * np.pi * y))
    t = effective_tensor(FormContext(sc))
    assert t.matrix.shape == (2, 2) and t.positive_definite
