import numpy as np
import pytest

from hydrohom.exceptions import ResolutionInsufficient
from hydrohom.experiments import (_children, bc_ordering_check, eps_convergence_study,
                                  loglog_slope, small_osc_sweep, subadditivity_mc)
from hydrohom.fields import dirac_preset
from hydrohom.grid import Grid


def test_loglog_slope_power_law():
    x = np.array([0.1, 0.2, 0.4, 0.8])
    assert loglog_slope(x, 3 * x ** 2) == pytest.approx(2.0)
    assert loglog_slope(x, np.full(4, 5.0)) == pytest.approx(0.0, abs=1e-12)


def test_children_partition():
    kids = _children(1, 4)
    assert len(kids) == 4
    assert sorted(k for group in kids for k in group) == list(range(16))
    assert kids[0] == [0, 1, 4, 5]


def test_eps_study_constant_medium_has_no_error():
    cell = dirac_preset(Grid((8, 8), scheme="fd"), gamma=0.3)
    res = eps_convergence_study(cell, epsilons=(1 / 2, 1 / 4), allow_seminorm=True,
                                tensor_gap=False)
    assert [r["cells"] for r in res.rows] == [2, 4]
    assert max(r["error_l2"] for r in res.rows) < 1e-10


def test_eps_study_resolution_guard():
    cell = dirac_preset(Grid((4, 4), scheme="fd"))
    with pytest.raises(ResolutionInsufficient):
        eps_convergence_study(cell, epsilons=(1 / 2,))


def test_eps_study_error_decreases_small():
    cell = dirac_preset(Grid((8, 8), scheme="fd"))
    res = eps_convergence_study(cell, epsilons=(1 / 2, 1 / 4, 1 / 8))
    err = res.column("error_l2")
    assert np.all(np.diff(err) < 0)
    assert all(r["residual"] <= 1e-9 for r in res.rows)
    assert res.flags["gap_shrinks"]


def test_eps_study_gap_sign_with_thick_freeze():
    # with four pinned layers the box problem is a restriction of the torus problem
    cell = dirac_preset(Grid((8, 8), scheme="fd"))
    res = eps_convergence_study(cell, epsilons=(1 / 2, 1 / 4), frozen=4)
    assert all(r["gap_min"] > 0 for r in res.rows)


def test_ordering_small_grid():
    res = bc_ordering_check(dirac_preset(Grid((12, 12), scheme="fd")))
    assert res.passed, res.rows
    assert len(res.extra["tensors"]) == 4


def test_small_osc_sweep_structure():
    res = small_osc_sweep(Grid((8, 8)), lams=(0.2, 0.1))
    assert res.values == [0.0, 0.1, 0.2]
    assert res.flags["small_vanish_at_zero"]
    ratios = [r["osc_over_lam2"] for r in res.rows[1:]]
    assert np.allclose(ratios, 2 * np.pi ** 2, rtol=1e-2)
    assert np.allclose(res.fits["leading_quotients"], 1.0)


def test_subadditivity_all_degenerate():
    res = subadditivity_mc(seed=1, sizes=(1, 2), samples=2, amplitude=0.0, max_attempts=2)
    assert res.extra["degenerate_samples"] == 2
    assert res.flags == {"nondegenerate_samples": False}
    assert not res.passed


def test_subadditivity_small_run_and_determinism():
    kw = dict(seed=3, sizes=(1, 2), samples=3)
    res = subadditivity_mc(**kw)
    assert res.flags["partition"] and res.flags["mean_nonincreasing"]
    again = subadditivity_mc(**kw)
    assert res.rows == again.rows
    assert res.seeds == [3]


def test_subadditivity_size_validation():
    with pytest.raises(ValueError):
        subadditivity_mc(sizes=(2, 3), samples=1)
    with pytest.raises(ResolutionInsufficient):
        subadditivity_mc(sizes=(1, 2), samples=1, points_per_cell=2)
