import numpy as np
import pytest
from conftest import QUARTIC, tilted
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from selfdiff.gibbs import EnergyIncreaseError, fixed_point_iterate, gamma_measure, pi_map
from selfdiff.measures import v_norm
from selfdiff.potentials import LinearRotation, NoInteraction, SymmetricDot
from selfdiff.rotation2d import ReducedState, alpha1_root, default_grid, integrate_reduced, limit_measure
from selfdiff.semiflow import (
    flow_step,
    hull_contraction_check,
    integrate_flow,
    min_norm_point,
    picard_local,
)

_QGRID = default_grid(QUARTIC)


# -- single steps ------------------------------------------------------------


def test_step_keeps_fixed_point(flat, flat_grid, flat_rd):
    mu = limit_measure(flat_rd, [0.0, 1.0], alpha1_root(flat_rd, np.pi), flat_grid)
    out = flow_step(flat, SymmetricDot(), mu, 0.1)
    assert v_norm(out - mu, flat) < 1e-10


def test_step_without_interaction_contracts_to_gamma(quartic, quartic_grid):
    mu = tilted(quartic_grid, quartic, (1.0, 0.5))
    g = gamma_measure(quartic, quartic_grid)
    dt = 0.05
    out = flow_step(quartic, NoInteraction(), mu, dt)
    assert v_norm(out - g, quartic) == pytest.approx(np.exp(-dt) * v_norm(mu - g, quartic), rel=1e-12)


@settings(max_examples=15)
@given(st.floats(1e-3, 0.5), st.floats(0.0, 2 * np.pi), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_step_preserves_probability(dt, theta, cx, cy):
    grid = _QGRID
    mu = tilted(grid, QUARTIC, (cx, cy))
    out = flow_step(QUARTIC, LinearRotation(theta), mu, dt)
    assert np.all(out.density >= 0)
    assert out.mass() == pytest.approx(1.0, abs=1e-12)


def test_step_rejects_bad_dt(quartic, quartic_grid):
    mu = gamma_measure(quartic, quartic_grid)
    for dt in (0.0, -0.1, 0.6):
        with pytest.raises(ValueError):
            flow_step(quartic, NoInteraction(), mu, dt)


def test_two_steps_against_double_step_is_second_order(quartic, quartic_grid):
    W = LinearRotation(2.0)
    mu = tilted(quartic_grid, quartic, (1.0, -0.5), 0.7)

    def gap(dt):
        two = flow_step(quartic, W, flow_step(quartic, W, mu, dt), dt)
        return v_norm(two - flow_step(quartic, W, mu, 2 * dt), quartic)

    ratio = gap(0.025) / gap(0.05)
    assert 0.2 < ratio < 0.3


# -- trajectories ------------------------------------------------------------


def test_flow_without_interaction_decays_exactly(quartic, quartic_grid):
    mu = tilted(quartic_grid, quartic, (1.5, 0.0), 0.5)
    tr = integrate_flow(quartic, NoInteraction(), mu, 5.0, 0.01)
    assert tr.vnorm_to_gamma[-1] == pytest.approx(np.exp(-5.0) * tr.vnorm_to_gamma[0], abs=1e-6)


def test_trajectory_invariants(quartic, quartic_grid):
    tr = integrate_flow(quartic, SymmetricDot(), tilted(quartic_grid, quartic, (1.0, 0.0)), 2.0, 0.01, stride=20)
    assert np.all(np.diff(tr.times) > 0)
    assert len(tr.times) == 201
    for s in tr.states:
        s.check_probability()
    assert tr.has_energy
    assert np.all(np.diff(tr.energies) <= 1e-8)


def test_energy_increase_aborts(flat, flat_grid):
    with pytest.raises(EnergyIncreaseError):
        integrate_flow(flat, SymmetricDot(), tilted(flat_grid, flat, (0.1, 0.0)), 0.05, 0.01, energy_slack=-1.0)


def test_symmetric_supercritical_flow_reaches_fixed_point(flat, flat_grid):
    mu0 = tilted(flat_grid, flat, (0.1, 0.0))
    tr = integrate_flow(flat, SymmetricDot(), mu0, 25.0, 0.01, stride=2500)
    assert tr.residuals[-1] < 1e-4
    fp = fixed_point_iterate(flat, SymmetricDot(), mu0, tol=1e-9).measure
    assert v_norm(tr.final - fp, flat) < 1e-3


def test_rotation_flow_mean_follows_reduced_ode(flat, flat_grid, flat_rd):
    theta = 3 * np.pi / 4
    mu0 = tilted(flat_grid, flat, (0.8, 0.3))
    tr = integrate_flow(flat, LinearRotation(theta), mu0, 5.0, 0.01, stride=500, scheme="etd3")
    red = integrate_reduced(flat_rd, theta, ReducedState.from_mean(mu0.mean()), 5.0, 0.01)
    assert np.max(np.linalg.norm(tr.means - red.means, axis=1)) < 1e-3


def test_semigroup_property(quartic, quartic_grid):
    W = LinearRotation(2.5)
    mu = tilted(quartic_grid, quartic, (1.0, 1.0))
    whole = integrate_flow(quartic, W, mu, 1.0, 0.01, stride=100).final
    half = integrate_flow(quartic, W, mu, 0.5, 0.01, stride=50).final
    np.testing.assert_array_equal(integrate_flow(quartic, W, half, 0.5, 0.01, stride=50).final.density, whole.density)


def test_exponential_euler_is_first_order(quartic, quartic_grid):
    W = LinearRotation(2.5)
    mu = tilted(quartic_grid, quartic, (1.0, 1.0))
    ref = integrate_flow(quartic, W, mu, 1.0, 0.0025, stride=400, scheme="etd3").final
    err = [v_norm(integrate_flow(quartic, W, mu, 1.0, dt, stride=1000).final - ref, quartic) for dt in (0.02, 0.01)]
    assert 1.7 < err[0] / err[1] < 2.3


def test_trajectory_csv(tmp_path, quartic, quartic_grid):
    tr = integrate_flow(quartic, LinearRotation(2.0), tilted(quartic_grid, quartic, (1.0, 0.0)), 0.1, 0.01)
    lines = tr.write_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,mean_x,mean_y,vnorm_to_gamma,energy_E,residual_pi"
    assert len(lines) == 12


# -- Picard ------------------------------------------------------------------


def test_picard_zero_iterations(quartic, quartic_grid):
    mu0 = tilted(quartic_grid, quartic, (0.5, 0.0))
    res = picard_local(quartic, NoInteraction(), mu0, 0.1, 0)
    assert all(m is mu0 for m in res.curve)


def test_picard_without_interaction_exact_after_first(quartic, quartic_grid):
    mu0 = tilted(quartic_grid, quartic, (0.5, 0.0))
    res = picard_local(quartic, NoInteraction(), mu0, 0.1, 3)
    assert res.sup_gaps[1] < 1e-12 and res.sup_gaps[2] < 1e-12
    # the curve is e^-t mu0 + (1 - e^-t) gamma
    g = gamma_measure(quartic, quartic_grid)
    t = res.times[-1]
    assert v_norm(res.curve[-1] - (np.exp(-t) * mu0 + (1 - np.exp(-t)) * g), quartic) < 1e-12


def test_picard_contraction_for_rotation(quartic, quartic_grid):
    mu0 = tilted(quartic_grid, quartic, (0.5, 0.0))
    res = picard_local(quartic, LinearRotation(2.0), mu0, 0.1, 5)
    assert np.all(np.diff(res.sup_gaps) < 0)
    assert np.all(res.ratios[:3] <= res.contraction_bound)


def test_picard_rejects_long_horizon(quartic, quartic_grid):
    mu0 = tilted(quartic_grid, quartic, (0.5, 0.0))
    with pytest.raises(ValueError, match="C'_beta"):
        picard_local(quartic, LinearRotation(2.0), mu0, 5.0, 1)
    with pytest.raises(ValueError, match="C_beta"):
        picard_local(quartic, LinearRotation(2.0), mu0, 0.1, 1, beta=mu0.v_mass(quartic))


# -- hull contraction --------------------------------------------------------


def test_min_norm_point_matches_constrained_least_squares():
    rng = np.random.default_rng(8)
    for _ in range(10):
        P = rng.normal(size=(12, 4)) + rng.normal(size=4)
        x, w = min_norm_point(P)
        cons = ({"type": "eq", "fun": lambda l: l.sum() - 1.0},)
        ref = minimize(
            lambda l: np.sum((l @ P) ** 2), np.full(12, 1 / 12), bounds=[(0, 1)] * 12, constraints=cons,
            method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000},
        )
        assert np.linalg.norm(x) == pytest.approx(np.linalg.norm(ref.x @ P), abs=1e-6)
        assert w.min() >= 0 and w.sum() == pytest.approx(1.0)


def test_hull_without_interaction(quartic, quartic_grid):
    rep = hull_contraction_check(quartic, NoInteraction(), tilted(quartic_grid, quartic, (1.0, 0.0)), 1.0)
    np.testing.assert_allclose(rep.ratios, 1.0, rtol=1e-9)
    assert rep.degenerate and rep.passed


def test_hull_start_inside(quartic, quartic_grid):
    rep = hull_contraction_check(quartic, NoInteraction(), gamma_measure(quartic, quartic_grid), 1.0)
    assert np.all(rep.distances < 1e-12) and rep.passed


def test_hull_rotation_passes(quartic, quartic_grid):
    rep = hull_contraction_check(quartic, LinearRotation(2.0), tilted(quartic_grid, quartic, (1.0, -1.0)), 3.0)
    assert not rep.degenerate
    assert rep.passed, rep.ratios

