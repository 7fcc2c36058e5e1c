"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (``pytest tests/test_acceptance.py -v -s``) or directly
(``python3 tests/test_acceptance.py``).  Reference values come from
tests/oracles.py, which uses adaptive quadrature and power series rather
than the package's tensor-grid quadrature.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from oracles import RadialOracle, bessel_i0_series  # noqa: E402

from selfdiff.gibbs import (  # noqa: E402
    d_free_energy,
    d_pi,
    fixed_point_iterate,
    free_energy,
    gamma_measure,
    pi_map,
)
from selfdiff.measures import GridMeasure2D, ParticleMeasure, default_dictionary, v_norm, weak_distance  # noqa: E402
from selfdiff.potentials import LinearRotation, NoInteraction, QuarticRadial, SymmetricDot  # noqa: E402
from selfdiff.rotation2d import (  # noqa: E402
    J_alpha,
    RadialDensity,
    ReducedState,
    alpha1_root,
    angular_integral,
    classify_regime,
    default_grid,
    integrate_reduced,
    periodic_orbit_measure,
    symmetry_integrals,
)
from selfdiff.sde import (  # noqa: E402
    SdeConfig,
    ergodic_average,
    pseudotrajectory_deficit,
    simulate_frozen,
    simulate_self_interacting,
    time_change,
    time_change_inverse,
)
from selfdiff.semiflow import flow_step, hull_contraction_check, integrate_flow  # noqa: E402

QUARTIC = QuarticRadial(1.0, 0.0, 1.0)  # m2 = 0.399: subcritical everywhere
FLAT = QuarticRadial(1.0 / 64.0, 0.0, 1.0)  # m2 = 3.19: supercritical for cos(theta) < -0.31
CIRCLING = (2 * np.pi / 3, 3 * np.pi / 4, 5 * np.pi / 4, 4 * np.pi / 3)
THETAS_32 = 2 * np.pi * np.arange(32) / 32

_cache: dict = {}


def _grid(V):
    key = ("grid", V)
    if key not in _cache:
        _cache[key] = default_grid(V)
    return _cache[key]


def _rd(V):
    key = ("rd", V)
    if key not in _cache:
        _cache[key] = RadialDensity.matching_grid(V, _grid(V))
    return _cache[key]


def _oracle(V):
    key = ("oracle", V)
    if key not in _cache:
        _cache[key] = RadialOracle(V.radial)
    return _cache[key]


def _tilted(V, grid, center, width):
    X = grid.points
    logd = -2.0 * V.value(X) - np.sum((X - np.asarray(center)) ** 2, -1) / (2.0 * width**2)
    return GridMeasure2D.from_log_density(grid, logd)[0]


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def criterion_1():
    """Regime flips exactly where cos(theta) m2 + 1 changes sign; J'(0) = -1 - cos(theta) m2."""
    rd = _rd(FLAT)
    m2 = _oracle(FLAT).m2
    h = 1e-4
    bad_regime, worst_slope = [], 0.0
    for th in THETAS_32:
        reg = classify_regime(rd, th)
        expect_gamma = np.cos(th) * m2 + 1.0 > 0
        if (reg.kind == "gamma") != expect_gamma:
            bad_regime.append(th)
        # J is odd in alpha, so J(h)/h is a central difference around 0
        slope = (J_alpha(rd, th, h) - J_alpha(rd, th, -h)) / (2 * h)
        worst_slope = max(worst_slope, abs(slope - (-1.0 - np.cos(th) * m2)))
    ok = not bad_regime and worst_slope < 1e-6
    return ok, f"misclassified={len(bad_regime)}, max |J'(0) - (-1 - cos m2)| = {worst_slope:.2e}"


def criterion_2():
    """Root residual, refinement stability and the 2D fixed point at theta = pi."""
    rd = _rd(FLAT)
    worst_res, worst_ref = 0.0, 0.0
    fine = rd.refined(2)
    n_super = 0
    for th in THETAS_32:
        a1 = alpha1_root(rd, th)
        if a1 is None:
            continue
        n_super += 1
        worst_res = max(worst_res, abs(J_alpha(rd, th, a1)))
        worst_ref = max(worst_ref, abs(alpha1_root(fine, th) - a1))
    a1 = alpha1_root(rd, np.pi)
    grid = _grid(FLAT)
    out = fixed_point_iterate(FLAT, SymmetricDot(), _tilted(FLAT, grid, (0.1, 0.0), 1.0), tol=1e-9)
    gap = abs(np.linalg.norm(out.measure.mean()) - a1 / 2)
    ok = n_super > 0 and worst_res < 1e-10 and worst_ref < 1e-8 and gap < 1e-3 and out.converged
    return ok, (
        f"{n_super} supercritical angles, max|J(a1)|={worst_res:.1e}, "
        f"refinement shift={worst_ref:.1e}, fixed-point |mean|-a1/2={gap:.1e}"
    )


def criterion_3():
    """Mean of the full flow against the reduced ODE, 5 starts x 3 angles."""
    grid = _grid(FLAT)
    rd = _rd(FLAT)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for th in (np.pi / 3, 2 * np.pi / 3, np.pi):
        W = LinearRotation(th)
        for _ in range(5):
            r = 2.0 * np.sqrt(rng.uniform())
            phi = rng.uniform(0, 2 * np.pi)
            mu0 = _tilted(FLAT, grid, (r * np.cos(phi), r * np.sin(phi)), rng.uniform(0.7, 1.5))
            traj = integrate_flow(FLAT, W, mu0, 5.0, 0.01, stride=500, scheme="etd3")
            red = integrate_reduced(rd, th, ReducedState.from_mean(mu0.mean()), 5.0, 0.01)
            worst = max(worst, float(np.max(np.linalg.norm(traj.means - red.means, axis=1))))
    return worst < 1e-3, f"sup_t |flow mean - reduced mean| = {worst:.2e} (bound 1e-3)"


def criterion_4():
    """Angular speed tan(theta) on the cycle; one flow step moves nu(delta) along the family."""
    rd = _rd(FLAT)
    grid = _grid(FLAT)
    dt = 0.01
    worst_rate, worst_step = 0.0, 0.0
    for th in CIRCLING:
        a1 = alpha1_root(rd, th)
        tr = integrate_reduced(rd, th, ReducedState(0.5 * a1, 0.3), 60.0, dt)
        k = int(np.argmax(np.abs(tr.alpha - a1) < 1e-6))
        assert abs(tr.alpha[k] - a1) < 1e-6, "reduced trajectory never reached the cycle"
        adv = tr.sigma[k + int(round(1 / dt))] - tr.sigma[k]
        worst_rate = max(worst_rate, abs(adv - np.tan(th)))
        W = LinearRotation(th)
        for delta in (0.0, 1.3):
            nu = periodic_orbit_measure(rd, th, a1, delta, grid)
            moved = flow_step(FLAT, W, nu, dt)
            target = periodic_orbit_measure(rd, th, a1, delta + dt * np.tan(th), grid)
            worst_step = max(worst_step, v_norm(moved - target, FLAT))
    ok = worst_rate < 1e-6 and worst_step < 1e-3
    return ok, f"max |advance - tan| = {worst_rate:.1e}, max ||step(nu) - nu(shifted)||_V = {worst_step:.1e}"


def criterion_5():
    """Hull-proxy ratios <= 1 + 1e-6 on 3 instances; E non-increasing for symmetric W."""
    cases = [
        (QUARTIC, LinearRotation(np.pi), (0.5, 0.2)),
        (FLAT, LinearRotation(3 * np.pi / 4), (1.0, -0.5)),
        (FLAT, SymmetricDot(), (0.1, 0.0)),
    ]
    worst_ratio = 0.0
    for V, W, c in cases:
        grid = _grid(V)
        rep = hull_contraction_check(V, W, _tilted(V, grid, c, 0.8), T=3.0, dt=0.01, hull_samples=64)
        worst_ratio = max(worst_ratio, float(np.max(rep.ratios)))
    worst_dE = -np.inf
    for V, c in ((QUARTIC, (0.8, 0.0)), (FLAT, (0.1, 0.0)), (FLAT, (-1.0, 2.0))):
        grid = _grid(V)
        for scheme in ("euler", "etd3"):
            tr = integrate_flow(V, SymmetricDot(), _tilted(V, grid, c, 1.0), 5.0, 0.01, scheme=scheme)
            worst_dE = max(worst_dE, float(np.max(np.diff(tr.energies))))
    ok = worst_ratio <= 1 + 1e-6 and worst_dE <= 1e-8
    return ok, f"max hull ratio = {worst_ratio:.9f}, max energy increment = {worst_dE:.1e}"


def criterion_6():
    """d_pi and d_free_energy against central differences, 20 random pairs."""
    grid = _grid(FLAT)
    rng = np.random.default_rng(7)
    h = 1e-4
    worst_pi, worst_f = 0.0, 0.0

    X = grid.points

    def rand_measure():
        return _tilted(FLAT, grid, rng.normal(scale=1.5, size=2), rng.uniform(0.6, 2.0))

    def rand_direction(mu):
        # nu = (f - mu(f)) mu with |f| <= 1, so mu +- h nu stays a positive
        # density and the entropy is differentiable along nu
        f = np.cos(X @ rng.normal(size=2) + rng.uniform(0, 2 * np.pi))
        return GridMeasure2D(grid, (f - mu.integrate(f)) * mu.density)

    for k in range(20):
        mu = rand_measure()
        nu = rand_direction(mu)
        W = LinearRotation(rng.uniform(0, 2 * np.pi))
        exact = d_pi(FLAT, W, mu, nu, grid)
        fd = (pi_map(FLAT, W, mu + h * nu, grid).measure - pi_map(FLAT, W, mu - h * nu, grid).measure) * (
            0.5 / h
        )
        worst_pi = max(worst_pi, v_norm(fd - exact, FLAT) / v_norm(exact, FLAT))
        S = SymmetricDot()
        dF = d_free_energy(mu, nu, S, FLAT)
        fdF = (free_energy(mu + h * nu, S, FLAT) - free_energy(mu - h * nu, S, FLAT)) / (2 * h)
        worst_f = max(worst_f, abs(fdF - dF) / abs(dF))
    ok = worst_pi < 1e-5 and worst_f < 1e-5
    return ok, f"max relative error: d_pi {worst_pi:.1e}, d_free_energy {worst_f:.1e}"


def criterion_7():
    """Frozen ergodic averages of 5 dictionary functions, 5 seeds, T = 1e4."""
    V = QUARTIC
    grid = _grid(V)
    gamma = gamma_measure(V, grid)
    D = default_dictionary(V)
    funcs = D.functions[:5]
    targets = [gamma.integrate(f) for f in funcs]
    lines = []
    ok = True
    for seed in range(5):
        cfg = SdeConfig(x0=(0.0, 0.0), dt=1e-3, T=1e4, seed=seed)
        path = simulate_frozen(V, NoInteraction(), ParticleMeasure.dirac((0.0, 0.0)), cfg)
        hits = 0
        for f, target in zip(funcs, targets):
            est = ergodic_average(path, f, burn_in=10.0)
            hits += abs(est.value - target) <= 3 * est.stderr
        lines.append(hits)
        ok &= hits >= 4
    return ok, f"functions within 3 s.e. per seed: {lines}"


def criterion_8():
    """Statistical phases of the self-interacting diffusion, 10 seeds each."""
    T = 1e4
    # (a) subcritical: mu_T closer to gamma than mu_{T/10}
    V, W = QUARTIC, LinearRotation(np.pi)
    gamma = gamma_measure(V, _grid(V))
    D = default_dictionary(V)
    a_hits = 0
    for seed in range(10):
        p = simulate_self_interacting(V, W, SdeConfig(dt=1e-3, T=T, seed=seed))
        a_hits += weak_distance(p.occupation_at(T), gamma, D) < weak_distance(p.occupation_at(T / 10), gamma, D)
    # (b) supercritical theta = pi: |mean| near alpha1 / 2
    rd = _rd(FLAT)
    a1 = alpha1_root(rd, np.pi)
    b_gaps = []
    for seed in range(10):
        p = simulate_self_interacting(FLAT, LinearRotation(np.pi), SdeConfig(dt=1e-3, T=T, seed=seed))
        b_gaps.append(float(np.linalg.norm(p.means[-1]) - a1 / 2))
    b_hits = sum(abs(g) <= 0.05 for g in b_gaps)
    # (c) circling: slope of the unwrapped mean angle against s = log(1 + t/r)
    th = 3 * np.pi / 4
    c_rates = []
    for seed in range(10):
        p = simulate_self_interacting(FLAT, LinearRotation(th), SdeConfig(dt=1e-3, T=T, seed=seed))
        s = time_change_inverse(p.times, p.cfg.r)
        sel = s >= 0.75 * s[-1]
        c_rates.append(float(np.polyfit(s[sel], p.unwrapped_mean_angle()[sel], 1)[0] / np.tan(th)))
    c_hits = sum(abs(r - 1.0) <= 0.1 for r in c_rates)
    ok = a_hits >= 8 and b_hits >= 8 and c_hits >= 7
    return ok, (
        f"(a) {a_hits}/10 seeds closer at T; (b) {b_hits}/10 within 0.05 "
        f"(gaps {min(b_gaps):+.3f}..{max(b_gaps):+.3f}); (c) {c_hits}/10 rates within 10% "
        f"(rate/tan {min(c_rates):.3f}..{max(c_rates):.3f})"
    )


_TEST_FUNCTIONS = {
    "one": lambda u: np.ones_like(u),
    "identity": lambda u: u,
    "exp_minus": lambda u: np.exp(-u),
    "cos": np.cos,
    "square": lambda u: u * u,
}


def criterion_9():
    """Symmetry integrals on the default grid; Bessel identity."""
    grid = _grid(QUARTIC)
    rd = _rd(QUARTIC)
    worst_sym = 0.0
    for phi in _TEST_FUNCTIONS.values():
        for deg in (0.0, 37.0, 90.0):
            y = np.array([np.cos(np.radians(deg)), np.sin(np.radians(deg))])
            I1, I2 = symmetry_integrals(rd, y, phi, grid)
            worst_sym = max(worst_sym, abs(I1), float(np.max(np.abs(I2))))
    worst_bessel = max(
        abs(angular_integral(t) - 2 * np.pi * bessel_i0_series(t)) / (2 * np.pi * bessel_i0_series(t))
        for t in (0.1, 1.0, 5.0)
    )
    ok = worst_sym < 1e-8 and worst_bessel < 1e-10
    return ok, f"max symmetry integral = {worst_sym:.1e}, max Bessel relative error = {worst_bessel:.1e}"


def criterion_10():
    """Pseudotrajectory deficits at t = 2, 3, 4 shrink, subcritical theta = pi."""
    V, W = QUARTIC, LinearRotation(np.pi)
    grid = _grid(V)
    D = default_dictionary(V)
    window = 1.0
    good = 0
    counts = []
    for seed in range(10):
        cfg = SdeConfig(dt=1e-3, T=time_change(4 + window) + 1.0, seed=seed)
        p = simulate_self_interacting(V, W, cfg)
        d = pseudotrajectory_deficit(p, V, W, [2, 3, 4], window, D, grid).deficits
        c = int(d[1] < d[0]) + int(d[2] < d[1]) + int(d[2] < d[0])
        counts.append(c)
        good += c >= 2
    return good >= 7, f"{good}/10 seeds with >= 2 of 3 decreases (per seed: {counts})"


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
}
BUDGET_S = {1: 10, 2: 60, 3: 300, 4: 60, 5: 120, 6: 60, 7: 600, 8: 1800, 9: 5, 10: 900}


def run_criterion(n: int) -> tuple[bool, str, float]:
    t0 = time.perf_counter()
    ok, detail = CRITERIA[n]()
    elapsed = time.perf_counter() - t0
    return bool(ok), detail, elapsed


def _line(n, ok, detail, elapsed):
    budget = BUDGET_S[n]
    flag = "" if elapsed <= budget else f" [over {budget} s budget]"
    return f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} ({elapsed:.1f} s){flag}"


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, capsys):
    ok, detail, elapsed = run_criterion(n)
    with capsys.disabled():
        print("\n" + _line(n, ok, detail, elapsed))
    assert ok, detail


if __name__ == "__main__":
    chosen = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    results = []
    for n in chosen:
        ok, detail, elapsed = run_criterion(n)
        print(_line(n, ok, detail, elapsed), flush=True)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
