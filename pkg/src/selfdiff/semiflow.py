"""The measure-valued semiflow mu' = Pi(mu) - mu on a polar grid.

Stepping is exponential Euler, which is exact on the linear part:

    mu_{n+1} = e^{-dt} mu_n + (1 - e^{-dt}) Pi(mu_n)

so every iterate is a convex combination of probability densities.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gibbs import EnergyIncreaseError, convolve_interaction, free_energy, gamma_measure, pi_map
from .measures import (
    FunctionDictionary,
    GridMeasure2D,
    ParticleMeasure,
    default_dictionary,
    v_norm,
    write_grid_csv,
)
from .potentials import ConfinementPotential, InteractionPotential

log = logging.getLogger(__name__)

ENERGY_SLACK = 1e-8


def _check_dt(dt: float):
    if not 0.0 < dt <= 0.5:
        raise ValueError(f"dt must lie in (0, 0.5], got {dt}")


def _euler_from_pi(mu: GridMeasure2D, pi: GridMeasure2D, dt: float) -> GridMeasure2D:
    e = np.exp(-dt)
    return GridMeasure2D(mu.grid, e * mu.density + (1.0 - e) * pi.density)


def flow_step(V: ConfinementPotential, W: InteractionPotential, mu: GridMeasure2D, dt: float) -> GridMeasure2D:
    """One exponential-Euler step of length ``dt``."""
    _check_dt(dt)
    return _euler_from_pi(mu, pi_map(V, W, mu, mu.grid).measure, dt)


def _etd2_from_pi(V, W, mu, pi, dt):
    # second-order exponential Runge-Kutta; stays a convex combination since
    # c <= 1 - e^{-dt} for every dt > 0
    star = _euler_from_pi(mu, pi, dt)
    pi_star = pi_map(V, W, star, mu.grid).measure
    c = (np.expm1(-dt) + dt) / dt
    dens = star.density + c * (pi_star.density - pi.density)
    return GridMeasure2D(mu.grid, np.maximum(dens, 0.0))


def _phi(z: float) -> tuple[float, float, float]:
    """phi_1, phi_2, phi_3 of the exponential integrators at z."""
    if abs(z) < 0.1:
        terms = [z**k for k in range(16)]
        fact = np.cumprod([1.0] + list(range(1, 19)))
        return tuple(sum(terms[k] / fact[k + j] for k in range(16)) for j in (1, 2, 3))
    e = np.exp(z)
    p1 = (e - 1.0) / z
    p2 = (e - 1.0 - z) / z**2
    p3 = (e - 1.0 - z - 0.5 * z * z) / z**3
    return p1, p2, p3


def _etd3_from_pi(V, W, mu, pi, dt):
    # Cox-Matthews third-order exponential Runge-Kutta.  The final
    # combination has nonnegative weights for dt <= 0.5; the second
    # stage may dip below zero and is clipped.
    grid = mu.grid
    half = np.exp(-0.5 * dt)
    a = GridMeasure2D(grid, half * mu.density + (1.0 - half) * pi.density)
    pa = pi_map(V, W, a, grid).measure
    e = np.exp(-dt)
    b_dens = np.maximum(e * mu.density + (1.0 - e) * (2.0 * pa.density - pi.density), 0.0)
    b = GridMeasure2D(grid, b_dens / np.sum(b_dens * grid.quad_weights))
    pb = pi_map(V, W, b, grid).measure
    p1, p2, p3 = _phi(-dt)
    cu = dt * (p1 - 3.0 * p2 + 4.0 * p3)
    ca = dt * 4.0 * (p2 - 2.0 * p3)
    cb = dt * (4.0 * p3 - p2)
    return GridMeasure2D(grid, e * mu.density + cu * pi.density + ca * pa.density + cb * pb.density)


_SCHEMES = {"euler", "etd2", "etd3"}


@dataclass
class FlowTrajectory:
    """Per-step diagnostics plus full states every ``stride`` steps.

    ``energies`` holds E = F o Pi for symmetric interactions and NaN
    otherwise.
    """

    times: np.ndarray
    means: np.ndarray
    vnorm_to_gamma: np.ndarray
    energies: np.ndarray
    residuals: np.ndarray
    v_masses: np.ndarray
    state_times: list = field(default_factory=list)
    states: list = field(default_factory=list)

    @property
    def final(self) -> GridMeasure2D:
        return self.states[-1]

    @property
    def has_energy(self) -> bool:
        return not np.all(np.isnan(self.energies))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean_x", "mean_y", "vnorm_to_gamma", "energy_E", "residual_pi"])
            for k, t in enumerate(self.times):
                vals = (t, *self.means[k], self.vnorm_to_gamma[k], self.energies[k], self.residuals[k])
                w.writerow([f"{v:.17g}" for v in vals])
        return path

    def write_snapshots(self, directory, prefix: str = "flow") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        return [
            write_grid_csv(directory / f"{prefix}_{k:05d}.csv", s, header={"t": t})
            for k, (t, s) in enumerate(zip(self.state_times, self.states))
        ]


def integrate_flow(
    V: ConfinementPotential,
    W: InteractionPotential,
    mu0: GridMeasure2D,
    T: float,
    dt: float = 0.01,
    stride: int = 10,
    scheme: str = "euler",
    energy_slack: float = ENERGY_SLACK,
) -> FlowTrajectory:
    """Run ceil(T/dt) steps from ``mu0``.

    ``scheme`` is "euler" (exponential Euler), "etd2" or "etd3" (second
    and third order exponential Runge-Kutta with two and three Gibbs
    evaluations per step).  For symmetric W the energy E(mu) = F(Pi(mu)) is tracked and an increase
    beyond ``energy_slack`` raises :class:`EnergyIncreaseError`.  For other
    interactions int V dmu is monitored and growth is logged.
    """
    _check_dt(dt)
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    grid = mu0.grid
    n = int(np.ceil(T / dt - 1e-9))
    gamma = gamma_measure(V, grid)
    track = W.symmetric

    times = np.arange(n + 1) * dt
    means = np.empty((n + 1, 2))
    vg = np.empty(n + 1)
    en = np.full(n + 1, np.nan)
    res = np.empty(n + 1)
    vm = np.empty(n + 1)
    traj = FlowTrajectory(times, means, vg, en, res, vm)

    mu = mu0
    for k in range(n + 1):
        pi = pi_map(V, W, mu, grid).measure
        means[k] = mu.mean()
        vg[k] = v_norm(mu - gamma, V)
        res[k] = v_norm(pi - mu, V)
        vm[k] = mu.v_mass(V)
        if track:
            en[k] = free_energy(pi, W, V)
            if k > 0 and en[k] > en[k - 1] + energy_slack:
                raise EnergyIncreaseError(
                    f"E rose by {en[k] - en[k - 1]:.3g} at t={times[k]:.4g}; reduce dt (now {dt})"
                )
        if k % stride == 0 or k == n:
            traj.state_times.append(times[k])
            traj.states.append(mu)
        if k == n:
            break
        if scheme == "euler":
            mu = _euler_from_pi(mu, pi, dt)
        elif scheme == "etd2":
            mu = _etd2_from_pi(V, W, mu, pi, dt)
        else:
            mu = _etd3_from_pi(V, W, mu, pi, dt)
    if not track and vm[-1] > 10.0 * max(vm[0], gamma.v_mass(V)):
        log.warning("int V dPhi_t grew from %.3g to %.3g", vm[0], vm[-1])
    return traj


# ---------------------------------------------------------------------------
# Picard scheme on a short horizon
# ---------------------------------------------------------------------------


@dataclass
class PicardResult:
    """Iterates mu^(k)(t) on the time nodes ``times``.

    ``sup_gaps[k]`` is sup_t ||mu^(k+1)(t) - mu^(k)(t)||_V and ``ratios``
    the successive quotients of these gaps.
    """

    times: np.ndarray
    iterates: list
    sup_gaps: np.ndarray
    beta: float
    C_beta: float
    C_prime_beta: float

    @property
    def curve(self) -> list:
        return self.iterates[-1]

    @property
    def ratios(self) -> np.ndarray:
        g = self.sup_gaps
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(g[:-1] > 0, g[1:] / g[:-1], 0.0)

    @property
    def contraction_bound(self) -> float:
        return (1.0 - np.exp(-self.times[-1])) * self.C_prime_beta


def _two_atom_probes(grid, Vg, beta, rng, n):
    """Mixtures p delta_i + (1 - p) delta_j with V_i <= beta < V_j and
    p V_i + (1 - p) V_j = beta."""
    flat = Vg.reshape(-1)
    inside = np.flatnonzero(flat <= beta)
    outside = np.flatnonzero(flat > beta)
    probes = []
    if inside.size == 0:
        return probes
    for _ in range(n):
        i = rng.choice(inside)
        if outside.size == 0:
            w = {i: 1.0}
        else:
            j = rng.choice(outside)
            p = (flat[j] - beta) / (flat[j] - flat[i])
            w = {i: p, j: 1.0 - p}
        d = np.zeros(flat.size)
        for idx, wt in w.items():
            d[idx] = wt / grid.quad_weights.reshape(-1)[idx]
        probes.append(GridMeasure2D(grid, d.reshape(grid.shape)))
    return probes


def _antipodal_pairs(grid, n_dirs=4, n_radii=50):
    """Index pairs (x, -x) over a radius subsample and ``n_dirs`` angles.

    For radial V and bilinear W the operator norm of DPi is attained on
    such pairs, since they minimise V_i + V_j at fixed x_i - x_j.
    """
    n_angle = grid.angle_nodes.size
    radii = np.unique(np.linspace(0, grid.rho_nodes.size - 1, n_radii).astype(int))
    step = max(1, n_angle // (2 * n_dirs))
    return [
        ((i, j), (i, (j + n_angle // 2) % n_angle)) for i in radii for j in range(0, n_angle // 2, step)
    ]


def cylinder_constants(V, W, mu0: GridMeasure2D, beta: float, n_probes: int = 64, seed: int = 0):
    """Sampled C_beta = sup ||Pi(mu)||_V and C'_beta = sup ||DPi(mu)||
    (operator norm in the V-norm) over probe measures with int V dmu <= beta."""
    grid = mu0.grid
    rng = np.random.default_rng(seed)
    Vg = grid.potential_values(V)
    probes = [mu0, gamma_measure(V, grid)] + _two_atom_probes(grid, Vg, beta, rng, n_probes)
    pis = [pi_map(V, W, p, grid).measure for p in probes]
    C = max(p.v_mass(V) for p in pis)

    # W*nu for nu = delta_a - delta_b, shared by every probe
    fields = []
    for a, b in _antipodal_pairs(grid):
        d = np.zeros(grid.shape)
        d[a] = 1.0 / grid.quad_weights[a]
        d[b] = -1.0 / grid.quad_weights[b]
        fields.append((convolve_interaction(W, GridMeasure2D(grid, d), grid.points), Vg[a] + Vg[b]))
    Cp = 0.0
    for pi in pis[: max(2, min(len(pis), 8))]:
        w = Vg * pi.masses
        for wn, norm in fields:
            centred = wn - pi.integrate(wn)
            Cp = max(Cp, 2.0 * float(np.sum(np.abs(centred) * w)) / norm)
    return float(C), float(Cp)


def picard_local(
    V: ConfinementPotential,
    W: InteractionPotential,
    mu0: GridMeasure2D,
    epsilon: float,
    n_iter: int,
    n_nodes: int | None = None,
    beta: float | None = None,
    n_probes: int = 64,
    seed: int = 0,
) -> PicardResult:
    """Picard iterates of mu(t) = e^{-t} mu0 + int_0^t e^{s-t} Pi(mu(s)) ds on [0, epsilon].

    Pi(mu(s)) is interpolated linearly between time nodes and the
    exponential weights are integrated exactly.  The horizon must satisfy
    ||mu0||_V + (1 - e^{-eps}) C_beta <= beta and eps C'_beta < 1 with the
    sampled constants, otherwise ValueError names the failing one.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if n_iter < 0:
        raise ValueError("n_iter must be >= 0")
    grid = mu0.grid
    n_nodes = n_nodes or max(9, int(np.ceil(epsilon / 0.01)) + 1)
    times = np.linspace(0.0, epsilon, n_nodes)
    norm0 = mu0.v_mass(V)
    if beta is None:
        beta = 2.0 * max(norm0, gamma_measure(V, grid).v_mass(V)) + 1.0
    C, Cp = cylinder_constants(V, W, mu0, beta, n_probes, seed)
    if norm0 + (1.0 - np.exp(-epsilon)) * C > beta:
        raise ValueError(
            f"C_beta = {C:.4g}: ||mu0||_V + (1 - e^-eps) C_beta = "
            f"{norm0 + (1 - np.exp(-epsilon)) * C:.4g} exceeds beta = {beta:.4g}"
        )
    if epsilon * Cp >= 1.0:
        raise ValueError(f"C'_beta = {Cp:.4g}: eps C'_beta = {epsilon * Cp:.4g} is not < 1")

    h = np.diff(times)
    decay = np.exp(-h)
    b = (h - 1.0 + decay) / h  # weight of the right node
    a = (1.0 - decay) - b

    curve = [mu0] * n_nodes
    iterates = [curve]
    gaps = []
    for _ in range(n_iter):
        P = [pi_map(V, W, m, grid).measure.density for m in curve]
        acc = np.zeros(grid.shape)
        new = [mu0]
        for k in range(n_nodes - 1):
            acc = decay[k] * acc + a[k] * P[k] + b[k] * P[k + 1]
            new.append(GridMeasure2D(grid, np.exp(-times[k + 1]) * mu0.density + acc))
        gaps.append(max(v_norm(x - y, V) for x, y in zip(new, curve)))
        curve = new
        iterates.append(curve)
    return PicardResult(times, iterates, np.array(gaps), float(beta), C, Cp)


# ---------------------------------------------------------------------------
# Contraction toward the closed convex hull of the Gibbs images
# ---------------------------------------------------------------------------


def min_norm_point(P: np.ndarray, tol: float = 1e-12, max_iter: int = 10000) -> tuple[np.ndarray, np.ndarray]:
    """Wolfe's algorithm: point of conv(rows of P) closest to the origin.

    Returns (point, convex weights).
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    scale = max(1.0, float(np.max(np.sum(P * P, axis=1))))
    S = [int(np.argmin(np.sum(P * P, axis=1)))]
    lam = np.array([1.0])
    for _ in range(max_iter):
        x = lam @ P[S]
        j = int(np.argmin(P @ x))
        if x @ x - P[j] @ x <= tol * scale or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            Q = P[S]
            k = len(S)
            A = np.zeros((k + 1, k + 1))
            A[:k, :k] = Q @ Q.T
            A[:k, k] = 1.0
            A[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            mu = np.linalg.lstsq(A, rhs, rcond=None)[0][:k]
            if np.all(mu > 1e-14):
                lam = mu
                break
            neg = mu <= 1e-14
            step = np.min(lam[neg] / (lam[neg] - mu[neg]))
            lam = lam + step * (mu - lam)
            keep = lam > 1e-14
            S = [s for s, kp in zip(S, keep) if kp]
            lam = lam[keep] / lam[keep].sum()
    weights = np.zeros(n)
    weights[S] = lam
    return weights @ P, weights


@dataclass
class HullReport:
    times: np.ndarray
    distances: np.ndarray
    ratios: np.ndarray
    rank: int
    n_points: int
    tolerance: float = 1e-6

    @property
    def degenerate(self) -> bool:
        return self.rank < min(self.n_points - 1, 2)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.ratios <= 1.0 + self.tolerance))


def _random_probe(rng, radius, n_atoms=3):
    r = radius * np.sqrt(rng.uniform(size=n_atoms))
    a = rng.uniform(0.0, 2.0 * np.pi, size=n_atoms)
    pts = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    w = rng.dirichlet(np.ones(n_atoms))
    return ParticleMeasure(pts, w)


def hull_contraction_check(
    V: ConfinementPotential,
    W: InteractionPotential,
    mu0: GridMeasure2D,
    T: float,
    dt: float = 0.01,
    hull_samples: int = 64,
    checkpoints: int = 10,
    dictionary: FunctionDictionary | None = None,
    seed: int = 0,
) -> HullReport:
    """Compare d(Phi_t(mu0), hull) with e^{-t} d(mu0, hull).

    The hull proxy is spanned by the Gibbs images of ``hull_samples``
    random particle measures and by the images Pi(mu_k) met along the
    trajectory, all in sqrt(w_k)-scaled dictionary moment coordinates.
    """
    if hull_samples < 1:
        raise ValueError("hull_samples must be >= 1")
    grid = mu0.grid
    dictionary = dictionary or default_dictionary(V)
    rng = np.random.default_rng(seed)
    sw = np.sqrt(dictionary.weights)

    def coords(m):
        return sw * dictionary.moments(m)

    radius = 0.5 * grid.rho_max
    hull = [coords(pi_map(V, W, _random_probe(rng, radius), grid).measure) for _ in range(hull_samples)]
    n = int(np.ceil(T / dt - 1e-9))
    every = max(1, n // checkpoints)
    mu = mu0
    ck_idx, ck_coords = [0], [coords(mu0)]
    for k in range(n):
        pi = pi_map(V, W, mu, grid).measure
        hull.append(coords(pi))
        mu = _euler_from_pi(mu, pi, dt)
        if (k + 1) % every == 0 or k + 1 == n:
            ck_idx.append(k + 1)
            ck_coords.append(coords(mu))
    H = np.array(hull)
    rank = int(np.linalg.matrix_rank(H - H[0], tol=1e-10 * max(1.0, np.abs(H).max())))
    if rank < min(H.shape[0] - 1, 2):
        log.warning("hull proxy is degenerate: rank %d", rank)

    dist = np.array([np.linalg.norm(min_norm_point(H - c)[0]) for c in ck_coords])
    times = np.array(ck_idx) * dt
    tiny = 1e-13 * max(1.0, float(np.abs(H).max()))
    ratios = np.empty_like(dist)
    for k, (t, d) in enumerate(zip(times, dist)):
        ref = np.exp(-t) * dist[0]
        ratios[k] = (0.0 if d <= tiny else np.inf) if ref <= tiny else d / ref
    return HullReport(times, dist, ratios, rank, H.shape[0])
