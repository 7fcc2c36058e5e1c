"""Gibbs map, free energy, their differentials, and fixed-point search."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .measures import GridMeasure2D, Measure, ParticleMeasure, PolarGrid, v_norm, write_grid_csv
from .potentials import ConfinementPotential, InteractionPotential

log = logging.getLogger(__name__)

_CHUNK = 2048


class DominationError(ArithmeticError):
    """|W*mu| exceeded the 2 kappa ||mu||_V V bound."""


# ---------------------------------------------------------------------------
# Convolution W*mu
# ---------------------------------------------------------------------------


def _atoms(mu: Measure) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(mu, GridMeasure2D):
        return mu.grid.points.reshape(-1, 2), mu.masses.reshape(-1)
    return mu.points, mu.weights


def _mean(mu: Measure) -> np.ndarray:
    return mu.mean()


def convolve_interaction(
    W: InteractionPotential,
    mu: Measure,
    x,
    kappa: float | None = None,
    V: ConfinementPotential | None = None,
    rtol: float = 1e-9,
) -> np.ndarray:
    """W*mu(x) = int W(x, y) mu(dy), evaluated at points ``x`` (..., d).

    When ``kappa`` and ``V`` are given the result is checked against
    |W*mu(x)| <= 2 kappa ||mu||_V V(x).
    """
    x = np.asarray(x, dtype=float)
    if W.is_linear:
        out = x @ (W.matrix @ _mean(mu))
    else:
        ys, ws = _atoms(mu)
        flat = x.reshape(-1, x.shape[-1])
        out = np.empty(flat.shape[0])
        for s in range(0, flat.shape[0], _CHUNK):
            blk = flat[s : s + _CHUNK]
            out[s : s + _CHUNK] = W.value(blk[:, None, :], ys[None, :, :]) @ ws
        out = out.reshape(x.shape[:-1])
    if kappa is not None and V is not None:
        bound = 2.0 * kappa * v_norm(mu, V) * V.value(x)
        excess = np.abs(out) - bound * (1.0 + rtol)
        if np.any(excess > 0):
            raise DominationError(f"|W*mu| exceeds 2 kappa ||mu||_V V by up to {float(excess.max()):.3g}")
    return out


def convolve_interaction_grad(W: InteractionPotential, mu: Measure, x) -> np.ndarray:
    """grad_x (W*mu)(x)."""
    x = np.asarray(x, dtype=float)
    if W.is_linear:
        return np.broadcast_to(W.matrix @ _mean(mu), x.shape).copy()
    ys, ws = _atoms(mu)
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty_like(flat)
    for s in range(0, flat.shape[0], _CHUNK):
        blk = flat[s : s + _CHUNK]
        g = W.grad_x(blk[:, None, :], ys[None, :, :])
        out[s : s + _CHUNK] = np.einsum("pnd,n->pd", g, ws)
    return out.reshape(x.shape)


def _conv_on_grid(W: InteractionPotential, mu: Measure, grid: PolarGrid) -> np.ndarray:
    return convolve_interaction(W, mu, grid.points)


def interaction_energy(W: InteractionPotential, mu: Measure) -> float:
    """int int W(x, y) mu(dx) mu(dy)."""
    if W.is_linear:
        m = _mean(mu)
        return float(m @ W.matrix @ m)
    xs, ws = _atoms(mu)
    return float(ws @ convolve_interaction(W, mu, xs))


# ---------------------------------------------------------------------------
# Gibbs map
# ---------------------------------------------------------------------------


@dataclass
class GibbsResult:
    """Pi(mu) on the grid and Z(mu) = int exp(-2 W*mu) dgamma (gamma normalized)."""

    measure: GridMeasure2D
    z_value: float

    def write_csv(self, path) -> Path:
        return write_grid_csv(path, self.measure, header={"z_value": self.z_value})


def _log_gamma_unnormalized(V: ConfinementPotential, grid: PolarGrid) -> np.ndarray:
    return -2.0 * grid.potential_values(V)


def gamma_measure(V: ConfinementPotential, grid: PolarGrid) -> GridMeasure2D:
    """gamma = exp(-2V) dx / Z on the grid."""
    key = ("gamma", V)
    try:
        return grid._cache[key]
    except (KeyError, TypeError):
        pass
    g, _ = GridMeasure2D.from_log_density(grid, _log_gamma_unnormalized(V, grid))
    try:
        grid._cache[key] = g
    except TypeError:
        pass
    return g


def _log_z_gamma(V, grid) -> float:
    key = ("logZgamma", V)
    try:
        return grid._cache[key]
    except (KeyError, TypeError):
        pass
    _, lz = GridMeasure2D.from_log_density(grid, _log_gamma_unnormalized(V, grid))
    try:
        grid._cache[key] = lz
    except TypeError:
        pass
    return lz


def gibbs_from_field(V: ConfinementPotential, field_values: np.ndarray, grid: PolarGrid) -> GibbsResult:
    """Density proportional to exp(-2(V + field)) on the grid, in log space."""
    logd = _log_gamma_unnormalized(V, grid) - 2.0 * field_values
    meas, log_z = GridMeasure2D.from_log_density(grid, logd)
    return GibbsResult(meas, float(np.exp(log_z - _log_z_gamma(V, grid))))


def pi_map(V: ConfinementPotential, W: InteractionPotential, mu: Measure, grid: PolarGrid) -> GibbsResult:
    """Pi(mu)(dx) = exp(-2 W*mu(x)) gamma(dx) / Z(mu)."""
    return gibbs_from_field(V, _conv_on_grid(W, mu, grid), grid)


# ---------------------------------------------------------------------------
# Free energy
# ---------------------------------------------------------------------------


def free_energy(mu: GridMeasure2D, W: InteractionPotential, V: ConfinementPotential) -> float:
    """Relative entropy of mu w.r.t. gamma plus int int W dmu dmu.

    Nodes with zero density contribute nothing (0 log 0 = 0); density where
    gamma's grid value underflows gives +inf.
    """
    g = gamma_measure(V, mu.grid)
    d = mu.density
    pos = d > 0
    if np.any(pos & (g.density <= 0)):
        return float("inf")
    log_gamma = _log_gamma_unnormalized(V, mu.grid) - _log_z_gamma(V, mu.grid)
    ent = np.zeros_like(d)
    ent[pos] = d[pos] * (np.log(d[pos]) - log_gamma[pos])
    return float(np.sum(ent * mu.grid.quad_weights)) + interaction_energy(W, mu)


def lyapunov_energy(V, W, mu: Measure, grid: PolarGrid | None = None) -> float:
    """E(mu) = F(Pi(mu)); finite for particle measures too."""
    grid = grid or mu.grid
    return free_energy(pi_map(V, W, mu, grid).measure, W, V)


def _require_zero_mass(nu: GridMeasure2D, tol: float = 1e-10):
    m = nu.mass()
    if abs(m) > tol * max(1.0, float(np.sum(np.abs(nu.masses)))):
        raise ValueError(f"tangent measure must have zero mass, got {m:.3g}")


def d_pi(V, W, mu: Measure, nu: GridMeasure2D, grid: PolarGrid | None = None) -> GridMeasure2D:
    """DPi(mu).nu = -2 (W*nu - int W*nu dPi(mu)) Pi(mu)."""
    grid = grid or nu.grid
    _require_zero_mass(nu)
    pi = pi_map(V, W, mu, grid).measure
    wn = _conv_on_grid(W, nu, grid)
    centred = wn - pi.integrate(wn)
    return GridMeasure2D(grid, -2.0 * centred * pi.density)


def d_free_energy(mu: GridMeasure2D, nu: GridMeasure2D, W: InteractionPotential, V: ConfinementPotential) -> float:
    """DF(mu).nu = int [log(dmu/dgamma) + 2 W*mu] dnu; symmetric W only."""
    if not W.symmetric:
        raise ValueError("d_free_energy requires a symmetric interaction")
    _require_zero_mass(nu)
    if np.any(mu.density <= 0):
        raise ValueError("mu must have a positive density on the grid")
    log_gamma = _log_gamma_unnormalized(V, mu.grid) - _log_z_gamma(V, mu.grid)
    integrand = np.log(mu.density) - log_gamma + 2.0 * _conv_on_grid(W, mu, mu.grid)
    return nu.integrate(integrand)


# ---------------------------------------------------------------------------
# Fixed points
# ---------------------------------------------------------------------------


@dataclass
class FixedPointOutcome:
    measure: GridMeasure2D
    residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "residual_vnorm", "energy_E", "mean_x", "mean_y"])
            for row in self.history:
                w.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])
        return path


class EnergyIncreaseError(ArithmeticError):
    """The Lyapunov functional increased beyond the allowed slack."""


def fixed_point_iterate(
    V: ConfinementPotential,
    W: InteractionPotential,
    mu0: GridMeasure2D,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 500,
    energy_slack: float = 1e-10,
    min_damping: float = 1e-6,
) -> FixedPointOutcome:
    """Damped iteration mu <- (1 - damping) mu + damping Pi(mu).

    For symmetric W an iterate is accepted only if E = F o Pi does not
    increase (beyond ``energy_slack``); otherwise the damping is halved and
    the step retried.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    grid = mu0.grid
    mu = mu0
    pi = pi_map(V, W, mu, grid).measure
    track = W.symmetric
    energy = free_energy(pi, W, V) if track else float("nan")
    history = []
    residual = v_norm(pi - mu, V)
    it = 0
    while it < max_iter:
        history.append((it, residual, energy, *mu.mean()))
        if residual < tol:
            break
        d = damping
        while True:
            cand = GridMeasure2D(grid, (1.0 - d) * mu.density + d * pi.density)
            cand_pi = pi_map(V, W, cand, grid).measure
            if not track:
                break
            cand_energy = free_energy(cand_pi, W, V)
            if cand_energy <= energy + energy_slack:
                energy = cand_energy
                break
            d *= 0.5
            if d < min_damping:
                raise EnergyIncreaseError(
                    f"energy increases at iteration {it} even with damping {d:.2g}"
                )
        mu, pi = cand, cand_pi
        residual = v_norm(pi - mu, V)
        it += 1
    else:
        history.append((it, residual, energy, *mu.mean()))
    converged = residual < tol
    if not converged:
        log.warning("fixed-point iteration stopped at residual %.3g after %d steps", residual, it)
    return FixedPointOutcome(mu, residual, it, converged, history)


# ---------------------------------------------------------------------------
# Spectral gap of a 1D generator
# ---------------------------------------------------------------------------


@dataclass
class SpectralGap:
    gap: float
    gap_refined: float
    reliable: bool


def _gap(U, nodes: np.ndarray) -> float:
    # L f = (1/2) e^{2U} (e^{-2U} f')' with zero-flux ends; symmetrised in
    # l^2(e^{-2U}) it is the tridiagonal matrix below.
    x = np.asarray(nodes, dtype=float)
    h = np.diff(x)
    u = np.asarray(U(x), dtype=float)
    um = np.asarray(U(0.5 * (x[1:] + x[:-1])), dtype=float)
    cell = np.empty_like(x)
    cell[1:-1] = 0.5 * (x[2:] - x[:-2])
    cell[0], cell[-1] = 0.5 * h[0], 0.5 * h[-1]
    # conductance c_i = e^{-2U(mid)} / (2h); stationary weight e^{-2U_i} cell_i.
    # Only exponent differences are formed, so nothing underflows.
    diag = np.zeros_like(x)
    diag[:-1] -= 0.5 * np.exp(2.0 * (u[:-1] - um)) / h
    diag[1:] -= 0.5 * np.exp(2.0 * (u[1:] - um)) / h
    diag /= cell
    off = 0.5 * np.exp(u[:-1] + u[1:] - 2.0 * um) / (h * np.sqrt(cell[:-1] * cell[1:]))
    ev = eigh_tridiagonal(diag, off, eigvals_only=True, select="i", select_range=(x.size - 2, x.size - 1))
    return float(-ev[0])


def spectral_gap_1d(U, nodes) -> SpectralGap:
    """Smallest nonzero |eigenvalue| of (1/2) d^2 - U' d on ``nodes``.

    The result is flagged unreliable if the gap moves by more than 5% when
    the grid is doubled.
    """
    nodes = np.asarray(nodes, dtype=float)
    if nodes.size < 64:
        raise ValueError("need at least 64 nodes")
    g = _gap(U, nodes)
    fine = np.empty(2 * nodes.size - 1)
    fine[::2] = nodes
    fine[1::2] = 0.5 * (nodes[1:] + nodes[:-1])
    g2 = _gap(U, fine)
    return SpectralGap(g, g2, abs(g2 - g) <= 0.05 * abs(g2))
