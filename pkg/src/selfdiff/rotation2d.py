"""Planar example W(x, y) = (x, R(theta) y) with radial V.

The mean m of the occupation measure closes on itself.  Writing
m = (alpha / 2) v(sigma), v(sigma) = (cos sigma, sin sigma), the reduced
dynamics is

    alpha' = -alpha - 2 cos(theta) H'(alpha) / H(alpha)
    sigma' = -2 sin(theta) H'(alpha) / (alpha H(alpha))

where H(alpha) = int drho gamma(rho) int_0^{2pi} dv exp(-alpha rho cos v).
R(theta) is the counter-clockwise rotation, so on the limit cycle
sigma' = tan(theta).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .measures import GridMeasure2D, PolarGrid, tail_radius
from .potentials import ConfinementPotential, QuarticRadial

log = logging.getLogger(__name__)

SMALL_ALPHA = 1e-8


@dataclass(eq=False)
class RadialDensity:
    """Radial law of gamma on [0, rho_max] by Gauss-Legendre quadrature.

    With ``jacobian=True`` (default) gamma(rho) = rho exp(-2V(rho)) / Z, the
    law of |X| under gamma(dx) = exp(-2V) dx / Z, so m2 = E|X|^2.
    ``jacobian=False`` drops the factor rho.
    """

    V: ConfinementPotential
    rho_max: float
    n_rho: int = 200
    n_angle: int = 256
    jacobian: bool = True

    def __post_init__(self):
        xi, wi = np.polynomial.legendre.leggauss(self.n_rho)
        self.nodes = 0.5 * self.rho_max * (xi + 1.0)
        w = 0.5 * self.rho_max * wi
        lg = np.log(w) - 2.0 * self.V_radial(self.nodes)
        if self.jacobian:
            lg += np.log(self.nodes)
        self.log_gamma = lg - logsumexp(lg)
        self.gamma = np.exp(self.log_gamma)
        self.angles = 2.0 * np.pi * np.arange(self.n_angle) / self.n_angle
        self.cos_v = np.cos(self.angles)
        self.sin_v = np.sin(self.angles)
        self.dv = 2.0 * np.pi / self.n_angle
        self.m2 = float(self.gamma @ self.nodes**2)

    @classmethod
    def from_potential(cls, V: ConfinementPotential, n_rho=200, n_angle=256, rho_max=None, jacobian=True, tol=1e-12):
        """Default radius covers gamma tilted by the largest root alpha1(pi)."""
        if rho_max is None:
            rho_max = tail_radius(V, tol, tilt=max_tilt(V, tol, n_rho, n_angle, jacobian))
        return cls(V, float(rho_max), n_rho, n_angle, jacobian)

    @classmethod
    def matching_grid(cls, V: ConfinementPotential, grid: PolarGrid, jacobian=True):
        """Same radial nodes and angular count as ``grid``."""
        return cls(V, grid.rho_max, grid.rho_nodes.size, grid.angle_nodes.size, jacobian)

    def V_radial(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if isinstance(self.V, QuarticRadial):
            return self.V.radial(rho)
        pts = np.stack([rho, np.zeros_like(rho)], axis=-1)
        return self.V.value(pts)

    def refined(self, factor: int = 2) -> "RadialDensity":
        return RadialDensity(self.V, self.rho_max, factor * self.n_rho, factor * self.n_angle, self.jacobian)

    # log of the tensor-quadrature integrand exp(-alpha rho cos v) gamma dv
    def _exponent(self, alpha: float) -> np.ndarray:
        return self.log_gamma[:, None] + np.log(self.dv) - alpha * np.outer(self.nodes, self.cos_v)


def max_tilt(V: ConfinementPotential, tol=1e-12, n_rho=200, n_angle=256, jacobian=True) -> float:
    """alpha1 at theta = pi (0 if subcritical), the largest tilt any
    supercritical regime produces; two passes so the root sees a radius
    wide enough for its own tilt."""
    tilt = 0.0
    for _ in range(2):
        rd = RadialDensity(V, tail_radius(V, tol, tilt=tilt), n_rho, n_angle, jacobian)
        a1 = alpha1_root(rd, np.pi)
        if a1 is None:
            return 0.0
        tilt = a1
    return tilt


def default_grid(V: ConfinementPotential, n_rho: int = 200, n_angle: int = 256, tol: float = 1e-12) -> PolarGrid:
    """Polar grid wide enough for gamma and every limit tilt."""
    return PolarGrid.for_potential(V, n_rho, n_angle, tol, tilt=max_tilt(V, tol, n_rho, n_angle))


def h_functions(rd: RadialDensity, alpha: float) -> tuple[float, float, float]:
    """(H, H', H~) at ``alpha``.

    H' is the quadrature of the differentiated integrand
    -rho cos v exp(-alpha rho cos v).  Values overflow to inf only when H
    itself exceeds the float range; use :func:`h_ratio` for H'/H.
    """
    E = rd._exponent(alpha)
    s = E.max()
    p = np.exp(E - s)
    scale = np.exp(s)
    H = p.sum()
    Hp = -np.sum(p * np.outer(rd.nodes, rd.cos_v))
    Ht = np.sum(p * np.outer(rd.nodes**2, rd.sin_v**2))
    return float(H * scale), float(Hp * scale), float(Ht * scale)


def h_ratio(rd: RadialDensity, alpha: float) -> float:
    """H'(alpha) / H(alpha), computed without overflow."""
    E = rd._exponent(alpha)
    p = np.exp(E - E.max())
    return float(-np.sum(p * np.outer(rd.nodes, rd.cos_v)) / p.sum())


def log_h(rd: RadialDensity, alpha: float) -> float:
    return float(logsumexp(rd._exponent(alpha)))


def angular_integral(t: float, n_angle: int = 256) -> float:
    """int_0^{2pi} exp(-t cos v) dv by the periodic trapezoid rule."""
    v = 2.0 * np.pi * np.arange(n_angle) / n_angle
    return float(np.sum(np.exp(-t * np.cos(v))) * 2.0 * np.pi / n_angle)


def J_alpha(rd: RadialDensity, theta: float, alpha: float) -> float:
    """Radial velocity -alpha - 2 cos(theta) H'/H; at theta = pi this is
    -alpha + 2 H'/H."""
    return -alpha - 2.0 * np.cos(theta) * h_ratio(rd, alpha)


def alpha1_root(rd: RadialDensity, theta: float, tol: float = 1e-15, left: float = 1e-6) -> float | None:
    """Unique positive zero of J_theta, or None when cos(theta) m2 >= -1."""
    if np.cos(theta) * rd.m2 >= -1.0:
        return None
    a = left
    if J_alpha(rd, theta, a) <= 0:
        warnings.warn("J_theta not positive near 0 although cos(theta) m2 < -1; treating as subcritical")
        return None
    b = 1.0
    for _ in range(60):
        if J_alpha(rd, theta, b) < 0:
            break
        a, b = b, 2.0 * b
    else:
        raise RuntimeError("no sign change of J_theta after 60 doublings; quadrature is broken")
    ja = J_alpha(rd, theta, a)
    for _ in range(200):
        mid = 0.5 * (a + b)
        jm = J_alpha(rd, theta, mid)
        if jm == 0.0:
            return mid
        if (jm > 0) == (ja > 0):
            a, ja = mid, jm
        else:
            b = mid
        if b - a <= tol * max(1.0, b):
            break
    return 0.5 * (a + b)


@dataclass
class RegimeClassification:
    """kind is 'gamma', 'fixed' or 'circling'."""

    kind: str
    alpha1: float | None = None
    T_theta: float | None = None
    degenerate: bool = False

    @property
    def label(self) -> str:
        return {"gamma": "ConvergeToGamma", "fixed": "ConvergeToRandomFixed", "circling": "Circling"}[self.kind]


def _is_pi(theta: float) -> bool:
    return abs(np.sin(theta)) < 1e-12 and np.cos(theta) < 0


def classify_regime(rd: RadialDensity, theta: float) -> RegimeClassification:
    c = np.cos(theta) * rd.m2
    if c >= -1.0:
        degenerate = c == -1.0
        if degenerate:
            warnings.warn("cos(theta) m2 = -1 exactly: boundary case classified as convergence to gamma")
        return RegimeClassification("gamma", degenerate=bool(degenerate))
    a1 = alpha1_root(rd, theta)
    if a1 is None:
        return RegimeClassification("gamma", degenerate=True)
    if _is_pi(theta):
        return RegimeClassification("fixed", alpha1=a1)
    return RegimeClassification("circling", alpha1=a1, T_theta=2.0 * np.pi / np.tan(theta))


# ---------------------------------------------------------------------------
# Reduced ODE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReducedState:
    alpha: float
    sigma: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        s = float(np.mod(self.sigma, 2.0 * np.pi))
        # a tiny negative sigma rounds up to exactly 2 pi
        object.__setattr__(self, "sigma", 0.0 if s >= 2.0 * np.pi else s)

    @classmethod
    def from_mean(cls, m) -> "ReducedState":
        m = np.asarray(m, dtype=float)
        return cls(2.0 * float(np.hypot(*m)), float(np.arctan2(m[1], m[0])))

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * self.alpha * np.array([np.cos(self.sigma), np.sin(self.sigma)])


def _rhs(rd, theta, alpha):
    r = h_ratio(rd, alpha)
    da = -alpha - 2.0 * np.cos(theta) * r
    if alpha < SMALL_ALPHA:
        # 2 H'(a) / (a H(a)) -> 2 H''(0) / H(0) = m2
        ang = rd.m2
    else:
        ang = 2.0 * r / alpha
    return da, -np.sin(theta) * ang


def reduced_ode_rhs(rd: RadialDensity, theta: float, s: ReducedState) -> tuple[float, float]:
    return _rhs(rd, theta, s.alpha)


@dataclass
class ReducedTrajectory:
    times: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray  # unwrapped

    @property
    def states(self) -> list[ReducedState]:
        return [ReducedState(float(a), float(s)) for a, s in zip(self.alpha, self.sigma)]

    @property
    def means(self) -> np.ndarray:
        return 0.5 * self.alpha[:, None] * np.stack([np.cos(self.sigma), np.sin(self.sigma)], axis=1)


def integrate_reduced(rd: RadialDensity, theta: float, s0: ReducedState, T: float, dt: float = 0.01) -> ReducedTrajectory:
    """Classical RK4 on (alpha, sigma); sigma is returned unwrapped."""
    if dt > 0.01:
        raise ValueError("integrate_reduced requires dt <= 0.01")
    n = int(np.ceil(T / dt - 1e-9))
    times = np.arange(n + 1) * dt
    A = np.empty(n + 1)
    S = np.empty(n + 1)
    a, s = s0.alpha, s0.sigma
    A[0], S[0] = a, s

    def f(a):
        if a < 0:  # the pair (-a, s) is the point (a, s + pi)
            da, ds = _rhs(rd, theta, -a)
            return -da, ds
        return _rhs(rd, theta, a)

    for k in range(n):
        k1a, k1s = f(a)
        k2a, k2s = f(a + 0.5 * dt * k1a)
        k3a, k3s = f(a + 0.5 * dt * k2a)
        k4a, k4s = f(a + dt * k3a)
        a += dt * (k1a + 2 * k2a + 2 * k3a + k4a) / 6.0
        s += dt * (k1s + 2 * k2s + 2 * k3s + k4s) / 6.0
        if a < 0:
            a, s = -a, s + np.pi
        A[k + 1], S[k + 1] = a, s
    return ReducedTrajectory(times, A, S)


# ---------------------------------------------------------------------------
# Limit measures on the polar grid
# ---------------------------------------------------------------------------


def _log_gamma_2d(rd: RadialDensity, grid: PolarGrid) -> np.ndarray:
    return np.broadcast_to(-2.0 * rd.V_radial(grid.rho_nodes)[:, None], grid.shape)


def limit_measure(rd: RadialDensity, v, alpha1: float, grid: PolarGrid) -> GridMeasure2D:
    """exp(alpha1 (x, v)) gamma(dx) / Z1 on the grid."""
    v = np.asarray(v, dtype=float)
    v = v / np.hypot(*v)
    psi = np.arctan2(v[1], v[0])
    tilt = alpha1 * np.outer(grid.rho_nodes, np.cos(grid.angle_nodes - psi))
    meas, _ = GridMeasure2D.from_log_density(grid, _log_gamma_2d(rd, grid) + tilt)
    return meas


def unit(sigma: float) -> np.ndarray:
    return np.array([np.cos(sigma), np.sin(sigma)])


def periodic_orbit_measure(
    rd: RadialDensity,
    theta: float,
    alpha1: float,
    delta: float,
    grid: PolarGrid,
    literal: bool = False,
    n_quad: int = 96,
) -> GridMeasure2D:
    """Point nu(delta) of the limit cycle, delta = phase of its mean.

    On the cycle the mean is (alpha1/2) v(sigma) with sigma' = tan(theta)
    and Pi(mu) is the tilt exp(-alpha1 (x, R v(sigma))) gamma, i.e. a
    limit measure in direction v(sigma + theta + pi).  nu is the
    exponentially weighted average of these tilts over one period P:

        nu(delta) = (e^P - 1)^-1 int_0^P e^u Pi_{delta + u tan(theta)} du.

    ``literal=True`` freezes the direction at v(delta) instead.
    """
    if _is_pi(theta) or abs(np.sin(theta)) < 1e-12:
        raise ValueError("periodic orbit needs tan(theta) != 0 and theta != pi")
    omega = np.tan(theta)
    period = 2.0 * np.pi / abs(omega)
    if period > 200:
        raise ValueError(f"period {period:.3g} too long (theta too close to 0 or pi)")
    if literal:
        return limit_measure(rd, unit(delta), alpha1, grid)
    xi, wi = np.polynomial.legendre.leggauss(n_quad)
    u = 0.5 * period * (xi + 1.0)
    # log of e^u / (e^P - 1) with the quadrature weight
    lw = np.log(0.5 * period * wi) + u - (period + np.log1p(-np.exp(-period)))
    logg = _log_gamma_2d(rd, grid)
    log_terms = []
    for uk, lwk in zip(u, lw):
        psi = delta + uk * omega + theta + np.pi
        tilt = alpha1 * np.outer(grid.rho_nodes, np.cos(grid.angle_nodes - psi))
        lg = logg + tilt
        log_terms.append(lwk + lg - logsumexp(lg + grid.log_quad_weights))
    dens = np.exp(logsumexp(np.stack(log_terms), axis=0))
    return GridMeasure2D(grid, dens / np.sum(dens * grid.quad_weights))


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def symmetry_integrals(rd: RadialDensity, y, phi: Callable, grid: PolarGrid) -> tuple[float, np.ndarray]:
    """I1 = int [phi((x,y)) - phi((x,p))] dgamma and
    I2 = int phi((x,y)) (x - (x,y) y) dgamma, p = (1, 0)."""
    y = np.asarray(y, dtype=float)
    y = y / np.hypot(*y)
    gmeas, _ = GridMeasure2D.from_log_density(grid, _log_gamma_2d(rd, grid))
    w = gmeas.masses
    X = grid.points
    xy = X @ y
    xp = X[..., 0]
    I1 = float(np.sum((phi(xy) - phi(xp)) * w))
    perp = X - xy[..., None] * y
    I2 = np.tensordot(phi(xy) * w, perp, axes=([0, 1], [0, 1]))
    return I1, I2


def j_third_derivative(rd: RadialDensity, theta: float, alpha: float, h: float = 1e-2) -> float:
    """Five-point stencil for J''' with one Richardson step (J is odd in alpha,
    so the stencil may straddle 0)."""

    def D(hh):
        J = lambda a: J_alpha(rd, theta, a)
        return (J(alpha + 2 * hh) - 2 * J(alpha + hh) + 2 * J(alpha - hh) - J(alpha - 2 * hh)) / (2 * hh**3)

    return (4.0 * D(h / 2) - D(h)) / 3.0


def j_prime(rd: RadialDensity, theta: float, alpha: float, h: float = 1e-4) -> float:
    return (J_alpha(rd, theta, alpha + h) - J_alpha(rd, theta, alpha - h)) / (2 * h)


@dataclass
class KurtosisReport:
    alphas: np.ndarray
    third_derivatives: np.ndarray
    passed: bool


def kurtosis_sign_check(rd: RadialDensity, alpha_samples, theta: float = np.pi, h: float = 1e-2) -> KurtosisReport:
    """PASS when J''' < 1e-6 at every sample."""
    a = np.asarray(alpha_samples, dtype=float)
    vals = np.array([j_third_derivative(rd, theta, x, h) for x in a])
    return KurtosisReport(a, vals, bool(np.all(vals < 1e-6)))


def phase_diagram(rd: RadialDensity, thetas) -> list[dict]:
    rows = []
    for th in thetas:
        reg = classify_regime(rd, th)
        rows.append(
            dict(
                theta=float(th),
                m2=rd.m2,
                cos_theta_m2=float(np.cos(th) * rd.m2),
                regime=reg.label,
                alpha1=reg.alpha1,
                T_theta=reg.T_theta,
            )
        )
    return rows


def j_curve(rd: RadialDensity, theta: float, alphas) -> list[dict]:
    return [
        dict(alpha=float(a), J=J_alpha(rd, theta, a), Jprime_fd=j_prime(rd, theta, a)) for a in alphas
    ]
