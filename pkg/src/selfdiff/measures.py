"""Particle and polar-grid measures, the dual V-norm and the weak metric."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .potentials import ConfinementPotential, QuarticRadial

MASS_TOL = 1e-12
GRID_NORM_TOL = 1e-8


# ---------------------------------------------------------------------------
# Particle measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParticleMeasure:
    """Weighted point cloud sum_i w_i delta_{x_i}.

    Probability measures are validated on construction; pass ``signed=True``
    for differences of measures.
    """

    points: np.ndarray
    weights: np.ndarray
    signed: bool = False

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not self.signed:
            if np.any(w < 0):
                raise ValueError("negative weight in a probability measure")
            if abs(w.sum() - 1.0) > MASS_TOL:
                raise ValueError(f"weights sum to {w.sum():.17g}, not 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def dirac(cls, x) -> "ParticleMeasure":
        return cls(np.atleast_2d(np.asarray(x, dtype=float)), np.ones(1))

    @classmethod
    def uniform(cls, points) -> "ParticleMeasure":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    def mass(self) -> float:
        return math.fsum(self.weights)  # correctly rounded: n equal weights 1/n give 1.0

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def integrate(self, f: Callable) -> float:
        return float(self.weights @ np.asarray(f(self.points), dtype=float))

    def v_mass(self, V: ConfinementPotential) -> float:
        return float(np.abs(self.weights) @ V.value(self.points))

    def __sub__(self, other: "ParticleMeasure") -> "ParticleMeasure":
        return ParticleMeasure(
            np.vstack([self.points, other.points]),
            np.concatenate([self.weights, -other.weights]),
            signed=True,
        )


def occupation_weight(t: float, dt: float, r: float) -> float:
    """Weight given to the new atom over the step [t, t + dt].

    (r + t) mu_t + dt delta_x = (r + t + dt) mu_{t+dt}: the exact solution of
    d mu = (delta_x - mu) ds / (r + s) with x frozen over the step.
    """
    return dt / (r + t + dt)


def occupation_update(mu: ParticleMeasure, x, t: float, dt: float, r: float) -> ParticleMeasure:
    """(1 - lam) mu + lam delta_x with lam = dt / (r + t + dt)."""
    if dt < 0 or r <= 0:
        raise ValueError("need dt >= 0 and r > 0")
    if dt == 0:
        return mu
    lam = occupation_weight(t, dt, r)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    w = np.append((1.0 - lam) * mu.weights, lam)
    w /= w.sum()
    return ParticleMeasure(np.vstack([mu.points, x]), w)


def systematic_indices(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    u = (rng.uniform() + np.arange(n)) / n
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(weights) - 1)


def thin(mu: ParticleMeasure, n_max: int, rng: np.random.Generator) -> ParticleMeasure:
    """Systematic resampling down to ``n_max`` equal-weight atoms."""
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    if mu.n_atoms <= n_max:
        return mu
    idx = systematic_indices(mu.weights, n_max, rng)
    return ParticleMeasure(mu.points[idx], np.full(n_max, 1.0 / n_max))


# ---------------------------------------------------------------------------
# Polar grid
# ---------------------------------------------------------------------------


def tail_radius(V: ConfinementPotential, tol: float = 1e-12, dim: int = 2, tilt: float = 0.0) -> float:
    """Radius beyond which gamma = exp(-2V)/Z carries mass < ``tol``.

    V is probed along the first axis, so this assumes radial V.  A positive
    ``tilt`` covers the exponentially tilted measures exp(tilt (x, v)) gamma.
    """

    def log_profile(rho):
        pts = np.zeros((rho.size, dim))
        pts[:, 0] = rho
        with np.errstate(divide="ignore"):
            return (dim - 1) * np.log(rho) - 2.0 * V.value(pts) + tilt * rho

    rho_hi = 1.0
    ref = np.max(log_profile(np.linspace(1e-6, 1.0, 256)))
    while log_profile(np.array([rho_hi]))[0] - ref > np.log(tol) - 60.0:
        rho_hi *= 1.5
        ref = max(ref, np.max(log_profile(np.linspace(1e-6, rho_hi, 256))))
        if rho_hi > 1e6:
            raise ValueError("confinement too weak: no finite tail radius")
    rho = np.linspace(0.0, rho_hi, 20001)[1:]
    lp = log_profile(rho)
    p = np.exp(lp - lp.max())
    cell = 0.5 * (p[1:] + p[:-1])
    tail = np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])
    tail /= tail[0]
    return float(rho[np.argmax(tail < tol)])


@dataclass(eq=False)
class PolarGrid:
    """Tensor grid: Gauss-Legendre radii x uniform angles.

    ``quad_weights`` already contain the polar Jacobian rho and the
    angular step, so sum(f * density * quad_weights) integrates f against
    a density taken with respect to Lebesgue measure dx.
    """

    rho_nodes: np.ndarray
    angle_nodes: np.ndarray
    quad_weights: np.ndarray
    rho_max: float
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def gauss_legendre(cls, rho_max: float, n_rho: int = 200, n_angle: int = 256) -> "PolarGrid":
        xi, wi = np.polynomial.legendre.leggauss(n_rho)
        rho = 0.5 * rho_max * (xi + 1.0)
        w_rho = 0.5 * rho_max * wi
        angles = 2.0 * np.pi * np.arange(n_angle) / n_angle
        qw = np.outer(w_rho * rho, np.full(n_angle, 2.0 * np.pi / n_angle))
        return cls(rho, angles, qw, float(rho_max))

    @classmethod
    def for_potential(
        cls, V: ConfinementPotential, n_rho: int = 200, n_angle: int = 256, tol: float = 1e-12, tilt: float = 0.0
    ):
        return cls.gauss_legendre(tail_radius(V, tol, tilt=tilt), n_rho, n_angle)

    @property
    def shape(self) -> tuple[int, int]:
        return self.quad_weights.shape

    @cached_property
    def points(self) -> np.ndarray:
        r, a = np.meshgrid(self.rho_nodes, self.angle_nodes, indexing="ij")
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=-1)

    @cached_property
    def log_quad_weights(self) -> np.ndarray:
        return np.log(self.quad_weights)

    def values(self, fn: Callable) -> np.ndarray:
        """fn evaluated at every node, shape ``self.shape``."""
        return np.asarray(fn(self.points), dtype=float)

    def potential_values(self, V: ConfinementPotential) -> np.ndarray:
        key = ("V", V)
        try:
            return self._cache[key]
        except (KeyError, TypeError):
            vals = self.values(V.value)
            try:
                self._cache[key] = vals
            except TypeError:
                pass
            return vals

    def cell_index(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Histogram cell of each point: rings between GL midpoints, angular
        sectors centred on the angle nodes.  Points beyond rho_max fall into
        the outer ring."""
        pts = np.atleast_2d(points)
        rho = np.hypot(pts[:, 0], pts[:, 1])
        edges = 0.5 * (self.rho_nodes[1:] + self.rho_nodes[:-1])
        i = np.searchsorted(edges, rho)
        n_angle = self.angle_nodes.size
        ang = np.arctan2(pts[:, 1], pts[:, 0])
        j = np.rint(ang / (2.0 * np.pi / n_angle)).astype(int) % n_angle
        return i, j


@dataclass(frozen=True, eq=False)
class GridMeasure2D:
    """Density (w.r.t. dx) sampled on a :class:`PolarGrid`.

    Signed densities are allowed (tangent vectors, differences); producers
    of probability measures call :meth:`check_probability`.
    """

    grid: PolarGrid
    density: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float)
        if d.shape != self.grid.shape:
            raise ValueError(f"density shape {d.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "density", d)

    @classmethod
    def from_log_density(cls, grid: PolarGrid, log_density: np.ndarray) -> tuple["GridMeasure2D", float]:
        """Normalize exp(log_density) with a max shift; returns the measure
        and log of the unnormalized integral."""
        log_z = float(logsumexp(log_density + grid.log_quad_weights))
        return cls(grid, np.exp(log_density - log_z)), log_z

    @classmethod
    def from_particles(cls, mu: ParticleMeasure, grid: PolarGrid) -> "GridMeasure2D":
        """Histogram binning (no smoothing) of a particle cloud."""
        i, j = grid.cell_index(mu.points)
        mass = np.zeros(grid.shape)
        np.add.at(mass, (i, j), mu.weights)
        return cls(grid, mass / grid.quad_weights)

    @classmethod
    def dirac_like(cls, grid: PolarGrid, i: int, j: int) -> "GridMeasure2D":
        d = np.zeros(grid.shape)
        d[i, j] = 1.0 / grid.quad_weights[i, j]
        return cls(grid, d)

    # field aliases
    @property
    def rho_nodes(self):
        return self.grid.rho_nodes

    @property
    def angle_nodes(self):
        return self.grid.angle_nodes

    @property
    def quad_weights(self):
        return self.grid.quad_weights

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.grid.quad_weights

    def mass(self) -> float:
        return float(np.sum(self.masses))

    def mean(self) -> np.ndarray:
        m = self.masses
        return np.tensordot(m, self.grid.points, axes=([0, 1], [0, 1]))

    def integrate(self, f) -> float:
        vals = self.grid.values(f) if callable(f) else np.asarray(f, dtype=float)
        return float(np.sum(vals * self.masses))

    def v_mass(self, V: ConfinementPotential) -> float:
        return float(np.sum(self.grid.potential_values(V) * np.abs(self.masses)))

    def check_probability(self, tol: float = GRID_NORM_TOL) -> "GridMeasure2D":
        if np.any(self.density < 0):
            raise ValueError("negative density in a probability measure")
        if abs(self.mass() - 1.0) > tol:
            raise ValueError(f"grid measure has mass {self.mass():.12g}")
        return self

    def _same_grid(self, other):
        if other.grid is not self.grid:
            raise ValueError("measures live on different grids")

    def __add__(self, other: "GridMeasure2D") -> "GridMeasure2D":
        self._same_grid(other)
        return GridMeasure2D(self.grid, self.density + other.density)

    def __sub__(self, other: "GridMeasure2D") -> "GridMeasure2D":
        self._same_grid(other)
        return GridMeasure2D(self.grid, self.density - other.density)

    def __mul__(self, s: float) -> "GridMeasure2D":
        return GridMeasure2D(self.grid, s * self.density)

    __rmul__ = __mul__

    def __neg__(self):
        return GridMeasure2D(self.grid, -self.density)


Measure = ParticleMeasure | GridMeasure2D


def v_norm(mu: Measure, V: ConfinementPotential) -> float:
    """int V d|mu|; for a signed measure this is the dual V-norm."""
    return mu.v_mass(V)


def grid_integrate(mu: GridMeasure2D, f) -> float:
    return mu.integrate(f)


def mix(measures: Sequence[GridMeasure2D], coeffs: Sequence[float]) -> GridMeasure2D:
    grid = measures[0].grid
    d = np.zeros(grid.shape)
    for m, c in zip(measures, coeffs):
        d += c * m.density
    return GridMeasure2D(grid, d)


# ---------------------------------------------------------------------------
# Weak metric
# ---------------------------------------------------------------------------


class _Bump:
    """exp(-(rho - c)^2 / 2 s^2) * Re or Im (z / L)^n, rescaled by ``scale``."""

    def __init__(self, center, width, order, part, length, scale=1.0):
        self.center, self.width, self.order = center, width, order
        self.part, self.length, self.scale = part, length, scale

    def raw(self, x):
        x = np.asarray(x, dtype=float)
        rho = np.hypot(x[..., 0], x[..., 1])
        radial = np.exp(-0.5 * ((rho - self.center) / self.width) ** 2)
        if self.order == 0:
            return radial
        z = (x[..., 0] + 1j * x[..., 1]) / self.length
        zn = z**self.order
        return radial * (zn.real if self.part == "re" else zn.imag)

    def __call__(self, x):
        return self.scale * self.raw(x)

    def __repr__(self):
        return f"bump(c={self.center:.3g}, s={self.width:.3g}, n={self.order}, {self.part})"


@dataclass
class FunctionDictionary:
    """Finite list of test functions f_k with weights (default 2^-k)."""

    functions: list
    weights: np.ndarray = None

    def __post_init__(self):
        if not self.functions:
            raise ValueError("empty dictionary")
        if self.weights is None:
            self.weights = 2.0 ** -np.arange(1, len(self.functions) + 1)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.functions),):
            raise ValueError("one weight per function required")

    def __len__(self):
        return len(self.functions)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Matrix of shape points.shape[:-1] + (K,)."""
        return np.stack([np.asarray(f(points), dtype=float) for f in self.functions], axis=-1)

    def moments(self, mu: Measure) -> np.ndarray:
        if isinstance(mu, GridMeasure2D):
            key = ("dict", id(self))
            cache = mu.grid._cache
            if key not in cache or cache[key][0] is not self:
                cache[key] = (self, self.evaluate(mu.grid.points))
            F = cache[key][1]
            return np.tensordot(mu.masses, F, axes=([0, 1], [0, 1]))
        return mu.weights @ self.evaluate(mu.points)

    def reordered(self, perm) -> "FunctionDictionary":
        perm = list(perm)
        return FunctionDictionary([self.functions[i] for i in perm], self.weights[perm])

    def max_ratio(self, V: ConfinementPotential, points: np.ndarray) -> float:
        """max_k max_x |f_k(x)| / V(x) over ``points``."""
        F = np.abs(self.evaluate(points))
        return float(np.max(F / V.value(points)[..., None]))


def default_dictionary(V: ConfinementPotential, size: int = 32, length: float | None = None) -> FunctionDictionary:
    """Radial Gaussian bumps times angular harmonics Re/Im z^n, each scaled so
    that sup |f_k| / V <= 1.

    Ordered isotropic bumps first, then increasing angular order, so the
    2^-k weights favour low-order structure.
    """
    if length is None:
        length = tail_radius(V, 1e-3)
    centers = np.linspace(0.0, length, 4)
    width = length / 3.0
    parts = [(0, "re")] + [(n, p) for n in range(1, 8) for p in ("re", "im")]
    raw = [_Bump(c, width, n, p, length) for n, p in parts for c in centers][:size]
    if len(raw) < size:
        raise ValueError(f"dictionary size {size} exceeds {len(raw)} available functions")

    # sup over a dense polar sample; the angular factor is maximised at
    # angle 0 (Re) or pi/(2n) (Im).
    rho = np.linspace(0.0, 4.0 * length, 8001)
    funcs = []
    for f in raw:
        ang = 0.0 if (f.order == 0 or f.part == "re") else np.pi / (2 * f.order)
        angles = ang + np.linspace(0.0, 2.0 * np.pi, 65)[:-1]
        pts = np.stack(
            [rho[:, None] * np.cos(angles)[None, :], rho[:, None] * np.sin(angles)[None, :]], axis=-1
        )
        sup = np.max(np.abs(f.raw(pts)) / V.value(pts))
        f.scale = 0.99 / sup
        funcs.append(f)
    return FunctionDictionary(funcs)


def weak_distance(mu: Measure, nu: Measure, dictionary: FunctionDictionary) -> float:
    """sum_k w_k |mu(f_k) - nu(f_k)| over the dictionary."""
    gap = dictionary.moments(mu) - dictionary.moments(nu)
    return float(dictionary.weights @ np.abs(gap))


# ---------------------------------------------------------------------------
# Tightness
# ---------------------------------------------------------------------------


@dataclass
class TightnessReport:
    beta_estimate: float
    in_P_beta: list[bool]
    v_masses: list[float]
    beta: float


def tightness_check(
    traj: Sequence[Measure], V: ConfinementPotential, beta: float | None = None, burn_in: int = 0
) -> TightnessReport:
    """Flag each checkpoint by int V dmu_t <= beta.

    With ``beta=None`` the threshold is the supremum over the checkpoints
    after ``burn_in``.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    masses = [v_norm(m, V) for m in traj]
    sup = float(max(masses[burn_in:] or masses))
    b = sup if beta is None else float(beta)
    return TightnessReport(sup, [m <= b for m in masses], masses, b)


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def write_particle_csv(path, mu: ParticleMeasure) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(mu.dim)] + ["weight"])
        for p, wt in zip(mu.points, mu.weights):
            w.writerow([_fmt(v) for v in p] + [_fmt(wt)])
    return path


def read_particle_csv(path, signed: bool = False) -> ParticleMeasure:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ParticleMeasure(data[:, :-1], data[:, -1], signed=signed)


def write_grid_csv(path, mu: GridMeasure2D, header: dict | None = None) -> Path:
    """Columns rho, angle, density, quad_weight (row-major over the grid).

    ``header`` entries are written as ``# key=value`` lines first.
    """
    path = Path(path)
    g = mu.grid
    with path.open("w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={_fmt(v) if isinstance(v, (float, np.floating)) else v}\n")
        fh.write(f"# rho_max={_fmt(g.rho_max)}\n")
        w = csv.writer(fh)
        w.writerow(["rho", "angle", "density", "quad_weight"])
        for i, r in enumerate(g.rho_nodes):
            for j, a in enumerate(g.angle_nodes):
                w.writerow([_fmt(r), _fmt(a), _fmt(mu.density[i, j]), _fmt(g.quad_weights[i, j])])
    return path


def read_grid_csv(path) -> tuple[GridMeasure2D, dict]:
    header = {}
    with open(path) as fh:
        lines = fh.readlines()
    body_start = 0
    for k, line in enumerate(lines):
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            header[key] = val
        else:
            body_start = k
            break
    rows = np.array(
        [[float(v) for v in ln.split(",")] for ln in lines[body_start + 1 :] if ln.strip()]
    )
    rho = np.unique(rows[:, 0])
    ang = np.unique(rows[:, 1])
    shape = (rho.size, ang.size)
    grid = PolarGrid(rho, ang, rows[:, 3].reshape(shape), float(header.get("rho_max", rho[-1])))
    mu = GridMeasure2D(grid, rows[:, 2].reshape(shape))
    return mu, header
