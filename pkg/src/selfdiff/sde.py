"""Euler-Maruyama simulation of the frozen and the self-interacting diffusion.

The self-interacting process solves

    dX_t = dB_t - (grad V(X_t) + grad_x W*mu_t(X_t)) dt
    mu_t = (r mu_0 + int_0^t delta_{X_s} ds) / (r + t)

For a quartic radial V with a bilinear W the whole run happens inside a
compiled kernel that carries the exact running mean of mu_t; every other
combination goes through a NumPy loop over a thinned particle cloud.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .measures import (
    FunctionDictionary,
    GridMeasure2D,
    ParticleMeasure,
    PolarGrid,
    tail_radius,
    thin,
    weak_distance,
    write_particle_csv,
)
from .potentials import ConfinementPotential, InteractionPotential, QuarticRadial

log = logging.getLogger(__name__)

_NOISE_CHUNK = 1 << 16


class ExplosionError(ArithmeticError):
    """The path left the ball of radius 10 rho_max."""


@dataclass(frozen=True)
class SdeConfig:
    """Run parameters.  ``record_stride`` thins the stored path (positions
    and running moments), ``checkpoint_stride`` sets the snapshot spacing."""

    x0: tuple = (0.0, 0.0)
    r: float = 1.0
    dt: float = 1e-3
    T: float = 1.0
    seed: int = 0
    thin_max: int = 4096
    checkpoint_stride: int = 1000
    record_stride: int = 10
    replica: int = 0

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def validate(self, V: ConfinementPotential, W: InteractionPotential | None = None) -> "SdeConfig":
        if not self.r > 0:
            raise ValueError(f"sde.r must be positive, got {self.r}")
        if not self.dt > 0:
            raise ValueError(f"sde.dt must be positive, got {self.dt}")
        if not self.T > 0:
            raise ValueError(f"sde.T must be positive, got {self.T}")
        if self.thin_max < 2:
            raise ValueError("sde.thin_max must be >= 2")
        if self.record_stride < 1 or self.checkpoint_stride < 1:
            raise ValueError("sde.record_stride and sde.checkpoint_stride must be >= 1")
        scale = drift_scale(V, W, self.x0)
        if self.dt > 1e-2 / scale * (1 + 1e-12):
            raise ValueError(f"sde.dt = {self.dt} exceeds 1e-2 / drift scale = {1e-2 / scale:.3g}")
        return self


def drift_scale(V: ConfinementPotential, W: InteractionPotential | None, x0) -> float:
    """max(1, ||Hess V(x0)|| + ||grad_x grad_x W(x0, x0)|| + ||M||)."""
    x0 = np.asarray(x0, dtype=float)
    s = float(np.linalg.norm(V.hess(x0), 2))
    if W is not None:
        if W.is_linear:
            s += float(np.linalg.norm(W.matrix, 2))
        else:
            s += float(np.linalg.norm(W.hess_xx(x0, x0), 2))
    return max(1.0, s)


def noise_stream(seed: int, replica: int = 0) -> np.random.Generator:
    """Independent stream per (seed, replica)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(replica)]))


# ---------------------------------------------------------------------------
# Time change
# ---------------------------------------------------------------------------


def time_change(t, r: float = 1.0):
    """h(t) = r (e^t - 1)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time_change needs t >= 0")
    out = r * np.expm1(t)
    return float(out) if out.ndim == 0 else out


def time_change_inverse(s, r: float = 1.0):
    """log(1 + s / r)."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("time_change_inverse needs s >= 0")
    out = np.log1p(s / r)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Path container
# ---------------------------------------------------------------------------


@dataclass
class SdePath:
    """Recorded path.

    ``times[k]`` = k * record_stride * dt; ``means`` and ``int_v`` are the
    exact running mean of mu_t and int V dmu_t at those times (for a frozen
    run they hold the fixed measure's values).
    """

    cfg: SdeConfig
    times: np.ndarray
    positions: np.ndarray
    means: np.ndarray
    int_v: np.ndarray
    mu0: ParticleMeasure
    frozen: bool = False
    n_done: int = 0

    @property
    def T(self) -> float:
        return self.n_done * self.cfg.dt

    def occupation_at(self, t: float, thin_max: int | None = None, seed: int = 0) -> ParticleMeasure:
        """mu_t assembled from the recorded positions.

        Each recorded X_{js} stands for the steps js .. js + s - 1, so the
        atom weights are exact and only the positions are subsampled.
        With ``thin_max`` the cloud is resampled down systematically.
        """
        if self.frozen:
            raise ValueError("a frozen run has no occupation measure")
        cfg = self.cfg
        n = int(round(t / cfg.dt))
        if n < 0 or n > self.n_done:
            raise ValueError(f"t = {t} outside the recorded path [0, {self.T}]")
        s = cfg.record_stride
        k = (n + s - 1) // s
        starts = np.arange(k) * s
        w = cfg.dt * np.minimum(s, n - starts)
        pts = np.concatenate([self.mu0.points, self.positions[:k]])
        wts = np.concatenate([cfg.r * self.mu0.weights, w]) / (cfg.r + n * cfg.dt)
        mu = ParticleMeasure(pts, wts / wts.sum())
        if thin_max is not None and mu.n_atoms > thin_max:
            mu = thin(mu, thin_max, noise_stream(seed, 1 << 20))
        return mu

    def snapshots(self) -> list[tuple[float, ParticleMeasure]]:
        """(t, mu_t) every checkpoint_stride steps, thinned to thin_max."""
        cfg = self.cfg
        out = []
        for n in range(0, self.n_done + 1, cfg.checkpoint_stride):
            t = n * cfg.dt
            out.append((t, self.occupation_at(t, cfg.thin_max, seed=cfg.seed)))
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        d = self.positions.shape[1]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + [f"meanmu_{i + 1}" for i in range(d)] + ["intV_mu"])
            for k in range(self.times.size):
                vals = [self.times[k], *self.positions[k], *self.means[k], self.int_v[k]]
                w.writerow([f"{v:.17g}" for v in vals])
        return path

    def write_snapshots(self, directory, prefix: str = "mu") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        return [write_particle_csv(directory / f"{prefix}_{k:05d}.csv", m) for k, (t, m) in enumerate(self.snapshots())]

    def unwrapped_mean_angle(self) -> np.ndarray:
        return np.unwrap(np.arctan2(self.means[:, 1], self.means[:, 0]))


# ---------------------------------------------------------------------------
# Compiled kernel: quartic radial V, bilinear W
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _linear_kernel(state, n0, n_steps, dt, r, a, b, c, M, z, stride, rec_x, rec_m, rec_v, rec_k, guard2, frozen):
    """Advance ``state`` = (x1, x2, mean1, mean2, intV) by n_steps steps
    starting at global step n0.  Returns -1, or the step index at which
    the explosion guard was crossed."""
    x0, x1, m0, m1, iv = state[0], state[1], state[2], state[3], state[4]
    sq = np.sqrt(dt)
    k = rec_k[0]
    for i in range(n_steps):
        n = n0 + i
        if n % stride == 0:
            rec_x[k, 0] = x0
            rec_x[k, 1] = x1
            rec_m[k, 0] = m0
            rec_m[k, 1] = m1
            rec_v[k] = iv
            k += 1
        rr = x0 * x0 + x1 * x1
        g = 4.0 * a * rr + 2.0 * b
        d0 = -(g * x0 + M[0, 0] * m0 + M[0, 1] * m1)
        d1 = -(g * x1 + M[1, 0] * m0 + M[1, 1] * m1)
        if not frozen:
            lam = dt / (r + (n + 1) * dt)
            m0 = (1.0 - lam) * m0 + lam * x0
            m1 = (1.0 - lam) * m1 + lam * x1
            iv = (1.0 - lam) * iv + lam * (a * rr * rr + b * rr + c)
        x0 = x0 + d0 * dt + sq * z[i, 0]
        x1 = x1 + d1 * dt + sq * z[i, 1]
        if x0 * x0 + x1 * x1 > guard2:
            state[0], state[1], state[2], state[3], state[4] = x0, x1, m0, m1, iv
            rec_k[0] = k
            return n + 1
    state[0], state[1], state[2], state[3], state[4] = x0, x1, m0, m1, iv
    rec_k[0] = k
    return -1


def _explosion(n, dt, guard):
    return ExplosionError(f"|X| exceeded the guard {guard:.4g} at step {n} (t = {n * dt:.6g})")


def _run_compiled(V: QuarticRadial, M, cfg: SdeConfig, mean0, intv0, frozen) -> tuple:
    n = cfg.n_steps
    s = cfg.record_stride
    n_rec = n // s + 1
    rec_x = np.empty((n_rec, 2))
    rec_m = np.empty((n_rec, 2))
    rec_v = np.empty(n_rec)
    rec_k = np.zeros(1, dtype=np.int64)
    state = np.array([*np.asarray(cfg.x0, float), *mean0, intv0], dtype=float)
    guard = 10.0 * tail_radius(V)
    rng = noise_stream(cfg.seed, cfg.replica)
    M = np.ascontiguousarray(M, dtype=float)
    done = 0
    while done < n:
        m = min(_NOISE_CHUNK, n - done)
        z = rng.standard_normal((m, 2))
        hit = _linear_kernel(
            state, done, m, cfg.dt, cfg.r, V.a, V.b, V.c, M, z, s, rec_x, rec_m, rec_v, rec_k, guard**2, frozen
        )
        if hit >= 0:
            raise _explosion(hit, cfg.dt, guard)
        done += m
    if n % s == 0:
        k = rec_k[0]
        rec_x[k], rec_m[k], rec_v[k] = state[:2], state[2:4], state[4]
        rec_k[0] += 1
    k = rec_k[0]
    return rec_x[:k], rec_m[:k], rec_v[:k]


# ---------------------------------------------------------------------------
# Generic path: particle cloud
# ---------------------------------------------------------------------------


def _run_generic(V, W, cfg: SdeConfig, mu0: ParticleMeasure, frozen: bool) -> tuple:
    n = cfg.n_steps
    s = cfg.record_stride
    d = mu0.dim
    x = np.asarray(cfg.x0, dtype=float).copy()
    guard = 10.0 * tail_radius(V, dim=d)
    rng = noise_stream(cfg.seed, cfg.replica)
    thin_rng = noise_stream(cfg.seed, cfg.replica + (1 << 20))
    cap = 2 * cfg.thin_max
    pts = np.empty((cap + mu0.n_atoms, d))
    wts = np.empty(cap + mu0.n_atoms)
    na = mu0.n_atoms
    pts[:na], wts[:na] = mu0.points, mu0.weights
    mean = mu0.mean()
    iv = mu0.v_mass(V)
    rec_x, rec_m, rec_v = [], [], []
    sq = np.sqrt(cfg.dt)
    linear = W.is_linear
    z = None
    for i in range(n):
        if i % _NOISE_CHUNK == 0:
            z = rng.standard_normal((min(_NOISE_CHUNK, n - i), d))
        if i % s == 0:
            rec_x.append(x.copy())
            rec_m.append(mean.copy())
            rec_v.append(iv)
        if linear:
            gw = W.matrix @ mean
        else:
            g = W.grad_x(x[None, :], pts[:na])
            gw = wts[:na] @ g
        drift = -(V.grad(x) + gw)
        if not frozen:
            lam = cfg.dt / (cfg.r + (i + 1) * cfg.dt)
            mean = (1.0 - lam) * mean + lam * x
            iv = (1.0 - lam) * iv + lam * float(V.value(x))
            wts[:na] *= 1.0 - lam
            pts[na], wts[na] = x, lam
            na += 1
            if na >= cap:
                cloud = thin(ParticleMeasure(pts[:na], wts[:na] / wts[:na].sum()), cfg.thin_max, thin_rng)
                na = cloud.n_atoms
                pts[:na], wts[:na] = cloud.points, cloud.weights
        x = x + drift * cfg.dt + sq * z[i % _NOISE_CHUNK]
        if float(x @ x) > guard**2:
            raise _explosion(i + 1, cfg.dt, guard)
    if n % s == 0:
        rec_x.append(x.copy())
        rec_m.append(mean.copy())
        rec_v.append(iv)
    return np.array(rec_x), np.array(rec_m), np.array(rec_v)


def _compiled_ok(V, W, d) -> bool:
    return isinstance(V, QuarticRadial) and W.is_linear and d == 2


def _make_path(cfg, rec, mu0, frozen) -> SdePath:
    rx, rm, rv = rec
    times = np.arange(rx.shape[0]) * cfg.record_stride * cfg.dt
    return SdePath(cfg, times, rx, rm, rv, mu0, frozen, cfg.n_steps)


def simulate_frozen(V: ConfinementPotential, W: InteractionPotential, mu: ParticleMeasure, cfg: SdeConfig) -> SdePath:
    """X^mu with the measure in the drift held at ``mu``."""
    cfg.validate(V, W)
    if _compiled_ok(V, W, mu.dim):
        rec = _run_compiled(V, W.matrix, cfg, mu.mean(), mu.v_mass(V), True)
    else:
        rec = _run_generic(V, W, cfg, mu, True)
    return _make_path(cfg, rec, mu, True)


def simulate_self_interacting(
    V: ConfinementPotential, W: InteractionPotential, cfg: SdeConfig, mu0: ParticleMeasure | None = None
) -> SdePath:
    """(X_t, mu_t) with mu_0 = ``mu0`` (default delta at x0) of weight r."""
    cfg.validate(V, W)
    if mu0 is None:
        mu0 = ParticleMeasure.dirac(cfg.x0)
    if _compiled_ok(V, W, mu0.dim):
        rec = _run_compiled(V, W.matrix, cfg, mu0.mean(), mu0.v_mass(V), False)
    else:
        rec = _run_generic(V, W, cfg, mu0, False)
    return _make_path(cfg, rec, mu0, False)


def run_ensemble(fn: Callable[[SdeConfig], SdePath], cfg: SdeConfig, seeds: Sequence[int], threads: int = 1) -> list:
    """fn(cfg with seed) for every seed; paths share no state, so they run
    in a thread pool (the compiled kernel releases the GIL)."""
    cfgs = [replace(cfg, seed=int(s)) for s in seeds]
    if threads <= 1:
        return [fn(c) for c in cfgs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, cfgs))


# ---------------------------------------------------------------------------
# Averages and diagnostics
# ---------------------------------------------------------------------------


@dataclass
class ErgodicEstimate:
    value: float
    stderr: float
    n_batches: int


def ergodic_average(path: SdePath, f: Callable, burn_in: float = 0.0, n_batches: int = 50) -> ErgodicEstimate:
    """Time average of f(X_s) over the recorded path, with a batch-means
    standard error."""
    keep = path.times >= burn_in
    vals = np.asarray(f(path.positions[keep]), dtype=float)
    if vals.size < 2 * n_batches:
        raise ValueError("path too short for the requested number of batches")
    m = vals.size // n_batches
    batches = vals[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return ErgodicEstimate(float(vals.mean()), float(batches.std(ddof=1) / np.sqrt(n_batches)), n_batches)


@dataclass
class DeficitReport:
    t_list: list
    deficits: np.ndarray
    T_window: float


def pseudotrajectory_deficit(
    path: SdePath,
    V: ConfinementPotential,
    W: InteractionPotential,
    t_list: Sequence[float],
    T_window: float,
    dictionary: FunctionDictionary,
    grid: PolarGrid,
    dt_flow: float = 0.01,
    compare_every: int = 5,
    scheme: str = "etd3",
) -> DeficitReport:
    """sup over s <= T_window of weak_distance(mu_{h(t+s)}, Phi_s(mu_{h(t)})).

    Both sides are histogrammed onto ``grid`` so that s = 0 compares a
    measure with itself.  With a finite dictionary this is a lower bound on
    the deficit in the full weak metric.
    """
    from .semiflow import integrate_flow

    r = path.cfg.r
    need = time_change(max(t_list) + T_window, r)
    if need > path.T + 1e-12:
        raise ValueError(f"path of length {path.T:.4g} too short: need h(t + T_window) = {need:.4g}")
    out = []
    for t in t_list:
        start = GridMeasure2D.from_particles(path.occupation_at(time_change(t, r)), grid)
        if T_window == 0:
            out.append(0.0)
            continue
        traj = integrate_flow(V, W, start, T_window, dt_flow, stride=compare_every, scheme=scheme)
        worst = 0.0
        for s, state in zip(traj.state_times, traj.states):
            n_path = min(path.n_done * path.cfg.dt, time_change(t + s, r))
            target = GridMeasure2D.from_particles(path.occupation_at(n_path), grid)
            worst = max(worst, weak_distance(target, state, dictionary))
        out.append(worst)
    return DeficitReport(list(t_list), np.array(out), T_window)
