"""Confinement and interaction potentials.

Points are arrays whose last axis is the spatial dimension; every evaluator
broadcasts over the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def rotation_matrix(theta: float) -> np.ndarray:
    """Counter-clockwise rotation of the plane by ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# Confinement
# ---------------------------------------------------------------------------


class ConfinementPotential:
    """Base class: V(x) with gradient and Hessian evaluators."""

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.value(x)


@dataclass(frozen=True)
class QuarticRadial(ConfinementPotential):
    """V(x) = a|x|^4 + b|x|^2 + c."""

    a: float = 1.0
    b: float = 0.0
    c: float = 1.0

    def radial(self, rho):
        r2 = np.asarray(rho, dtype=float) ** 2
        return self.a * r2 * r2 + self.b * r2 + self.c

    def radial_derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        return 4.0 * self.a * rho**3 + 2.0 * self.b * rho

    def value(self, x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        return self.a * r2 * r2 + self.b * r2 + self.c

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        return (4.0 * self.a * r2 + 2.0 * self.b) * x

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        r2 = np.sum(x * x, axis=-1)[..., None, None]
        eye = np.eye(d)
        outer = x[..., :, None] * x[..., None, :]
        return (4.0 * self.a * r2 + 2.0 * self.b) * eye + 8.0 * self.a * outer


@dataclass(frozen=True)
class CustomConfinement(ConfinementPotential):
    """User-supplied V; ``hess_fn`` may be omitted (finite differences)."""

    value_fn: Callable
    grad_fn: Callable
    hess_fn: Callable | None = None
    name: str = "custom"

    def value(self, x):
        return np.asarray(self.value_fn(np.asarray(x, dtype=float)), dtype=float)

    def grad(self, x):
        return np.asarray(self.grad_fn(np.asarray(x, dtype=float)), dtype=float)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        if self.hess_fn is not None:
            return np.asarray(self.hess_fn(x), dtype=float)
        return _fd_jacobian(self.grad, x)


def _fd_jacobian(fn, x, h=1e-5):
    d = x.shape[-1]
    cols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        cols.append((fn(x + e) - fn(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# Interaction
# ---------------------------------------------------------------------------


class InteractionPotential:
    """Base class for W(x, y).

    ``symmetric`` marks W(x, y) = W(y, x); the free-energy machinery only
    accepts symmetric kernels.
    """

    symmetric: bool = False
    #: W(x, y) = (x, M y) for a constant matrix M, or None.
    matrix: np.ndarray | None = None

    def value(self, x, y):
        raise NotImplementedError

    def grad_x(self, x, y):
        raise NotImplementedError

    def hess_xx(self, x, y):
        raise NotImplementedError

    def __call__(self, x, y):
        return self.value(x, y)

    @property
    def is_linear(self) -> bool:
        return self.matrix is not None


class _Bilinear(InteractionPotential):
    def value(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.matrix, y)

    def grad_x(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        y = np.broadcast_to(y, np.broadcast_shapes(x.shape, y.shape))
        return y @ self.matrix.T

    def hess_xx(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape, y.shape)[:-1]
        d = x.shape[-1]
        return np.zeros(shape + (d, d))


@dataclass(frozen=True, eq=False)
class LinearRotation(_Bilinear):
    """W(x, y) = (x, R(theta) y) in the plane."""

    theta: float = np.pi

    @property
    def matrix(self):
        return rotation_matrix(self.theta)

    @property
    def symmetric(self):
        return bool(abs(np.sin(self.theta)) < 1e-15)


@dataclass(frozen=True, eq=False)
class SymmetricDot(_Bilinear):
    """W(x, y) = -(x, y)."""

    dim: int = 2
    symmetric = True

    @property
    def matrix(self):
        return -np.eye(self.dim)


@dataclass(frozen=True, eq=False)
class NoInteraction(_Bilinear):
    """W = 0."""

    dim: int = 2
    symmetric = True

    @property
    def matrix(self):
        return np.zeros((self.dim, self.dim))


@dataclass(frozen=True, eq=False)
class CustomInteraction(InteractionPotential):
    """Arbitrary kernel W(x, y); gradient/Hessian default to finite differences."""

    kernel: Callable
    grad_fn: Callable | None = None
    hess_fn: Callable | None = None
    symmetric: bool = False
    name: str = "custom"
    matrix: None = field(default=None, init=False)

    def value(self, x, y):
        return np.asarray(self.kernel(np.asarray(x, float), np.asarray(y, float)), dtype=float)

    def grad_x(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.grad_fn is not None:
            return np.asarray(self.grad_fn(x, y), dtype=float)
        x, y = np.broadcast_arrays(x, y)
        return _fd_jacobian(lambda z: self.value(z, y)[..., None], x)[..., 0, :]

    def hess_xx(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.hess_fn is not None:
            return np.asarray(self.hess_fn(x, y), dtype=float)
        x, y = np.broadcast_arrays(x, y)
        return _fd_jacobian(lambda z: self.grad_x(z, y), x)


def gauge(w: InteractionPotential, phi: Callable) -> CustomInteraction:
    """Return W(x, y) + phi(y).

    The gradient in x is W's own, so drifts and Gibbs maps are unchanged.
    """
    return CustomInteraction(
        kernel=lambda x, y: w.value(x, y) + np.asarray(phi(y), dtype=float),
        grad_fn=w.grad_x,
        hess_fn=w.hess_xx,
        symmetric=False,
        name=f"gauged({type(w).__name__})",
    )


def eval_potential(p: ConfinementPotential, x):
    return p.value(x)


def eval_interaction(w: InteractionPotential, x, y):
    return w.value(x, y)


# ---------------------------------------------------------------------------
# Hypothesis checks
# ---------------------------------------------------------------------------


@dataclass
class HypothesisCheck:
    name: str
    worst: float
    passed: bool
    detail: str = ""


@dataclass
class HypothesisReport:
    checks: list[HypothesisCheck]
    kappa: float
    delta: float
    convexity_K: float
    curvature_alpha: float
    curvature_M: float

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def rows(self):
        return [(c.name, c.worst, c.passed, c.detail) for c in self.checks]


def _quadratic_gauge(V: ConfinementPotential, W: InteractionPotential):
    """Nonnegative representative of a bilinear W used by the checks.

    (x, My) >= -|M||x||y| >= -|M|(s|x|^2 + |y|^2/s)/2, so adding that bound
    makes W nonnegative.  s = b for QuarticRadial with b > 0, else 1.
    """
    if not W.is_linear:
        return W
    M = W.matrix
    norm = float(np.linalg.norm(M, 2))
    if norm == 0.0:
        return W
    s = V.b if isinstance(V, QuarticRadial) and V.b > 0 else 1.0

    def kernel(x, y):
        return W.value(x, y) + 0.5 * norm * (s * np.sum(x * x, -1) + np.sum(y * y, -1) / s)

    def grad(x, y):
        return W.grad_x(x, y) + norm * s * np.asarray(x, float)

    def hess(x, y):
        x = np.asarray(x, float)
        shape = np.broadcast_shapes(x.shape, np.shape(y))[:-1]
        d = x.shape[-1]
        return np.broadcast_to(norm * s * np.eye(d), shape + (d, d))

    return CustomInteraction(kernel, grad, hess, symmetric=W.symmetric, name="gauged")


def check_hypotheses(
    V: ConfinementPotential,
    W: InteractionPotential,
    box: float = 3.0,
    n: int = 400,
    tol: float = 1e-8,
    dim: int = 2,
    seed: int = 0,
    kappa_max: float = 1e3,
    growth_margin: float = 0.05,
) -> HypothesisReport:
    """Sample-based check of the standing assumptions on ``[-box, box]^dim``.

    Never raises on a failed hypothesis; each one gets a verdict and the
    worst sampled ratio.  Bilinear interactions are checked after the
    quadratic gauge of :func:`_quadratic_gauge`.
    """
    if n < 100:
        raise ValueError("check_hypotheses needs n >= 100 samples")
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-box, box, size=(n, dim))
    ys = rng.uniform(-box, box, size=(n, dim))
    Wg = _quadratic_gauge(V, W)
    checks = []

    # (i) positivity
    vmin = float(np.min(V.value(xs)))
    wmin = float(np.min(Wg.value(xs, ys)))
    checks.append(
        HypothesisCheck(
            "positivity",
            min(vmin - 1.0, wmin),
            vmin >= 1.0 - tol and wmin >= -tol,
            f"min V={vmin:.6g}, min W(gauged)={wmin:.6g}",
        )
    )

    # (ii) convexity: smallest Hessian eigenvalue
    eig = np.linalg.eigvalsh(V.hess(xs))[:, 0]
    K = float(np.min(eig))
    uniform = K > tol
    checks.append(
        HypothesisCheck(
            "convexity",
            K,
            K >= -tol,
            "uniformly convex" if uniform else "convex, not uniformly (K=0 at sampled points)",
        )
    )

    # (iii) growth: fit delta from the log-log slope of (grad V(x), x) on the
    # outer half of the box, plus the Lipschitz-type bound on grad V.
    radii = np.linspace(box / 2, box, 64)
    dirs = rng.normal(size=(16, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = radii[:, None, None] * dirs[None, :, :]
    gx = np.sum(V.grad(pts) * pts, axis=-1)
    delta = float("nan")
    if np.all(gx > 0):
        slope = np.polyfit(np.log(radii), np.log(np.min(gx, axis=1)), 1)[0]
        delta = slope / 2.0
    gdiff = np.linalg.norm(V.grad(xs) - V.grad(ys), axis=-1)
    denom = np.minimum(np.linalg.norm(xs - ys, axis=-1), 1.0) * (V.value(xs) + V.value(ys))
    C = float(np.max(gdiff / denom))
    growth_ok = np.isfinite(delta) and delta > 1.0 + growth_margin and np.isfinite(C)
    checks.append(
        HypothesisCheck("growth", delta, bool(growth_ok), f"fitted delta={delta:.4g}, C={C:.4g}")
    )

    # (iv) domination
    hx = Wg.hess_xx(xs, ys)
    num = (
        np.abs(Wg.value(xs, ys))
        + np.linalg.norm(Wg.grad_x(xs, ys), axis=-1)
        + np.linalg.norm(hx, ord=2, axis=(-2, -1))
    )
    kappa = max(1.0, float(np.max(num / (V.value(xs) + V.value(ys)))))
    checks.append(
        HypothesisCheck(
            "domination", kappa, bool(np.isfinite(kappa) and kappa <= kappa_max), f"kappa={kappa:.4g}"
        )
    )

    # (v) curvature: ratio at the box boundary and Hessian lower bound
    xb = dirs * box
    yb = rng.uniform(-box, box, size=(xb.shape[0], dim))
    ratio = np.sum(xb * Wg.grad_x(xb, yb), -1) / np.sum(xb * V.grad(xb), -1)
    alpha = float(np.min(ratio))
    Mlow = float(np.min(np.linalg.eigvalsh(V.hess(xs) + hx)[:, 0]))
    checks.append(
        HypothesisCheck(
            "curvature",
            alpha,
            bool(alpha > -1.0 and np.isfinite(Mlow)),
            f"ratio at |x|={box} in [{alpha:.4g}, {float(np.max(ratio)):.4g}], M={Mlow:.4g}",
        )
    )
    return HypothesisReport(checks, kappa, delta, K, alpha, Mlow)
