"""Command-line runner: ``selfdiff <subcommand> --config FILE --out DIR``.

Exit status 0 on success, 2 on invalid configuration or input, 3 when a
numerical guard aborts the run (explosion, energy increase, domination).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, build_grid, build_interaction, build_potential, load_config
from .gibbs import DominationError, EnergyIncreaseError, gamma_measure
from .measures import GridMeasure2D, ParticleMeasure, default_dictionary, weak_distance, write_grid_csv
from .plotting import PLOT_KINDS, PlotError, plot
from .potentials import LinearRotation, SymmetricDot, check_hypotheses
from .rotation2d import (
    RadialDensity,
    ReducedState,
    classify_regime,
    integrate_reduced,
    j_curve,
    kurtosis_sign_check,
    limit_measure,
    periodic_orbit_measure,
    phase_diagram,
    symmetry_integrals,
)
from .sde import ExplosionError, SdeConfig, simulate_frozen, simulate_self_interacting
from .semiflow import integrate_flow

log = logging.getLogger("selfdiff")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


class _Writer:
    """Single writer for every output file; records hashes for the manifest."""

    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def table(self, name: str, header, rows) -> Path:
        path = self.out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        return self.add(path)

    def add(self, path) -> Path:
        self.files.append(Path(path))
        return Path(path)

    def manifest(self, cfg: ExperimentConfig | None, extra: dict) -> Path:
        files = {}
        for p in sorted(set(self.files)):
            files[str(p.relative_to(self.out))] = hashlib.sha256(p.read_bytes()).hexdigest()
        doc = {"version": __version__, "files": files, **extra}
        if cfg is not None:
            doc["kind"] = cfg.kind
            doc["config"] = cfg.echo()
        path = self.out / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def _theta_of(W) -> float:
    if isinstance(W, LinearRotation):
        return float(W.theta)
    if isinstance(W, SymmetricDot):
        return float(np.pi)
    raise ConfigError(["analyze2d needs interaction.kind = rotation or symmetric_dot"])


def _threads(args, cfg) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("SELFDIFF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError([f"SELFDIFF_THREADS must be an integer, got {env!r}"]) from None
    return int(cfg["run"]["threads"]) if cfg is not None else 1


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

_TEST_FUNCTIONS = {
    "one": lambda u: np.ones_like(u),
    "identity": lambda u: u,
    "exp_minus": lambda u: np.exp(-u),
    "cos": np.cos,
    "square": lambda u: u * u,
}
_DIRECTIONS_DEG = (0.0, 37.0, 90.0)


def run_check(cfg, wr: _Writer, threads: int):
    V, W = build_potential(cfg), build_interaction(cfg)
    rep = check_hypotheses(V, W, seed=cfg.seed)
    wr.table("hypotheses.csv", ["name", "worst", "passed", "detail"], rep.rows())
    grid = build_grid(cfg, V)
    rd = RadialDensity.matching_grid(V, grid, jacobian=cfg["grid"]["jacobian"])
    rows = []
    for name, phi in _TEST_FUNCTIONS.items():
        for deg in _DIRECTIONS_DEG:
            y = np.array([np.cos(np.radians(deg)), np.sin(np.radians(deg))])
            I1, I2 = symmetry_integrals(rd, y, phi, grid)
            rows.append((name, deg, I1, float(np.linalg.norm(I2))))
    wr.table("symmetry.csv", ["test_function", "direction_deg", "I1", "I2_norm"], rows)
    for c in rep.checks:
        log.info("%-11s %s  %s", c.name, "PASS" if c.passed else "FAIL", c.detail)


def _sde_config(cfg, seed) -> SdeConfig:
    s = cfg["sde"]
    return SdeConfig(
        x0=tuple(s["x0"]),
        r=s["r"],
        dt=s["dt"],
        T=s["T"],
        seed=seed,
        thin_max=s["thin_max"],
        checkpoint_stride=s["checkpoint_stride"],
        record_stride=s["record_stride"],
    )


def run_simulate(cfg, wr: _Writer, threads: int):
    V, W = build_potential(cfg), build_interaction(cfg)
    seeds = [cfg.seed + k for k in range(cfg["sde"]["replicas"])]
    cfgs = [_sde_config(cfg, s).validate(V, W) for s in seeds]
    frozen = cfg["sde"]["frozen"]

    def one(c):
        if frozen:
            return simulate_frozen(V, W, ParticleMeasure.dirac(c.x0), c)
        return simulate_self_interacting(V, W, c)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            paths = list(ex.map(one, cfgs))
    else:
        paths = [one(c) for c in cfgs]

    grid = build_grid(cfg, V)
    gamma = gamma_measure(V, grid)
    D = default_dictionary(V)
    summary = []
    for seed, p in zip(seeds, paths):
        wr.add(p.write_csv(wr.out / f"path_seed{seed}.csv"))
        if cfg["sde"]["snapshots"] and not frozen:
            for f in p.write_snapshots(wr.out / f"snapshots_seed{seed}"):
                wr.add(f)
        wd = float("nan") if frozen else weak_distance(p.occupation_at(p.T), gamma, D)
        summary.append((seed, p.T, *p.means[-1], p.int_v[-1], wd))
    wr.table("summary.csv", ["seed", "T", "mean_1", "mean_2", "intV_mu", "weak_distance_to_gamma"], summary)


def _initial_measure(cfg, V, grid) -> GridMeasure2D:
    f = cfg["flow"]
    c = np.asarray(f["init_center"])
    X = grid.points
    logd = -2.0 * V.value(X) - np.sum((X - c) ** 2, axis=-1) / (2.0 * f["init_width"] ** 2)
    return GridMeasure2D.from_log_density(grid, logd)[0]


def run_flow(cfg, wr: _Writer, threads: int):
    V, W = build_potential(cfg), build_interaction(cfg)
    f = cfg["flow"]
    grid = build_grid(cfg, V)
    mu0 = _initial_measure(cfg, V, grid)
    traj = integrate_flow(V, W, mu0, f["T"], f["dt"], stride=f["stride"], scheme=f["scheme"])
    wr.add(traj.write_csv(wr.out / "trajectory.csv"))
    if f["snapshots"]:
        for p in traj.write_snapshots(wr.out / "flow_snapshots"):
            wr.add(p)


def run_analyze2d(cfg, wr: _Writer, threads: int):
    V, W = build_potential(cfg), build_interaction(cfg)
    theta = _theta_of(W)
    a = cfg["analysis"]
    g = cfg["grid"]
    grid = build_grid(cfg, V)
    rd = RadialDensity.from_potential(V, g["n_rho"], g["n_angle"], jacobian=g["jacobian"])
    reg = classify_regime(rd, theta)
    wr.table(
        "regime.csv",
        ["theta", "m2", "regime", "alpha1", "T_theta", "degenerate"],
        [(theta, rd.m2, reg.label, reg.alpha1, reg.T_theta, reg.degenerate)],
    )
    alphas = np.linspace(0.0, a["alpha_max"], a["n_alpha"])
    wr.table("j_curve.csv", ["alpha", "J", "Jprime_fd"], [tuple(r.values()) for r in j_curve(rd, theta, alphas)])
    red = integrate_reduced(rd, theta, ReducedState(a["alpha0"], a["sigma0"]), a["T"], a["dt"])
    m = red.means
    wr.table(
        "reduced.csv",
        ["t", "alpha", "sigma", "mean_x", "mean_y"],
        zip(red.times, red.alpha, red.sigma, m[:, 0], m[:, 1]),
    )
    kr = kurtosis_sign_check(rd, [0.0, 0.5, 1.0, 2.0], theta=theta)
    wr.table("kurtosis.csv", ["alpha", "J3"], zip(kr.alphas, kr.third_derivatives))
    if reg.kind == "fixed":
        meas = limit_measure(rd, [1.0, 0.0], reg.alpha1, grid)
        wr.add(write_grid_csv(wr.out / "limit_measure.csv", meas, {"alpha1": reg.alpha1}))
    elif reg.kind == "circling":
        meas = periodic_orbit_measure(rd, theta, reg.alpha1, 0.0, grid)
        wr.add(write_grid_csv(wr.out / "orbit_measure.csv", meas, {"alpha1": reg.alpha1, "delta": 0.0}))
    log.info("regime %s (cos(theta) m2 = %.6g)", reg.label, np.cos(theta) * rd.m2)


def run_phase_diagram(cfg, wr: _Writer, threads: int):
    V = build_potential(cfg)
    g = cfg["grid"]
    rd = RadialDensity.from_potential(V, g["n_rho"], g["n_angle"], jacobian=g["jacobian"])
    n = cfg["analysis"]["n_theta"]
    thetas = 2.0 * np.pi * np.arange(n) / n
    if threads > 1:
        chunks = np.array_split(thetas, threads)
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = [r for part in ex.map(lambda th: phase_diagram(rd, th), chunks) for r in part]
    else:
        rows = phase_diagram(rd, thetas)
    cols = ["theta", "m2", "cos_theta_m2", "regime", "alpha1", "T_theta"]
    wr.table("phase_diagram.csv", cols, [[r[c] for c in cols] for r in rows])


_RUNNERS = {
    "check": run_check,
    "simulate": run_simulate,
    "flow": run_flow,
    "analyze2d": run_analyze2d,
    "phase-diagram": run_phase_diagram,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="selfdiff", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI experiment file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="overrides run.seed")
        p.add_argument("--threads", type=int, help="worker threads (else SELFDIFF_THREADS, else run.threads)")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("plot")
    p.add_argument("kind", choices=PLOT_KINDS)
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        if args.command == "plot":
            wr = _Writer(out)
            wr.add(plot(args.csv, args.kind, out / f"{args.kind}.svg"))
            wr.manifest(None, {"kind": "plot", "inputs": [Path(c).name for c in args.csv]})
            return EXIT_OK
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            cfg.blocks["run"]["seed"] = args.seed
        threads = _threads(args, cfg)
        wr = _Writer(out)
        _RUNNERS[args.command](cfg, wr, threads)
        wr.manifest(cfg, {})
    except (ExplosionError, EnergyIncreaseError, DominationError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, PlotError, ValueError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
