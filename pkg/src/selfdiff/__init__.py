"""Self-interacting diffusions with a confinement potential V and an
interaction W: Gibbs map, measure semiflow, Euler-Maruyama simulation and
the planar rotation example."""

__version__ = "0.1.0"

from .gibbs import (
    DominationError,
    EnergyIncreaseError,
    convolve_interaction,
    d_free_energy,
    d_pi,
    fixed_point_iterate,
    free_energy,
    lyapunov_energy,
    pi_map,
    spectral_gap_1d,
)
from .measures import (
    FunctionDictionary,
    GridMeasure2D,
    ParticleMeasure,
    PolarGrid,
    default_dictionary,
    occupation_update,
    tightness_check,
    v_norm,
    weak_distance,
)
from .potentials import (
    CustomConfinement,
    CustomInteraction,
    LinearRotation,
    NoInteraction,
    QuarticRadial,
    SymmetricDot,
    check_hypotheses,
)
from .rotation2d import (
    RadialDensity,
    ReducedState,
    alpha1_root,
    classify_regime,
    default_grid,
    integrate_reduced,
    limit_measure,
    periodic_orbit_measure,
)
from .sde import (
    ExplosionError,
    SdeConfig,
    pseudotrajectory_deficit,
    simulate_frozen,
    simulate_self_interacting,
    time_change,
    time_change_inverse,
)
from .semiflow import flow_step, hull_contraction_check, integrate_flow, picard_local
