"""idlalab: a Monte Carlo laboratory for internal DLA on Z^d."""

from .estimate import FitResult, McEstimate, chi_square_homogeneity, survival_domination, wilson_ci
from .flashing import (
    BoundParams,
    DenseParams,
    FlashingPlan,
    FlashingTrace,
    crossing_mc,
    dense_sites,
    fit_bound,
    run_flashing,
    sample_flash_radius,
)
from .idla import Cluster, ExplorerConfig, OrderingPolicy, abelian_test, build_cluster, covers_origin, fluctuation_run
from .lattice import BallSpec, SiteSet, ball_sites, boundary_sites, shell_sites
from .oracle import AbsorbingInstance, exact_cluster_distribution, exact_race_probability
from .shells import (
    CloudParams,
    ShellProcessTrace,
    WidthScheme,
    crossers_domination_test,
    gamma_from_bounds,
    i_star,
    poisson_tail_bound,
    run_cloud_experiment,
    width_sequence_stats,
    zeta_config,
)
from .walk import RaceOutcome, SeedSpec, WalkState, race, step

__version__ = "0.1.0"
