"""Boundary Weighted K-means with instrumented baselines."""

from .algorithm import (
    BwkmConfig,
    MisassignmentReport,
    StopRule,
    bwkm,
    cutting_probabilities,
    epsilon_w,
    initial_partition,
    misassignment,
    refine,
    starting_partition,
    weighted_bound,
    well_assigned_check,
)
from .baselines import grid_partition, grid_rpkm, kmpp_init, lloyd_full, minibatch
from .bench import ExperimentConfig, relative_error, run_experiment, synthesize_mixture
from .geometry import Block, PartitionState, bounding_box, induce_cells, split_block
from .lloyd import (
    AssignmentCache,
    DistanceLedger,
    LloydStop,
    WeightedSet,
    assign,
    squared_distance,
    update,
    weighted_error,
    weighted_lloyd,
)
from .oracles import brute_force_optimum, exact_error
from .records import TrialRecord
from .seeding import forgy, kmc2, kmeanspp, make_rng

__version__ = "0.1.0"
