"""Multiscale flatness coefficients for discrete measures."""

__version__ = "0.1.0"

from .coefficients import AlphaResult, BetaResult, FitConfig, ZeroMassBall, alpha, alpha_tilde, beta
from .flat import BLResult, FlatMeasure, SolverError, bl_distance, flat_measure, w1_distance
from .generators import (
    ConstraintError,
    CounterexampleSpec,
    LineFamily,
    counterexample,
    default_parameters,
    flat_sample,
    koch_polylines,
    koch_variant,
    lipschitz_graph,
)
from .geometry import AffinePlane, besicovitch_subcover, local_hausdorff, plane_angle, project, separated_net
from .measure import Ball, DiscreteMeasure, MeasureFormatError, density_ratio, read_measure, write_measure
from .multiscale import (
    AlphaCache,
    ClassifyThresholds,
    RadiusGrid,
    StopThresholds,
    classify,
    profile,
    stopping_time,
)

__all__ = [name for name in dir() if not name.startswith("_")]
