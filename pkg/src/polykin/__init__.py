"""Kinetic toolkit for mixtures of monatomic and polyatomic gases."""

__version__ = "0.1.0"

from .model import (
    DistributionField,
    Grid,
    GridSpec,
    Mixture,
    PhasePoint,
    Species,
    default_gridspec,
    invariant_moments,
    maxwellian_eval,
    mixture,
    weight_eval,
)
from .bl import BLParams, CollisionChannel, channel, collision_measure, kernel_B, post_collision

__all__ = [
    "BLParams",
    "CollisionChannel",
    "DistributionField",
    "Grid",
    "GridSpec",
    "Mixture",
    "PhasePoint",
    "Species",
    "channel",
    "collision_measure",
    "default_gridspec",
    "invariant_moments",
    "kernel_B",
    "maxwellian_eval",
    "mixture",
    "post_collision",
    "weight_eval",
]
