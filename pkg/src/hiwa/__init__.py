"""Hierarchical Wasserstein alignment of clustered point clouds."""
from .datagen import GenSpec, GroundTruth, generate
from .diagnostics import alignment_error, correspondence_error
from .manifold import consensus_align, random_orthogonal, stiefel_align
from .solver import AlignmentResult, SolverConfig, solve
from .transport import Coupling, SinkhornParams, build_pair_cost, sinkhorn

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult",
    "Coupling",
    "GenSpec",
    "GroundTruth",
    "SinkhornParams",
    "SolverConfig",
    "alignment_error",
    "build_pair_cost",
    "consensus_align",
    "correspondence_error",
    "generate",
    "random_orthogonal",
    "sinkhorn",
    "solve",
    "stiefel_align",
]
