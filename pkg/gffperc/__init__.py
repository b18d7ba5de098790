"""Level-set percolation laboratory for the zero-average Gaussian free field on random regular graphs."""
from .config import __version__
from .errors import (AssumptionError, BracketError, CheckFailed, GenerationError, GeometryError, GffPercError,
                     GraphFormatError, UnsupportedStructureError)
from .graph import RegularGraph, ScaleConstants, audit_assumptions, generate_random_regular, load_graph, save_graph
from .tree import TreeBall, sample_tree_gff, simulate_cluster_levels, tree_green
from .zagff import GraphField, GreenOperator, build_green, conditional_law, sample_zagff, sample_zagff_batch
from .percolation import level_components, mesoscopic_census
from .exploration import explore_component, good_vertex_test
from .coupling import couple_local, deviation_tail
from .estimators import check_exp_moment_fixed_point, estimate_eta_plus, estimate_h_star, estimate_lambda

__all__ = [
    "__version__",
    "GffPercError",
    "GraphFormatError",
    "GenerationError",
    "AssumptionError",
    "UnsupportedStructureError",
    "GeometryError",
    "BracketError",
    "CheckFailed",
    "RegularGraph",
    "ScaleConstants",
    "audit_assumptions",
    "generate_random_regular",
    "load_graph",
    "save_graph",
    "TreeBall",
    "sample_tree_gff",
    "simulate_cluster_levels",
    "tree_green",
    "GraphField",
    "GreenOperator",
    "build_green",
    "conditional_law",
    "sample_zagff",
    "sample_zagff_batch",
    "level_components",
    "mesoscopic_census",
    "explore_component",
    "good_vertex_test",
    "couple_local",
    "deviation_tail",
    "check_exp_moment_fixed_point",
    "estimate_eta_plus",
    "estimate_h_star",
    "estimate_lambda",
]
