"""Normalized nonnegative models for interpretable collaborative filtering."""

from .data import (FoldSplit, RatingDataset, TagIndex, load_ratings, load_tags,
                   split_folds, subsample_users)
from .evaluation import (MetricReport, cross_validate, curve_vs_dimension,
                         curve_vs_iteration, mae, rmse)
from .interpret import (HierarchyGraph, StereotypeProfile, TagVector, export_dot,
                        hierarchy_edges, stereotype_item_lists, stereotype_profiles,
                        tag_vector)
from .model import (InvariantViolation, NnmModel, UnknownIdError, like_vector,
                    measurement_bundle, simplex_vector, star_rating)
from .online import AnchorSet, fold_in_item, fold_in_user, select_anchors
from .solver import (DegenerateProblemError, FitConfig, FitReport, SubproblemLS,
                     fit, objective, project_simplex, sample_negatives,
                     solve_box_ls, solve_simplex_ls)

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "DegenerateProblemError", "FitConfig", "FitReport", "FoldSplit",
    "HierarchyGraph", "InvariantViolation", "MetricReport", "NnmModel",
    "RatingDataset", "StereotypeProfile", "SubproblemLS", "TagIndex", "TagVector",
    "UnknownIdError", "cross_validate", "curve_vs_dimension", "curve_vs_iteration",
    "export_dot", "fit", "fold_in_item", "fold_in_user", "hierarchy_edges",
    "like_vector", "load_ratings", "load_tags", "mae", "measurement_bundle",
    "objective", "project_simplex", "rmse", "sample_negatives", "select_anchors",
    "simplex_vector", "solve_box_ls", "solve_simplex_ls", "split_folds",
    "star_rating", "stereotype_item_lists", "stereotype_profiles", "subsample_users",
    "tag_vector",
]
