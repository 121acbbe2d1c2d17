"""Equality-of-effort auditing and repair for tabular decision data."""

from .curves import LevelSpec, OutcomeCurve, Subgroup, make_subgroups
from .dataset import Dataset, Schema, from_frame, load_csv, partition, similar_subset
from .effort import (
    DEFAULT_GAMMAS,
    DEFAULT_TAU,
    AuditReport,
    EffortAuditor,
    EffortProfile,
    aed_continuous,
    aed_discrete,
    detect,
    effort_discrepancy,
    min_effort,
    render_table,
)
from .exceptions import EqualEffortError
from .propensity import WeightingBackend, fit_gps
from .regress import OutcomeModel, RegressionBackend, fit_ols
from .removal import (
    EqualEffortRepairer,
    FairModelPair,
    fit_fair,
    model_aed,
    regenerate,
    utility_loss,
    verify_repair,
)
from .scm import CausalGraph, ScmBackend, fit_cpts, load_graph, parse_graph, post_intervention

__version__ = "0.1.0"

__all__ = [
    "AuditReport", "CausalGraph", "DEFAULT_GAMMAS", "DEFAULT_TAU", "Dataset", "EffortAuditor",
    "EffortProfile", "EqualEffortError", "EqualEffortRepairer", "FairModelPair", "LevelSpec",
    "OutcomeCurve", "OutcomeModel", "RegressionBackend", "Schema", "ScmBackend", "Subgroup",
    "WeightingBackend", "aed_continuous", "aed_discrete", "detect", "effort_discrepancy",
    "fit_cpts", "fit_fair", "fit_gps", "fit_ols", "from_frame", "load_csv", "load_graph",
    "make_subgroups", "min_effort", "model_aed", "parse_graph", "partition",
    "post_intervention", "regenerate", "render_table", "similar_subset", "utility_loss",
    "verify_repair",
]
