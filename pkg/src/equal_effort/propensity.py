"""Generalized propensity score weighting backend.

A multinomial logit gives r(t, x) = P(T = t | X = x). The expected outcome
that records at level t would have had at level t' is estimated from the
records actually at t', reweighted by omega_i(t, t') = r(t, x_i) / r(t', x_i)
so their covariates look like those of the level-t records.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .curves import OutcomeCurve
from .dataset import partition
from .exceptions import EmptyCellError, MissingLevelError
from .regress import GlmFit, fit_glm

DEFAULT_WEIGHT_QUANTILE = 0.99


@dataclass(frozen=True)
class GpsModel:
    glm: GlmFit
    levels: tuple
    weight_quantile: float = DEFAULT_WEIGHT_QUANTILE

    def level_index(self, t):
        try:
            return self.levels.index(int(t))
        except ValueError:
            raise ValueError(f"treatment level {t} not in {self.levels}") from None

    def probabilities(self, x):
        """Matrix of r(t, x_i); column k is level ``levels[k]``."""
        return self.glm.predict_proba(np.asarray(x, dtype=float).reshape(len(x), -1))

    def weights(self, x, t, t_prime):
        """Uncapped omega(t, t') for each row of ``x``."""
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        if int(t) == int(t_prime):
            return np.ones(len(x))
        logp = self.glm.predict_log_proba(x)
        return np.exp(logp[:, self.level_index(t)] - logp[:, self.level_index(t_prime)])


def fit_gps(d, weight_quantile=DEFAULT_WEIGHT_QUANTILE, **glm_kw):
    """Fit r(t, x) on a dataset; every treatment level must occur at least twice."""
    levels = d.schema.treatment_levels
    counts = np.array([(d.t == lv).sum() for lv in levels])
    if (counts < 2).any():
        short = [lv for lv, c in zip(levels, counts) if c < 2]
        raise MissingLevelError(f"treatment levels with fewer than 2 records: {short}")
    labels = np.searchsorted(np.asarray(levels), d.t)
    glm = fit_glm(d.x.astype(float), labels, len(levels), **glm_kw)
    return GpsModel(glm, tuple(levels), weight_quantile)


def weight(m, x_i, t, t_prime, cap=None):
    """omega_i(t, t') for one covariate vector; exactly 1 when t == t'."""
    if int(t) == int(t_prime):
        return 1.0
    w = float(m.weights(np.atleast_2d(np.asarray(x_i, dtype=float)), t, t_prime)[0])
    return w if cap is None else min(w, cap)


def cap_weights(w, quantile):
    """Winsorize at the given quantile of the cell's own weights."""
    if quantile is None or len(w) == 0:
        return w
    return np.minimum(w, np.quantile(w, quantile))


def weighted_mean(y, w):
    return float(np.dot(y, w) / np.sum(w))


def effective_sample_size(w):
    return float(np.sum(w) ** 2 / np.sum(w ** 2))


def counterfactual_expectation(view, m, t, t_prime, return_ess=False):
    """Estimate E[Y(t') | T = t] from the records of ``view`` at level t'."""
    cell = view.t == int(t_prime)
    if not cell.any():
        raise EmptyCellError(f"no records at treatment level {t_prime}")
    y = view.y[cell].astype(float)
    if int(t) == int(t_prime):
        w = np.ones(cell.sum())
    else:
        w = cap_weights(m.weights(view.x[cell], t, t_prime), m.weight_quantile)
    est = weighted_mean(y, w)
    return (est, effective_sample_size(w)) if return_ess else est


@dataclass
class CounterfactualTable:
    """Entry ``values[i, j]`` estimates E[Y(levels[j]) | T = levels[i]]."""

    levels: tuple
    values: np.ndarray
    ess: np.ndarray
    counts: np.ndarray

    @property
    def available(self):
        return ~np.isnan(self.values)

    def to_csv(self):
        buf = io.StringIO()
        buf.write("t," + ",".join(f"t'={lv}" for lv in self.levels) + "\n")
        for lv, row in zip(self.levels, self.values):
            cells = ["" if np.isnan(v) else f"{v:.6f}" for v in row]
            buf.write(f"{lv}," + ",".join(cells) + "\n")
        return buf.getvalue()


def build_table(view, m):
    levels = m.levels
    L = len(levels)
    values = np.full((L, L), np.nan)
    ess = np.zeros((L, L))
    counts = np.array([(view.t == lv).sum() for lv in levels])
    for j, tp in enumerate(levels):
        if counts[j] == 0:
            continue
        for i, t in enumerate(levels):
            values[i, j], ess[i, j] = counterfactual_expectation(view, m, t, tp, return_ess=True)
    return CounterfactualTable(tuple(levels), values, ess, np.tile(counts, (L, 1)))


class WeightingBackend(BaseEstimator):
    """Generalized-propensity-score estimates of subgroup potential outcomes.

    For a subgroup whose current treatment distribution is P(T = t | D*),
    the curve at t' is sum_t P(T = t | D*) * E[Y(t') | T = t], with the
    inner estimates taken over the subgroup's reference records.

    Parameters
    ----------
    weight_quantile : float, default=0.99
        Per-cell winsorization quantile for the weights; ``None`` disables it.
    pooled_system : bool, default=True
        Use one propensity model fitted on all records for system-level
        curves; group and individual curves always use the per-side model.
    """

    name = "weighting"

    def __init__(self, weight_quantile=DEFAULT_WEIGHT_QUANTILE, pooled_system=True):
        self.weight_quantile = weight_quantile
        self.pooled_system = pooled_system

    def fit(self, d, y=None):
        plus, minus = partition(d)
        self.gps_pooled_ = fit_gps(d, self.weight_quantile)
        self.gps_ = {1: fit_gps(plus, self.weight_quantile), 0: fit_gps(minus, self.weight_quantile)}
        self.levels_ = np.asarray(d.schema.treatment_levels)
        return self

    def gps_for(self, sub):
        check_is_fitted(self, "gps_")
        if sub.level == "system" and self.pooled_system:
            return self.gps_pooled_
        return self.gps_[sub.side]

    def table(self, sub):
        return build_table(sub.reference, self.gps_for(sub))

    def outcome_curve(self, sub):
        table = self.table(sub)
        p = sub.treatment_distribution()
        rows = p > 0
        values = p[rows] @ np.nan_to_num(table.values[rows], nan=0.0)
        values[np.isnan(table.values[rows]).any(axis=0)] = np.nan
        return OutcomeCurve(self.name, sub.label, self.levels_, values)
