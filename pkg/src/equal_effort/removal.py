"""Removing effort discrepancy by regenerating outcomes.

Two outcome models, one per protected group, are fitted jointly with a
penalty lam * AED**2, where AED is the closed-form discrepancy of the two
models at the mean outcome level. Each record's outcome is then redrawn from
a Bernoulli distribution whose mean is its group's fair-model prediction.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_dataset, check_gammas, check_non_negative
from .dataset import partition
from .effort import DEFAULT_GAMMAS, DEFAULT_TAU, detect
from .exceptions import ConfigError, NonMonotoneModelError, OptimizationError, SchemaError
from .regress import OutcomeModel, design_matrix, fit_ols

logger = logging.getLogger(__name__)

SLOPE_FLOOR = 1e-3
BARRIER_WEIGHT = 1e-4


def gamma_bar(gammas=None, gamma_range=None):
    """Outcome level at which the closed-form AED is evaluated.

    Mean of ``gammas`` in the discrete case; ``(g2**2 - g1**2) / 2`` for a
    range ``(g1, g2)``.
    """
    if gamma_range is not None:
        g1, g2 = map(float, gamma_range)
        return (g2 ** 2 - g1 ** 2) / 2.0
    gammas = DEFAULT_GAMMAS if gammas is None else gammas
    return float(np.mean(gammas))


@dataclass
class FairModelPair:
    model_plus: OutcomeModel
    model_minus: OutcomeModel
    lam: float
    gammas: Optional[tuple] = None
    gamma_range: Optional[tuple] = None
    objective: float = float("nan")
    aed: float = float("nan")
    n_iter: int = 0
    converged: bool = False
    reduction: str = "mean"
    trace: list = field(default_factory=list, repr=False)

    @property
    def gamma_bar(self):
        return gamma_bar(self.gammas, self.gamma_range)

    def model(self, side):
        return self.model_plus if side == 1 else self.model_minus

    def to_dict(self):
        tr = self.trace
        return {
            "lambda": self.lam,
            "gammas": list(self.gammas) if self.gammas is not None else None,
            "gamma_range": list(self.gamma_range) if self.gamma_range is not None else None,
            "gamma_bar": self.gamma_bar,
            "reduction": self.reduction,
            "objective": self.objective,
            "aed": self.aed,
            "iterations": self.n_iter,
            "converged": self.converged,
            "objective_trace": {
                "initial": tr[0] if tr else None,
                "final": tr[-1] if tr else None,
                "accepted_steps": max(len(tr) - 1, 0),
            },
            "model_plus": self.model_plus.to_dict(),
            "model_minus": self.model_minus.to_dict(),
        }


def _selectors(x):
    """Vectors u, v with u.beta = subgroup intercept and v.beta = subgroup slope."""
    xbar = np.asarray(x, dtype=float).mean(axis=0)
    k = len(xbar)
    u = np.concatenate([[1.0, 0.0], xbar, np.zeros(k)])
    v = np.concatenate([[0.0, 1.0], np.zeros(k), xbar])
    return u, v


def _closed_aed(beta_p, beta_m, sel_p, sel_m, gbar):
    (up, vp), (um, vm) = sel_p, sel_m
    bp, bm = vp @ beta_p, vm @ beta_m
    if not (bp > 0 and bm > 0):
        raise NonMonotoneModelError(f"average slopes must be positive (got {bp:.3g}, {bm:.3g})")
    return (gbar - up @ beta_p) / bp - (gbar - um @ beta_m) / bm


def model_aed(pair, d):
    """Closed-form AED of a model pair on ``d``'s two protected groups."""
    plus, minus = partition(d)
    return float(_closed_aed(pair.model_plus.coef, pair.model_minus.coef,
                             _selectors(plus.x), _selectors(minus.x), pair.gamma_bar))


class _Objective:
    """Squared error of both group models plus lam * AED**2 and a slope barrier."""

    def __init__(self, plus, minus, lam, gbar, reduction):
        n = len(plus) + len(minus)
        scale = 1.0 / n if reduction == "mean" else 1.0
        self.blocks = []
        for part in (plus, minus):
            X = design_matrix(part.t, part.x)
            y = part.y.astype(float)
            self.blocks.append((scale * X.T @ X, scale * X.T @ y, scale * float(y @ y)))
        self.sel = (_selectors(plus.x), _selectors(minus.x))
        self.p = self.blocks[0][0].shape[0]
        self.lam = lam
        self.gbar = gbar

    def split(self, beta):
        return beta[:self.p], beta[self.p:]

    def value_grad(self, beta):
        """Objective, its gradient and the gradient of the AED term alone."""
        bp, bm = self.split(beta)
        val = 0.0
        grads = []
        for (A, c, yy), b in zip(self.blocks, (bp, bm)):
            val += b @ A @ b - 2 * c @ b + yy
            grads.append(2 * (A @ b - c))
        g = np.concatenate(grads)
        slopes = [v @ b for (u, v), b in zip(self.sel, (bp, bm))]
        if min(slopes) <= 0:
            return np.inf, g, np.zeros_like(g)
        aed = 0.0
        g_aed = []
        for sign, (u, v), b, s in zip((1.0, -1.0), self.sel, (bp, bm), slopes):
            a = u @ b
            aed += sign * (self.gbar - a) / s
            g_aed.append(sign * (-u / s - (self.gbar - a) / s ** 2 * v))
        g_aed = np.concatenate(g_aed)
        val += self.lam * aed ** 2
        g = g + 2 * self.lam * aed * g_aed
        # log barrier keeps the closed-form AED away from the zero-slope pole
        for k, ((u, v), s) in enumerate(zip(self.sel, slopes)):
            if s < SLOPE_FLOOR:
                val += BARRIER_WEIGHT * (np.log(SLOPE_FLOOR) - np.log(s))
                g[k * self.p:(k + 1) * self.p] -= BARRIER_WEIGHT / s * v
        return float(val), g, g_aed


def fit_fair(d, lam, gammas=None, gamma_range=None, max_iter=100_000, tol=1e-9,
             patience=10, reduction="mean", max_restarts=5):
    """Penalized joint fit of the two group outcome models.

    Preconditioned gradient descent with backtracking line search, started
    from the per-group OLS solutions. Coordinates are whitened with the
    Cholesky factor of the squared-error Hessian; the step metric adds the
    rank-one Gauss-Newton term of the penalty, which keeps large ``lam``
    from stalling the descent. Stops when the objective improves
    by less than ``tol`` over ``patience`` accepted steps.

    ``reduction="mean"`` divides the squared error by the record count;
    ``"sum"`` uses the raw sum.
    """
    check_dataset(d)
    lam = check_non_negative(lam, "lam")
    if reduction not in ("mean", "sum"):
        raise ConfigError("reduction must be 'mean' or 'sum'")
    if gamma_range is not None:
        gammas = None
    gammas, gamma_range = check_gammas(gammas, gamma_range)
    plus, minus = partition(d)
    start = np.concatenate([fit_ols(plus).coef, fit_ols(minus).coef])
    gbar = gamma_bar(gammas, gamma_range)
    obj = _Objective(plus, minus, float(lam), gbar, reduction)
    p = obj.p

    H = linalg.block_diag(obj.blocks[0][0], obj.blocks[1][0])
    L = linalg.cholesky(H, lower=True)

    def to_beta(z):
        return start + linalg.solve_triangular(L, z, lower=True, trans="T")

    def whiten(g):
        return linalg.solve_triangular(L, g, lower=True)

    def direction(gz, jz):
        # (2I + 2 lam j j^T)^-1 gz by Sherman-Morrison
        coef = obj.lam * (jz @ gz) / (1.0 + obj.lam * (jz @ jz))
        return (gz - coef * jz) / 2.0

    z = np.zeros(2 * p)
    f, g_beta, j_beta = obj.value_grad(to_beta(z))
    if not np.isfinite(f):
        raise OptimizationError("per-group OLS start has a non-positive average treatment slope")
    trace = [f]
    recent = deque([f], maxlen=patience + 1)
    step0 = 1.0
    restarts = 0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        gz = whiten(g_beta)
        dz = direction(gz, whiten(j_beta))
        slope = float(gz @ dz)
        if slope <= 1e-30:
            converged = True
            break
        step = step0
        while step > 1e-20:
            z_new = z - step * dz
            f_new, g_new, j_new = obj.value_grad(to_beta(z_new))
            if f_new <= f - 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            if restarts >= max_restarts:
                converged = True  # no descent left at machine precision
                break
            restarts += 1
            step0 *= 0.1
            logger.debug("line search stalled; restart %d with initial step %g", restarts, step0)
            continue
        z, f, g_beta, j_beta = z_new, f_new, g_new, j_new
        trace.append(f)
        recent.append(f)
        step0 = min(2.0 * step, 1.0)
        if len(recent) > patience and recent[0] - recent[-1] < tol:
            converged = True
            break

    beta = to_beta(z)
    covs = d.schema.covariates
    pair = FairModelPair(
        OutcomeModel.from_coef(beta[:p], covs), OutcomeModel.from_coef(beta[p:], covs),
        float(lam), gammas, tuple(gamma_range) if gamma_range is not None else None,
        objective=f, n_iter=it, converged=converged, reduction=reduction, trace=trace,
    )
    pair.aed = model_aed(pair, d)
    return pair


def expected_outcomes(d, pair):
    """Each record's prediction from its own group's model."""
    mu = np.empty(len(d))
    for side in (1, 0):
        rows = d.s == side
        mu[rows] = pair.model(side).predict(d.t[rows].astype(float), d.x[rows])
    return mu


def regenerate(d, pair, seed=0):
    """Dataset with outcomes redrawn as Bernoulli(clip(prediction, 0, 1))."""
    mu = np.clip(expected_outcomes(d, pair), 0.0, 1.0)
    rng = np.random.default_rng(seed)
    y = (rng.random(len(d)) < mu).astype(np.int8)
    return d.with_outcome(y)


def _cells(d):
    return np.column_stack([d.s, d.t, d.x, d.y]).astype(np.int64)


def _non_outcome_rows(d):
    rows = np.column_stack([d.s, d.t, d.x]).astype(np.int64)
    return rows[np.lexsort(rows.T[::-1])] if len(rows) else rows


def utility_loss(original, repaired, pseudo_count=0.5):
    """Chi-square distance between the (S, T, X, Y) contingency tables.

    Original counts (scaled to the repaired total) are the expected counts;
    cells empty in the original but not in the repair get ``pseudo_count``.
    """
    if original.schema != repaired.schema:
        raise SchemaError("datasets have different schemas")
    if len(original) != len(repaired):
        raise SchemaError(f"record counts differ: {len(original)} vs {len(repaired)}")
    if not np.array_equal(_non_outcome_rows(original), _non_outcome_rows(repaired)):
        raise SchemaError("non-outcome columns differ")
    if len(original) == 0:
        return 0.0
    a, b = _cells(original), _cells(repaired)
    keys, inv = np.unique(np.vstack([a, b]), axis=0, return_inverse=True)
    inv = inv.ravel()
    expected = np.bincount(inv[:len(a)], minlength=len(keys)).astype(float)
    observed = np.bincount(inv[len(a):], minlength=len(keys)).astype(float)
    expected *= observed.sum() / expected.sum()
    expected[expected == 0] = pseudo_count
    return float(np.sum((observed - expected) ** 2 / expected))


def verify_repair(repaired, backend="regression", gammas=None, tau=DEFAULT_TAU, **kw):
    """Re-run detection on repaired data."""
    return detect(repaired, backend, gammas=gammas, tau=tau, **kw)


class EqualEffortRepairer(BaseEstimator, TransformerMixin):
    """Fit fair outcome models and regenerate outcomes.

    Parameters
    ----------
    lam : float, default=5.0
        Weight of the squared-AED penalty.
    gammas, gamma_range
        Outcome levels defining the AED (see :func:`gamma_bar`).
    seed : int, default=0
        Seed for the Bernoulli draws in ``transform``.
    reduction : {"mean", "sum"}, default="mean"
        How squared errors are aggregated in the objective.
    """

    def __init__(self, lam=5.0, gammas=None, gamma_range=None, seed=0,
                 max_iter=100_000, tol=1e-9, reduction="mean"):
        self.lam = lam
        self.gammas = gammas
        self.gamma_range = gamma_range
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        self.reduction = reduction

    def fit(self, d, y=None):
        self.pair_ = fit_fair(d, self.lam, self.gammas, self.gamma_range,
                              max_iter=self.max_iter, tol=self.tol, reduction=self.reduction)
        self.aed_ = self.pair_.aed
        return self

    def transform(self, d):
        check_is_fitted(self, "pair_")
        return regenerate(d, self.pair_, self.seed)

    def manifest(self, original=None, repaired=None):
        check_is_fitted(self, "pair_")
        out = {"seed": self.seed, **self.pair_.to_dict()}
        if original is not None and repaired is not None:
            out["utility_loss"] = utility_loss(original, repaired)
        return json.loads(json.dumps(out))
