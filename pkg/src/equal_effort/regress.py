"""Outcome regression backend and the shared multinomial logit fitter.

The outcome model is the linear probability model

    E[Y | T, X] = b0 + b1*T + b2.X + b3.(X*T)

fitted by ordinary least squares. Averaged over a subgroup it is affine in
T, which gives the minimum treatment for an outcome level in closed form.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.linalg import lapack
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .curves import OutcomeCurve
from .dataset import partition
from .exceptions import (
    EmptySubgroupError,
    MissingLevelError,
    NonMonotoneModelError,
    SingularDesignError,
)

PIVOT_RTOL = 1e-10


@dataclass(frozen=True)
class OutcomeModel:
    beta0: float
    beta1: float
    beta2: np.ndarray
    beta3: np.ndarray
    covariates: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "beta2", np.asarray(self.beta2, dtype=float))
        object.__setattr__(self, "beta3", np.asarray(self.beta3, dtype=float))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        k = len(self.covariates)
        if self.beta2.shape != (k,) or self.beta3.shape != (k,):
            raise ValueError(f"beta2/beta3 must have length {k}")

    @property
    def coef(self):
        """Coefficients in design-column order ``[1, T, X, X*T]``."""
        return np.concatenate([[self.beta0, self.beta1], self.beta2, self.beta3])

    @classmethod
    def from_coef(cls, coef, covariates):
        k = len(covariates)
        coef = np.asarray(coef, dtype=float)
        return cls(coef[0], coef[1], coef[2:2 + k], coef[2 + k:], covariates)

    def predict(self, t, x):
        """Per-record prediction at treatment ``t`` (scalar or array)."""
        x = np.asarray(x, dtype=float)
        return self.beta0 + self.beta1 * t + x @ self.beta2 + (x @ self.beta3) * t

    def intercept_slope(self, x):
        """Subgroup-averaged (intercept, slope) of the affine curve in t."""
        xbar = np.asarray(x, dtype=float).mean(axis=0)
        return self.beta0 + xbar @ self.beta2, self.beta1 + xbar @ self.beta3

    def to_text(self):
        lines = [f"intercept = {float(self.beta0)!r}", f"treatment = {float(self.beta1)!r}"]
        lines += [f"{c} = {float(v)!r}" for c, v in zip(self.covariates, self.beta2)]
        lines += [f"{c}*treatment = {float(v)!r}" for c, v in zip(self.covariates, self.beta3)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                name, _, value = line.partition("=")
                values[name.strip()] = float(value)
        covs = [k for k in values if k not in ("intercept", "treatment") and not k.endswith("*treatment")]
        return cls(
            values["intercept"], values["treatment"],
            [values[c] for c in covs], [values[f"{c}*treatment"] for c in covs], covs,
        )

    def to_dict(self):
        return {
            "intercept": float(self.beta0),
            "treatment": float(self.beta1),
            "covariates": {c: float(v) for c, v in zip(self.covariates, self.beta2)},
            "interactions": {c: float(v) for c, v in zip(self.covariates, self.beta3)},
        }


def design_matrix(t, x):
    """Columns ``[1, T, X, X*T]``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float).reshape(len(t), -1)
    return np.column_stack([np.ones_like(t), t, x, x * t[:, None]])


def design_names(d):
    covs = d.schema.covariates
    return ["intercept", d.schema.treatment_attr, *covs, *(f"{c}*{d.schema.treatment_attr}" for c in covs)]


def solve_normal_equations(A, b, names=None):
    """Solve ``A beta = b`` for a symmetric PSD Gram matrix.

    Rank is tested by pivoted Cholesky with pivot threshold
    ``PIVOT_RTOL * max(diag(A))``; dependent columns are named in the error.
    """
    p = A.shape[0]
    names = names or [f"col{j}" for j in range(p)]
    tol = PIVOT_RTOL * max(float(np.max(np.diag(A))), np.finfo(float).tiny)
    _, piv, rank, info = lapack.dpstrf(A, lower=1, tol=tol)
    if rank < p:
        dependent = [names[j - 1] for j in piv[rank:]]
        raise SingularDesignError(
            f"design is rank deficient ({rank} < {p}); dependent columns: {dependent}",
            columns=dependent,
        )
    return linalg.cho_solve(linalg.cho_factor(A, lower=True), b)


def fit_ols(d):
    """Least-squares fit of the interaction model on a dataset (or view)."""
    if len(d) == 0:
        raise EmptySubgroupError("cannot fit an outcome model on zero records")
    X = design_matrix(d.t, d.x)
    coef = solve_normal_equations(X.T @ X, X.T @ d.y.astype(float), design_names(d))
    return OutcomeModel.from_coef(coef, d.schema.covariates)


def expected_outcome(m, sub, t):
    """Mean model prediction over ``sub`` with every record forced to treatment ``t``."""
    if len(sub) == 0:
        raise EmptySubgroupError("expected outcome over an empty subgroup")
    a, b = m.intercept_slope(sub.x)
    return float(a + b * t)


def min_treatment_closed(m, sub, gamma):
    """Real-valued treatment at which the subgroup's expected outcome equals ``gamma``."""
    if len(sub) == 0:
        raise EmptySubgroupError("minimum treatment over an empty subgroup")
    a, b = m.intercept_slope(sub.x)
    if not b > 0:
        raise NonMonotoneModelError(f"average treatment slope {b:.3g} is not positive")
    return float((gamma - a) / b)


# -- multinomial logit -----------------------------------------------------


@dataclass
class GlmFit:
    """Multinomial logit fit; class 0 is the reference with zero coefficients.

    ``coef`` has shape ``(n_features + 1, n_classes)``, intercept in row 0.
    """

    coef: np.ndarray
    converged: bool
    n_iter: int
    grad_norm: float
    penalized: bool = False
    l2: float = 0.0
    loglik_trace: list = field(default_factory=list)

    @property
    def n_classes(self):
        return self.coef.shape[1]

    def decision_function(self, features):
        F = _with_intercept(features)
        return F @ self.coef

    def predict_proba(self, features):
        eta = self.decision_function(features)
        return np.exp(eta - logsumexp(eta, axis=1, keepdims=True))

    def predict_log_proba(self, features):
        eta = self.decision_function(features)
        return eta - logsumexp(eta, axis=1, keepdims=True)


def _with_intercept(features):
    F = np.asarray(features, dtype=float)
    if F.ndim == 1:
        F = F.reshape(-1, 1)
    return np.column_stack([np.ones(len(F)), F])


def _objective(W, F, Yoh, l2):
    """Penalized mean log-likelihood, gradient and Hessian over the free classes."""
    n, q = F.shape
    K = Yoh.shape[1]
    full = np.column_stack([np.zeros(q), W.reshape(q, K - 1)])
    eta = F @ full
    lse = logsumexp(eta, axis=1)
    P = np.exp(eta - lse[:, None])
    pen = np.ones(q)
    pen[0] = 0.0  # intercept is never penalized
    Wm = W.reshape(q, K - 1)
    ll = float(np.sum(Yoh * eta) - lse.sum()) / n - 0.5 * l2 * float(np.sum(pen[:, None] * Wm ** 2))
    G = F.T @ (Yoh - P)[:, 1:] / n - l2 * pen[:, None] * Wm
    H = np.empty((q * (K - 1), q * (K - 1)))
    Pf = P[:, 1:]
    for j in range(K - 1):
        for k in range(j, K - 1):
            w = Pf[:, j] * ((j == k) - Pf[:, k])
            block = (F * w[:, None]).T @ F / n
            if j == k:
                block = block + l2 * np.diag(pen)
            H[j::K - 1, k::K - 1] = block
            H[k::K - 1, j::K - 1] = block.T
    return ll, G.ravel(), H


def _newton(F, Yoh, l2, tol, max_iter, W0):
    W = W0.copy()
    ll, g, H = _objective(W, F, Yoh, l2)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) <= tol:
            converged = True
            it -= 1
            break
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(len(g)), g)
        except np.linalg.LinAlgError:
            step = g
        # damped step: halve until the log-likelihood does not decrease
        alpha = 1.0
        while True:
            W_new = W + alpha * step
            ll_new, g_new, H_new = _objective(W_new, F, Yoh, l2)
            if ll_new >= ll or alpha < 1e-10:
                break
            alpha *= 0.5
        if ll_new < ll:
            break
        W, ll, g, H = W_new, ll_new, g_new, H_new
        trace.append(ll)
    else:
        converged = np.linalg.norm(g) <= tol
    return W, converged, it, float(np.linalg.norm(g)), trace


def fit_glm(features, labels, n_classes, tol=1e-8, max_iter=200, l2=0.0, coef_cap=30.0):
    """Maximum-likelihood multinomial logit by damped Newton iterations.

    Labels are class indices ``0..n_classes-1``. If the unpenalized
    coefficients grow past ``coef_cap`` (separation), the fit is redone with
    an L2 penalty of 1e-4 and marked ``penalized``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes < 2:
        raise ValueError("n_classes must be at least 2")
    counts = np.bincount(labels, minlength=n_classes)
    if len(counts) > n_classes:
        raise ValueError(f"labels exceed n_classes={n_classes}")
    if (counts == 0).any():
        raise MissingLevelError(f"classes absent from labels: {np.flatnonzero(counts == 0).tolist()}")
    F = _with_intercept(features)
    q = F.shape[1]
    Yoh = np.eye(n_classes)[labels]
    W0 = np.zeros((q, n_classes - 1))
    W0[0] = np.log(counts[1:] / counts[0])
    W0 = W0.ravel()

    W, converged, it, gnorm, trace = _newton(F, Yoh, l2, tol, max_iter, W0)
    penalized = l2 > 0
    if np.max(np.abs(W)) > coef_cap and l2 == 0.0:
        warnings.warn(
            "multinomial fit looks separated; refitting with L2 penalty 1e-4",
            RuntimeWarning, stacklevel=2,
        )
        l2 = 1e-4
        W, converged, it, gnorm, trace = _newton(F, Yoh, l2, tol, max_iter, W0)
        penalized = True
    coef = np.column_stack([np.zeros(q), W.reshape(q, n_classes - 1)])
    return GlmFit(coef, bool(converged), it, gnorm, penalized, l2, trace)


# -- backend ---------------------------------------------------------------


class RegressionBackend(BaseEstimator):
    """Outcome-regression estimates of subgroup potential outcomes.

    Parameters
    ----------
    stratify : bool, default=True
        Fit one outcome model per protected group. With ``False`` a single
        pooled model (protected attribute excluded) serves both sides.
    """

    name = "regression"

    def __init__(self, stratify=True):
        self.stratify = stratify

    def fit(self, d, y=None):
        if self.stratify:
            plus, minus = partition(d)
            self.models_ = {1: fit_ols(plus), 0: fit_ols(minus)}
        else:
            pooled = fit_ols(d)
            self.models_ = {1: pooled, 0: pooled}
        self.levels_ = np.asarray(d.schema.treatment_levels)
        return self

    def outcome_curve(self, sub):
        check_is_fitted(self, "models_")
        if len(sub.view) == 0:
            raise EmptySubgroupError(f"subgroup {sub.label} is empty")
        a, b = self.models_[sub.side].intercept_slope(sub.view.x)
        return OutcomeCurve.affine(self.name, sub.label, self.levels_, a, b)
