"""Minimum effort, effort discrepancy and the detection driver.

For a subgroup with expected-outcome curve f(t), the gamma-minimum effort is
the smallest treatment t with f(t) >= gamma. The discrepancy between the
protected-positive and protected-negative sides is
``delta(gamma) = psi_plus(gamma) - psi_minus(gamma)``; a negative value means
the s+ side needs less treatment. The average effort discrepancy (AED) is
the mean of delta over a set of gammas, or its normalized integral over a
gamma range.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize
from sklearn.base import BaseEstimator

from .curves import LevelSpec, OutcomeCurve, make_subgroups
from .exceptions import ConfigError
from ._validation import check_dataset, check_gammas, check_non_negative
from .propensity import WeightingBackend
from .regress import RegressionBackend
from .scm import ScmBackend

DEFAULT_GAMMAS = tuple(round(0.1 * k, 1) for k in range(1, 10))
DEFAULT_TAU = 0.5
GRID_SIZE = 1001

BACKENDS = {
    "regression": RegressionBackend,
    "weighting": WeightingBackend,
    "scm": ScmBackend,
}


def make_backend(name, graph=None, **params):
    try:
        cls = BACKENDS[name]
    except KeyError:
        raise ConfigError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None
    if cls is ScmBackend:
        if graph is None:
            raise ConfigError("the scm backend needs a causal graph")
        params["graph"] = graph
    return cls(**params)


# -- minimum effort and discrepancy ---------------------------------------


def closed_form_effort(curve, gamma):
    """Real-valued inverse of an affine curve at ``gamma``."""
    if not curve.is_affine or not curve.slope > 0:
        raise ValueError("closed form needs an affine curve with positive slope")
    return (gamma - curve.intercept) / curve.slope


def min_effort(curve, gamma):
    """Smallest treatment level whose expected outcome reaches ``gamma``.

    Returns ``None`` when no level gets there. Affine curves are inverted in
    closed form and rounded up to the next level.
    """
    levels = curve.levels
    if curve.is_affine and curve.slope > 0:
        t_star = closed_form_effort(curve, gamma)
        hits = levels[levels >= t_star - 1e-12 * max(1.0, abs(t_star))]
    else:
        ok = curve.available & (curve.values >= gamma)
        hits = levels[ok]
    return float(hits[0]) if hits.size else None


def effort_discrepancy(psi_plus, psi_minus):
    """psi_plus - psi_minus, or NaN when either side cannot reach the level."""
    if psi_plus is None or psi_minus is None:
        return float("nan")
    if np.isnan(psi_plus) or np.isnan(psi_minus):
        return float("nan")
    return float(psi_plus) - float(psi_minus)


def aed_discrete(deltas):
    """Mean of the defined discrepancies (NaN entries excluded); NaN if none is defined."""
    deltas = np.asarray(deltas, dtype=float)
    ok = ~np.isnan(deltas)
    if not ok.any():
        return float("nan")
    return float(deltas[ok].mean())


def _strictly_increasing(f, lo, hi, n=257):
    v = np.asarray(f(np.linspace(lo, hi, n)), dtype=float)
    return bool(np.all(np.diff(v) > 0))


def _grid_psi(f, gammas, t_grid):
    v = np.asarray(f(t_grid), dtype=float)
    out = np.full(len(gammas), np.nan)
    for k, g in enumerate(gammas):
        hit = np.flatnonzero(v >= g)
        if hit.size:
            out[k] = t_grid[hit[0]]
    return out


def grid_aed(f_plus, f_minus, gamma_lo, gamma_hi, t_bounds, n_gamma=GRID_SIZE, n_t=10001):
    """Discrete AED over a uniform gamma grid, with psi found on a dense t grid."""
    gammas = np.linspace(gamma_lo, gamma_hi, n_gamma)
    t_grid = np.linspace(*t_bounds, n_t)
    delta = _grid_psi(f_plus, gammas, t_grid) - _grid_psi(f_minus, gammas, t_grid)
    return aed_discrete(delta)


def _inverse(f, gamma, lo, hi):
    flo, fhi = float(f(lo)) - gamma, float(f(hi)) - gamma
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if flo * fhi > 0:
        raise ValueError(f"level {gamma} is outside the curve's range on [{lo}, {hi}]")
    return optimize.bisect(lambda t: float(f(t)) - gamma, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)


def aed_continuous(f_plus, f_minus, gamma_lo, gamma_hi, t_bounds=(0.0, 1.0)):
    """AED over ``[gamma_lo, gamma_hi]`` via Laisant's integral of the inverse.

    The curves only need to be integrable: the endpoint treatments come from
    bisection and the two integrals of f from adaptive quadrature. Curves that
    are not strictly increasing on ``t_bounds`` fall back to :func:`grid_aed`.
    """
    if not gamma_hi > gamma_lo:
        raise ValueError("gamma range must have gamma_hi > gamma_lo")
    lo, hi = t_bounds
    if not (_strictly_increasing(f_plus, lo, hi) and _strictly_increasing(f_minus, lo, hi)):
        warnings.warn("curve is not strictly increasing; using the dense-grid AED",
                      RuntimeWarning, stacklevel=2)
        return grid_aed(f_plus, f_minus, gamma_lo, gamma_hi, t_bounds)
    t1p, t2p = _inverse(f_plus, gamma_lo, lo, hi), _inverse(f_plus, gamma_hi, lo, hi)
    t1m, t2m = _inverse(f_minus, gamma_lo, lo, hi), _inverse(f_minus, gamma_hi, lo, hi)
    int_p = integrate.quad(lambda t: float(f_plus(t)), t1p, t2p, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
    int_m = integrate.quad(lambda t: float(f_minus(t)), t1m, t2m, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
    total = (t2p - t2m) * gamma_hi - (t1p - t1m) * gamma_lo - (int_p - int_m)
    return total / (gamma_hi - gamma_lo)


# -- profiles and reports ---------------------------------------------------


def _clean(values):
    return [None if v is None or (isinstance(v, float) and np.isnan(v)) else float(v) for v in values]


def _arr(values):
    return np.array([np.nan if v is None else v for v in values], dtype=float)


@dataclass
class EffortProfile:
    """Minimum effort of both sides over a set of outcome levels.

    ``psi_plus``/``psi_minus`` hold treatment values (NaN = unachievable).
    For affine curves they are the real-valued inverse and
    ``psi_plus_level``/``psi_minus_level`` the rounded-up levels.
    """

    gammas: np.ndarray
    psi_plus: np.ndarray
    psi_minus: np.ndarray
    psi_plus_level: Optional[np.ndarray] = None
    psi_minus_level: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("gammas", "psi_plus", "psi_minus", "psi_plus_level", "psi_minus_level"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, _arr(v))

    @property
    def delta(self):
        return self.psi_plus - self.psi_minus

    @property
    def delta_level(self):
        if self.psi_plus_level is None:
            return self.delta
        return self.psi_plus_level - self.psi_minus_level

    @property
    def n_excluded(self):
        return int(np.isnan(self.delta).sum())

    @property
    def asymmetric(self):
        """Gammas that exactly one side can reach."""
        return self.gammas[np.isnan(self.psi_plus) != np.isnan(self.psi_minus)]

    def to_dict(self):
        out = {
            "gammas": _clean(self.gammas),
            "psi_plus": _clean(self.psi_plus),
            "psi_minus": _clean(self.psi_minus),
            "delta": _clean(self.delta),
        }
        if self.psi_plus_level is not None:
            out["psi_plus_level"] = _clean(self.psi_plus_level)
            out["psi_minus_level"] = _clean(self.psi_minus_level)
            out["delta_level"] = _clean(self.delta_level)
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(data["gammas"], data["psi_plus"], data["psi_minus"],
                   data.get("psi_plus_level"), data.get("psi_minus_level"))


@dataclass
class AuditReport:
    level: str
    backend: str
    branch: str
    profile: EffortProfile
    aed: float
    tau: float
    verdict: bool
    reason: str
    curve_plus: OutcomeCurve
    curve_minus: OutcomeCurve
    protected_attr: str = "S"
    labels: tuple = ("s+", "s-")
    treatment_attr: str = "T"
    gamma_range: Optional[tuple] = None
    flags: list = field(default_factory=list)

    @property
    def aed_defined(self):
        return not np.isnan(self.aed)

    @property
    def mean_curve_difference(self):
        """Average over levels of E+(t) - E-(t)."""
        return float(np.nanmean(self.curve_plus.values - self.curve_minus.values))

    def to_dict(self):
        return {
            "level": self.level,
            "backend": self.backend,
            "branch": self.branch,
            "protected_attr": self.protected_attr,
            "labels": list(self.labels),
            "treatment_attr": self.treatment_attr,
            "gamma_range": list(self.gamma_range) if self.gamma_range else None,
            "profile": self.profile.to_dict(),
            "aed": None if np.isnan(self.aed) else float(self.aed),
            "abs_aed": None if np.isnan(self.aed) else abs(float(self.aed)),
            "n_excluded": self.profile.n_excluded,
            "tau": float(self.tau),
            "verdict": bool(self.verdict),
            "reason": self.reason,
            "mean_curve_difference": self.mean_curve_difference,
            "curves": {"plus": self.curve_plus.to_dict(), "minus": self.curve_minus.to_dict()},
            "flags": list(self.flags),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        def curve(c):
            return OutcomeCurve(c["backend"], c["subgroup"], c["levels"], _arr(c["values"]),
                                c.get("intercept"), c.get("slope"))
        aed = data["aed"]
        return cls(
            data["level"], data["backend"], data["branch"], EffortProfile.from_dict(data["profile"]),
            float("nan") if aed is None else aed, data["tau"], data["verdict"], data["reason"],
            curve(data["curves"]["plus"]), curve(data["curves"]["minus"]),
            data.get("protected_attr", "S"), tuple(data.get("labels", ("s+", "s-"))),
            data.get("treatment_attr", "T"),
            tuple(data["gamma_range"]) if data.get("gamma_range") else None, data.get("flags", []),
        )

    def to_table(self):
        return render_table([self])

    def summary(self):
        aed = "undefined" if np.isnan(self.aed) else f"{self.aed:+.4f}"
        verdict = "DISCRIMINATED" if self.verdict else "no discrimination"
        return (f"[{self.backend}] {self.level}: AED={aed} tau={self.tau:g} -> {verdict}"
                f" ({self.reason})")


def render_table(reports, precision=3):
    """Rows are treatment levels, columns are protected group x backend."""
    if not reports:
        raise ValueError("no reports to render")
    levels = reports[0].curve_plus.levels
    for r in reports[1:]:
        if not np.array_equal(r.curve_plus.levels, levels):
            raise ValueError("reports disagree on treatment levels")
    attr = reports[0].protected_attr
    cols = []
    for side, label in ((0, reports[0].labels[0]), (1, reports[0].labels[1])):
        for r in reports:
            c = r.curve_plus if side == 0 else r.curve_minus
            cols.append((f"{attr}={label}/{r.backend}", c.values))
    head = [reports[0].treatment_attr] + [name for name, _ in cols]
    rows = []
    for k, lv in enumerate(levels):
        rows.append([str(int(lv))] + ["-" if np.isnan(v[k]) else f"{v[k]:.{precision}f}" for _, v in cols])
    widths = [max(len(h), *(len(r[j]) for r in rows)) for j, h in enumerate(head)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


# -- detection -------------------------------------------------------------


def _profile_closed(cp, cm, gammas):
    psi_p = np.array([closed_form_effort(cp, g) for g in gammas])
    psi_m = np.array([closed_form_effort(cm, g) for g in gammas])
    lvl_p = [min_effort(cp, g) for g in gammas]
    lvl_m = [min_effort(cm, g) for g in gammas]
    return EffortProfile(gammas, psi_p, psi_m, lvl_p, lvl_m)


def _profile_numeric(cp, cm, gammas):
    return EffortProfile(
        gammas,
        [min_effort(_as_discrete(cp), g) for g in gammas],
        [min_effort(_as_discrete(cm), g) for g in gammas],
    )


def _as_discrete(curve):
    return OutcomeCurve(curve.backend, curve.subgroup, curve.levels, curve.values)


def decide(aed, tau, profile, branch):
    """Threshold rule plus the one-sided-achievability override."""
    if branch == "numeric" and profile.asymmetric.size:
        return True, "unachievable-asymmetry"
    if np.isnan(aed):
        return False, "aed-undefined"
    return bool(abs(aed) >= tau), "threshold"


def detect(d, backend="regression", gammas=None, gamma_range=None, tau=DEFAULT_TAU,
           level="system", k_min=10, match_attrs=None, graph=None, branch="auto"):
    """Audit ``d`` for equality of effort.

    Parameters
    ----------
    d : Dataset
    backend : str or backend estimator
        ``"regression"``, ``"weighting"``, ``"scm"`` or an instance; an
        unfitted instance is fitted on ``d``.
    gammas : sequence of float, optional
        Discrete outcome levels (default 0.1, ..., 0.9).
    gamma_range : (float, float), optional
        Continuous outcome range; overrides ``gammas``.
    tau : float
        Threshold on |AED| in treatment units.
    level : str or LevelSpec
        ``system``, ``group:attr=value`` or ``individual:<record id>``.
    branch : {"auto", "numeric"}
        ``"numeric"`` scans treatment levels even for affine curves.

    Returns
    -------
    AuditReport
    """
    check_dataset(d)
    if gamma_range is not None:
        gammas = None
    gammas, gamma_range = check_gammas(gammas, gamma_range)
    check_non_negative(tau, "tau")
    if isinstance(backend, str):
        backend = make_backend(backend, graph=graph)
    if branch not in ("auto", "numeric"):
        raise ConfigError(f"unknown branch {branch!r}")
    spec = LevelSpec.parse(level)
    plus, minus = make_subgroups(d, spec, k_min=k_min, match_attrs=match_attrs)
    if not hasattr(backend, "levels_"):
        backend.fit(d)
    cp, cm = backend.outcome_curve(plus), backend.outcome_curve(minus)
    levels = cp.levels
    affine = branch == "auto" and cp.is_affine and cm.is_affine and cp.slope > 0 and cm.slope > 0

    if gamma_range is not None:
        g1, g2 = map(float, gamma_range)
        grid = np.linspace(g1, g2, GRID_SIZE)
        if affine:
            # affine curves are defined on the whole real line
            span = [closed_form_effort(c, g) for c in (cp, cm) for g in (g1, g2)]
            bounds = (min(span) - 1.0, max(span) + 1.0)
            aed = aed_continuous(cp, cm, g1, g2, bounds)
            profile, used = _profile_closed(cp, cm, grid), "closed-form-integral"
        else:
            profile, used = _profile_numeric(cp, cm, grid), "numeric"
            aed = aed_discrete(profile.delta)
    else:
        gammas = np.asarray(DEFAULT_GAMMAS if gammas is None else gammas, dtype=float)
        if affine:
            profile, used = _profile_closed(cp, cm, gammas), "closed-form-inverse"
        else:
            profile, used = _profile_numeric(cp, cm, gammas), "numeric"
        aed = aed_discrete(profile.delta)

    verdict, reason = decide(aed, tau, profile, used)
    flags = []
    for name, c in (("plus", cp), ("minus", cm)):
        v = c.values[c.available]
        if v.size and (v.min() < 0 or v.max() > 1):
            flags.append(f"{name}-curve-outside-unit-interval")
        if not c.monotone:
            flags.append(f"{name}-curve-not-monotone")
    sc = d.schema
    return AuditReport(
        str(spec), backend.name, used, profile, aed, float(tau), verdict, reason, cp, cm,
        sc.protected_attr, (sc.protected_pos, sc.protected_neg), sc.treatment_attr,
        tuple(gamma_range) if gamma_range is not None else None, flags,
    )


class EffortAuditor(BaseEstimator):
    """Estimator wrapper around :func:`detect`.

    After ``fit`` the report is in ``report_``, the AED in ``aed_`` and the
    verdict in ``discriminated_``.
    """

    def __init__(self, backend="regression", level="system", gammas=None, gamma_range=None,
                 tau=DEFAULT_TAU, k_min=10, match_attrs=None, graph=None, branch="auto"):
        self.backend = backend
        self.level = level
        self.gammas = gammas
        self.gamma_range = gamma_range
        self.tau = tau
        self.k_min = k_min
        self.match_attrs = match_attrs
        self.graph = graph
        self.branch = branch

    def fit(self, d, y=None):
        self.report_ = detect(
            d, self.backend, self.gammas, self.gamma_range, self.tau, self.level,
            self.k_min, self.match_attrs, self.graph, self.branch,
        )
        self.aed_ = self.report_.aed
        self.discriminated_ = self.report_.verdict
        return self

    def predict(self, d):
        """Verdict for ``d`` (refits)."""
        return self.fit(d).discriminated_
