"""Subgroup selection and expected-outcome curves shared by every backend."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import matching_mask, partition, similar_subset
from .exceptions import ConfigError, EmptySubgroupError

LEVELS = ("system", "group", "individual")


@dataclass(frozen=True)
class LevelSpec:
    """Which comparison an audit makes.

    ``conditions`` holds the attribute assignment of a group audit;
    ``record_id`` the individual of an individual audit.
    """

    kind: str = "system"
    conditions: tuple = ()
    record_id: Optional[int] = None

    def __post_init__(self):
        if self.kind not in LEVELS:
            raise ConfigError(f"unknown level {self.kind!r}; expected one of {LEVELS}")
        if self.kind == "group" and not self.conditions:
            raise ConfigError("group level needs at least one attr=value condition")
        if self.kind == "individual" and self.record_id is None:
            raise ConfigError("individual level needs a record id")

    @classmethod
    def parse(cls, text):
        """Parse ``system``, ``group:attr=value[,attr=value]`` or ``individual:<id>``."""
        if isinstance(text, LevelSpec):
            return text
        kind, _, rest = str(text).strip().partition(":")
        if kind == "group":
            conds = []
            for part in rest.split(","):
                name, eq, value = part.partition("=")
                if not eq:
                    raise ConfigError(f"bad group condition {part!r}; expected attr=value")
                conds.append((name.strip(), int(value)))
            return cls("group", tuple(conds))
        if kind == "individual":
            try:
                return cls("individual", record_id=int(rest))
            except ValueError:
                raise ConfigError(f"bad individual record id {rest!r}") from None
        return cls(kind)

    def __str__(self):
        if self.kind == "group":
            return "group:" + ",".join(f"{k}={v}" for k, v in self.conditions)
        if self.kind == "individual":
            return f"individual:{self.record_id}"
        return "system"


@dataclass(frozen=True, eq=False)
class Subgroup:
    """One side (s+ or s-) of an audit comparison.

    ``view`` holds the records forming the subgroup. ``reference`` holds the
    same-side records agreeing on every non-treatment condition; weighting
    needs them because a subgroup fixed at one treatment level has no
    records at the others. ``conditions`` maps attribute name to code and may
    include the treatment attribute (the subgroup's current level).
    """

    side: int
    level: str
    view: object
    reference: object
    conditions: dict = field(default_factory=dict)

    @property
    def schema(self):
        return self.view.schema

    @property
    def label(self):
        sc = self.schema
        sex = sc.protected_pos if self.side == 1 else sc.protected_neg
        extra = ",".join(f"{k}={v}" for k, v in self.conditions.items())
        return f"{sc.protected_attr}={sex}" + (f"|{extra}" if extra else "")

    def treatment_distribution(self):
        """P(T = t | subgroup) over the schema's levels."""
        levels = np.asarray(self.schema.treatment_levels)
        counts = (self.view.t[:, None] == levels[None, :]).sum(axis=0)
        if counts.sum() == 0:
            raise EmptySubgroupError(f"subgroup {self.label} is empty")
        return counts / counts.sum()


def make_subgroups(d, level="system", k_min=10, match_attrs=None):
    """Build the (s+, s-) subgroup pair for an audit level."""
    spec = LevelSpec.parse(level)
    sc = d.schema
    plus, minus = partition(d)
    if spec.kind == "system":
        return tuple(Subgroup(side, "system", v, v) for side, v in ((1, plus), (0, minus)))

    if spec.kind == "group":
        conditions = dict(spec.conditions)
        if sc.protected_attr in conditions:
            raise ConfigError("a group condition cannot fix the protected attribute")
        out = []
        for side, part in ((1, plus), (0, minus)):
            view_mask = np.ones(len(part), dtype=bool)
            ref_mask = np.ones(len(part), dtype=bool)
            for name, value in conditions.items():
                hit = part.column(name) == value
                view_mask &= hit
                if name != sc.treatment_attr:
                    ref_mask &= hit
            view = part.subset(view_mask)
            if len(view) == 0:
                raise EmptySubgroupError(f"no records with {sc.protected_attr} side {side} and {spec}")
            out.append(Subgroup(side, "group", view, part.subset(ref_mask), conditions))
        return tuple(out)

    match_attrs = sc.match_attrs if match_attrs is None else tuple(match_attrs)
    i_plus, i_minus = similar_subset(d, spec.record_id, match_attrs, k_min=k_min)
    i = d.position(spec.record_id)
    conditions = {name: int(d.column(name)[i]) for name in match_attrs}
    conditions[sc.treatment_attr] = int(d.t[i])
    ref_mask = matching_mask(d, spec.record_id, match_attrs, include_treatment=False)
    out = []
    for side, view in ((1, i_plus), (0, i_minus)):
        ref = d.subset(ref_mask & (d.s == side))
        out.append(Subgroup(side, "individual", view, ref, conditions))
    return tuple(out)


@dataclass
class OutcomeCurve:
    """Expected outcome of a subgroup as a function of the treatment level.

    ``values[k]`` is the expectation at ``levels[k]`` (NaN when the backend
    cannot estimate it). Affine curves from the regression backend also
    carry ``intercept`` and ``slope`` so they can be evaluated and inverted
    off the level grid.
    """

    backend: str
    subgroup: str
    levels: np.ndarray
    values: np.ndarray
    intercept: Optional[float] = None
    slope: Optional[float] = None

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        self.values = np.asarray(self.values, dtype=float)

    @classmethod
    def affine(cls, backend, subgroup, levels, intercept, slope):
        levels = np.asarray(levels, dtype=float)
        return cls(backend, subgroup, levels, intercept + slope * levels,
                   intercept=float(intercept), slope=float(slope))

    @property
    def is_affine(self):
        return self.slope is not None

    @property
    def available(self):
        return ~np.isnan(self.values)

    @property
    def monotone(self):
        """Non-decreasing over the available levels."""
        v = self.values[self.available]
        return bool(np.all(np.diff(v) >= 0))

    def __call__(self, t):
        """Evaluate at real treatment values: exact for affine curves, piecewise linear otherwise."""
        t = np.asarray(t, dtype=float)
        if self.is_affine:
            return self.intercept + self.slope * t
        ok = self.available
        return np.interp(t, self.levels[ok], self.values[ok])

    def to_dict(self):
        out = {
            "backend": self.backend,
            "subgroup": self.subgroup,
            "levels": [int(v) for v in self.levels],
            "values": [None if np.isnan(v) else float(v) for v in self.values],
            "monotone": self.monotone,
        }
        if self.is_affine:
            out["intercept"] = self.intercept
            out["slope"] = self.slope
        return out
