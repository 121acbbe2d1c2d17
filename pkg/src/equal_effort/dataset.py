"""Tabular data model, CSV ingestion and subgroup selection.

A :class:`Dataset` stores every record as integer codes:

* ``s`` -- 1 for the protected-positive label (s+), 0 for s-
* ``t`` -- the ordinal treatment level
* ``x`` -- one integer column per covariate
* ``y`` -- 1 for the positive outcome, 0 otherwise

Arrays are read-only, so views produced by :meth:`Dataset.subset` can be
shared freely between threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .exceptions import (
    DegeneratePartitionError,
    InsufficientComparatorsError,
    MappingError,
    SchemaError,
)

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "?", "NA", "NaN", "nan", "null", "None"})
ID_COLUMN = "row_id"


@dataclass(frozen=True)
class Schema:
    """Roles of the columns in an audit.

    ``treatment_levels`` are the integer codes of the ordinal treatment in
    ascending effort order.
    """

    protected_attr: str
    protected_pos: str
    protected_neg: str
    treatment_attr: str
    treatment_levels: tuple
    outcome_attr: str
    outcome_pos: str
    covariates: tuple = ()
    match_attrs: tuple = ()
    outcome_neg: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "treatment_levels", tuple(int(v) for v in self.treatment_levels))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "match_attrs", tuple(self.match_attrs))
        levels = self.treatment_levels
        if len(set(levels)) < 2:
            raise SchemaError("treatment_levels needs at least two distinct values")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise SchemaError(f"treatment_levels must be strictly increasing, got {levels}")
        if self.protected_pos == self.protected_neg:
            raise SchemaError("protected_pos and protected_neg must differ")
        if self.outcome_neg is not None and self.outcome_neg == self.outcome_pos:
            raise SchemaError("outcome_pos and outcome_neg must differ")
        roles = [self.protected_attr, self.treatment_attr, self.outcome_attr, *self.covariates]
        if len(set(roles)) != len(roles):
            raise SchemaError(f"attribute roles overlap: {roles}")
        extra = set(self.match_attrs) - set(self.covariates)
        if extra:
            raise SchemaError(f"match_attrs not among covariates: {sorted(extra)}")

    @property
    def attributes(self):
        """All attribute names in canonical column order."""
        return (self.protected_attr, self.treatment_attr, *self.covariates, self.outcome_attr)

    @property
    def n_levels(self):
        return len(self.treatment_levels)

    def replace(self, **changes):
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return Schema(**values)


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class Dataset:
    """Immutable coded records plus the schema describing them.

    Parameters
    ----------
    schema : Schema
    s, t, y : array-like of shape (n,)
    x : array-like of shape (n, len(schema.covariates))
    ids : array-like of shape (n,), optional
        Stable record ids; defaults to ``0..n-1``.
    """

    def __init__(self, schema, s, t, x, y, ids=None, n_dropped=0):
        self.schema = schema
        n = len(s)
        self.s = _readonly(s, np.int8)
        self.t = _readonly(t, np.int64)
        self.y = _readonly(y, np.int8)
        x = np.asarray(x, dtype=np.int64)
        if x.size == 0:
            x = x.reshape(n, len(schema.covariates))
        self.x = _readonly(x, np.int64)
        self.ids = _readonly(np.arange(n) if ids is None else ids, np.int64)
        self.n_dropped = int(n_dropped)
        self._validate()

    def _validate(self):
        n = len(self.s)
        k = len(self.schema.covariates)
        for name, arr in (("t", self.t), ("y", self.y), ("ids", self.ids)):
            if arr.shape != (n,):
                raise SchemaError(f"{name} has shape {arr.shape}, expected ({n},)")
        if self.x.shape != (n, k):
            raise SchemaError(f"x has shape {self.x.shape}, expected ({n}, {k})")
        if n == 0:
            return
        if not np.isin(self.s, (0, 1)).all():
            raise SchemaError("protected codes must be 0 or 1")
        if not np.isin(self.y, (0, 1)).all():
            raise SchemaError("outcome codes must be 0 or 1")
        bad = ~np.isin(self.t, self.schema.treatment_levels)
        if bad.any():
            raise SchemaError(
                f"treatment value {self.t[bad][0]} not in levels {self.schema.treatment_levels}"
            )

    def __len__(self):
        return len(self.s)

    def __repr__(self):
        return f"Dataset(n={len(self)}, treatment={self.schema.treatment_attr!r})"

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.ids, other.ids)
        )

    __hash__ = None

    def column(self, name):
        """Integer codes of any schema attribute."""
        sc = self.schema
        if name == sc.protected_attr:
            return self.s
        if name == sc.treatment_attr:
            return self.t
        if name == sc.outcome_attr:
            return self.y
        try:
            return self.x[:, sc.covariates.index(name)]
        except ValueError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    def subset(self, mask):
        """View restricted to ``mask`` (boolean array or integer positions)."""
        mask = np.asarray(mask)
        return Dataset(
            self.schema, self.s[mask], self.t[mask], self.x[mask], self.y[mask], self.ids[mask]
        )

    def position(self, record_id):
        hits = np.flatnonzero(self.ids == record_id)
        if hits.size == 0:
            raise KeyError(f"no record with id {record_id}")
        return int(hits[0])

    def with_outcome(self, y):
        """Copy with the outcome column replaced; every other column is shared."""
        return Dataset(self.schema, self.s, self.t, self.x, y, self.ids)

    def to_frame(self, index=True):
        sc = self.schema
        neg = sc.outcome_neg if sc.outcome_neg is not None else "0"
        cols = {}
        if index:
            cols[ID_COLUMN] = self.ids
        cols[sc.protected_attr] = np.where(self.s == 1, sc.protected_pos, sc.protected_neg)
        cols[sc.treatment_attr] = self.t
        for j, name in enumerate(sc.covariates):
            cols[name] = self.x[:, j]
        cols[sc.outcome_attr] = np.where(self.y == 1, sc.outcome_pos, neg)
        return pd.DataFrame(cols)

    def write_csv(self, path, index=True):
        """Write coded records; :func:`load_csv` with no value maps reads them back exactly."""
        self.to_frame(index=index).to_csv(path, index=False, lineterminator="\n")


def _code_column(raw, name, value_map, row_numbers):
    if value_map is not None:
        codes = raw.map(value_map)
        bad = codes.isna()
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise MappingError(
                f"value {raw.iloc[i]!r} in column {name!r} (row {row_numbers[i]}) has no mapping",
                row=int(row_numbers[i]), column=name, value=raw.iloc[i],
            )
        return codes.astype(np.int64).to_numpy()
    try:
        return raw.astype(np.int64).to_numpy()
    except ValueError:
        for i, v in enumerate(raw):
            try:
                int(v)
            except ValueError:
                raise MappingError(
                    f"value {v!r} in column {name!r} (row {row_numbers[i]}) is not an integer code"
                    " and no value map was given",
                    row=int(row_numbers[i]), column=name, value=v,
                ) from None
        raise


def from_frame(frame, schema, value_maps=None, id_column=ID_COLUMN):
    """Build a :class:`Dataset` from a string-valued DataFrame.

    Rows with a missing value in any schema column are dropped and counted
    in ``Dataset.n_dropped``. Row numbers in error messages are 0-based
    positions in ``frame``.
    """
    value_maps = value_maps or {}
    missing_cols = [c for c in schema.attributes if c not in frame.columns]
    if missing_cols:
        raise SchemaError(f"columns missing from data: {missing_cols}")
    cols = list(schema.attributes)
    has_ids = id_column is not None and id_column in frame.columns
    if has_ids:
        cols = [id_column, *cols]
    sub = frame[cols].astype(str).apply(lambda c: c.str.strip())
    keep = ~sub.isin(MISSING_TOKENS).any(axis=1).to_numpy()
    n_dropped = int((~keep).sum())
    if n_dropped:
        logger.info("dropped %d rows with missing values", n_dropped)
    row_numbers = np.flatnonzero(keep)
    sub = sub[keep]

    s_raw = sub[schema.protected_attr]
    s_map = value_maps.get(schema.protected_attr)
    if s_map is not None:
        s_raw = s_raw.map(lambda v: s_map.get(v, v))
    s = np.full(len(sub), -1, dtype=np.int8)
    s[(s_raw == schema.protected_pos).to_numpy()] = 1
    s[(s_raw == schema.protected_neg).to_numpy()] = 0
    if (s < 0).any():
        i = int(np.flatnonzero(s < 0)[0])
        raise MappingError(
            f"protected value {s_raw.iloc[i]!r} (row {row_numbers[i]}) is neither "
            f"{schema.protected_pos!r} nor {schema.protected_neg!r}",
            row=int(row_numbers[i]), column=schema.protected_attr, value=s_raw.iloc[i],
        )

    y_raw = sub[schema.outcome_attr]
    y_map = value_maps.get(schema.outcome_attr)
    if y_map is not None:
        y_raw = y_raw.map(lambda v: y_map.get(v, v))
    y = (y_raw == schema.outcome_pos).to_numpy().astype(np.int8)
    if schema.outcome_neg is not None:
        bad = ~y_raw.isin([schema.outcome_pos, schema.outcome_neg]).to_numpy()
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise MappingError(
                f"outcome value {y_raw.iloc[i]!r} (row {row_numbers[i]}) is not a known label",
                row=int(row_numbers[i]), column=schema.outcome_attr, value=y_raw.iloc[i],
            )

    t = _code_column(sub[schema.treatment_attr], schema.treatment_attr,
                     value_maps.get(schema.treatment_attr), row_numbers)
    x = np.column_stack(
        [_code_column(sub[c], c, value_maps.get(c), row_numbers) for c in schema.covariates]
    ) if schema.covariates else np.empty((len(sub), 0), dtype=np.int64)
    ids = sub[id_column].astype(np.int64).to_numpy() if has_ids else None
    return Dataset(schema, s, t, x, y, ids=ids, n_dropped=n_dropped)


def load_csv(path, schema, value_maps=None, id_column=ID_COLUMN):
    """Read a UTF-8, comma-separated file with a header row.

    ``value_maps`` maps attribute name to a ``{raw label: code}`` dict.
    Treatment and covariate columns without a map must already hold
    integer codes. If the file has a ``row_id`` column it supplies the
    record ids.
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    return from_frame(frame, schema, value_maps, id_column=id_column)


def partition(d):
    """Split into (D+, D-) by the protected attribute."""
    if len(d) == 0:
        raise DegeneratePartitionError("cannot partition an empty dataset")
    plus = d.subset(d.s == 1)
    minus = d.subset(d.s == 0)
    if len(plus) == 0 or len(minus) == 0:
        empty = d.schema.protected_pos if len(plus) == 0 else d.schema.protected_neg
        raise DegeneratePartitionError(f"no records with {d.schema.protected_attr}={empty}")
    return plus, minus


def matching_mask(d, record_id, match_attrs=None, include_treatment=True):
    """Boolean mask of records sharing ``record_id``'s match attributes (and treatment)."""
    match_attrs = d.schema.match_attrs if match_attrs is None else tuple(match_attrs)
    i = d.position(record_id)
    mask = np.ones(len(d), dtype=bool)
    for name in match_attrs:
        col = d.column(name)
        mask &= col == col[i]
    if include_treatment:
        mask &= d.t == d.t[i]
    return mask


def similar_subset(d, record_id, match_attrs=None, k_min=10):
    """Situation-testing comparators (I+, I-) for one record.

    Members share the record's values on ``match_attrs`` and its treatment
    level; the record itself lands on its own side.
    """
    mask = matching_mask(d, record_id, match_attrs)
    group = d.subset(mask)
    plus = group.subset(group.s == 1)
    minus = group.subset(group.s == 0)
    if len(plus) < k_min or len(minus) < k_min:
        raise InsufficientComparatorsError(
            f"record {record_id}: {len(plus)} comparators with "
            f"{d.schema.protected_pos}, {len(minus)} with {d.schema.protected_neg}; need {k_min}"
        )
    return plus, minus
