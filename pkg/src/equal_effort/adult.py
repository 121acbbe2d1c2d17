"""UCI Adult loading and preprocessing.

The raw UCI files ``adult.data`` and ``adult.test`` ship in ``equal_effort/data``.
Seven attributes are kept; education is grouped into five ordinal levels and
age, marital status, workclass and hours are each binarized.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import ID_COLUMN, MISSING_TOKENS, Schema, from_frame
from .exceptions import MappingError

RAW_COLUMNS = (
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
)

EDUCATION_LEVELS = {
    0: ("Preschool", "1st-4th", "5th-6th"),
    1: ("7th-8th", "9th", "10th"),
    2: ("11th", "12th", "HS-grad"),
    3: ("Some-college", "Assoc-voc", "Assoc-acdm"),
    4: ("Bachelors", "Masters", "Prof-school", "Doctorate"),
}
EDUCATION_MAP = {label: level for level, labels in EDUCATION_LEVELS.items() for label in labels}

ADULT_SCHEMA = Schema(
    protected_attr="sex",
    protected_pos="Male",
    protected_neg="Female",
    treatment_attr="education",
    treatment_levels=(0, 1, 2, 3, 4),
    outcome_attr="income",
    outcome_pos=">50K",
    outcome_neg="<=50K",
    covariates=("age", "marital-status", "workclass", "hours-per-week"),
    match_attrs=("age", "marital-status", "workclass", "hours-per-week"),
)


@dataclass(frozen=True)
class AdultSplits:
    """Binarization rules; each covariate is coded 1 when the rule holds."""

    age_above: int = 37
    hours_at_least: int = 40
    married: tuple = ("Married-civ-spouse", "Married-AF-spouse")
    workclass: tuple = ("Private",)


def data_path(name):
    return Path(str(resources.files("equal_effort") / "data" / name))


def load_adult_raw(paths=None):
    """Concatenate the raw UCI files into one string-valued frame.

    The test file's ``>50K.`` labels lose their trailing period. Record ids
    are row positions in the concatenation (train rows first).
    """
    if paths is None:
        paths = [data_path("adult.data"), data_path("adult.test")]
    frames = []
    for p in paths:
        f = pd.read_csv(
            p, names=list(RAW_COLUMNS), header=None, dtype=str, keep_default_na=False,
            skipinitialspace=True, comment="|", skip_blank_lines=True,
        )
        frames.append(f)
    raw = pd.concat(frames, ignore_index=True)
    raw = raw.apply(lambda c: c.str.strip())
    raw = raw[raw["age"] != ""].reset_index(drop=True)
    raw["income"] = raw["income"].str.rstrip(".")
    return raw


def preprocess_adult(raw, splits=None, schema=ADULT_SCHEMA):
    """Code a raw Adult frame (original UCI labels) into a :class:`Dataset`."""
    splits = splits or AdultSplits()
    raw = raw.astype(str).apply(lambda c: c.str.strip())
    missing = raw[list(schema.attributes)].isin(MISSING_TOKENS).any(axis=1)
    ok = raw[~missing]

    unknown = ~ok["education"].isin(EDUCATION_MAP)
    if unknown.any():
        i = ok.index[np.flatnonzero(unknown.to_numpy())[0]]
        raise MappingError(
            f"unknown education label {raw.at[i, 'education']!r} (row {i})",
            row=int(i), column="education", value=raw.at[i, "education"],
        )

    coded = pd.DataFrame(index=raw.index, dtype=str)
    coded[ID_COLUMN] = raw[ID_COLUMN] if ID_COLUMN in raw.columns else raw.index.astype(str)
    coded["sex"] = raw["sex"]
    coded["education"] = raw["education"].map(EDUCATION_MAP)
    coded["age"] = (pd.to_numeric(ok["age"]) > splits.age_above).astype(int)
    coded["marital-status"] = ok["marital-status"].isin(splits.married).astype(int)
    coded["workclass"] = ok["workclass"].isin(splits.workclass).astype(int)
    coded["hours-per-week"] = (pd.to_numeric(ok["hours-per-week"]) >= splits.hours_at_least).astype(int)
    coded["income"] = raw["income"]
    # rows dropped above stay NaN here and are counted by from_frame
    coded = coded.astype(object).where(coded.notna(), "").astype(str)
    for c in ("education", "age", "marital-status", "workclass", "hours-per-week"):
        coded[c] = coded[c].str.replace(r"\.0$", "", regex=True)
    return from_frame(coded, schema)


def load_adult(splits=None):
    """Bundled UCI Adult, preprocessed."""
    return preprocess_adult(load_adult_raw(), splits=splits)
