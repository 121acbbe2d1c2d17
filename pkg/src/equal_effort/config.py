"""Run configuration.

A run is described by an INI file. Relative paths are resolved against the
file's directory. Command-line flags override individual keys.

.. code-block:: ini

    [data]
    # csv: coded or labelled CSV with a header row (see [values.*])
    # adult-raw: UCI Adult files; path = bundled uses the shipped copy
    format = csv
    path = records.csv
    id_column = row_id

    [schema]
    protected = sex
    protected_pos = Male
    protected_neg = Female
    treatment = education
    treatment_levels = 0, 1, 2, 3, 4
    outcome = income
    outcome_pos = >50K
    outcome_neg = <=50K          ; optional, enables label checking
    covariates = age, hours
    match_attrs = age, hours     ; default: all covariates

    ; optional raw label -> code map, one section per column
    [values.education]
    HS-grad = 2

    [audit]
    backends = regression, weighting, scm
    level = system               ; system | group:attr=v,... | individual:<id>
    gammas = 0.1, 0.2, 0.3       ; or gamma_range = 0.2, 0.8
    tau = 0.5
    k_min = 10
    graph = graph.txt            ; required by the scm backend
                                 ; bundled:adult_graph.txt is the shipped Adult graph

    [repair]
    lambda = 5
    seed = 0
    reduction = mean

    [output]
    dir = out

Seeds
-----
All randomness comes from ``[repair] seed``. The Bernoulli draws of the
repair use ``numpy.random.SeedSequence([seed, REGENERATE_STREAM])``; further
random steps would take the next stream numbers.
"""

from __future__ import annotations

import configparser
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import Schema, load_csv
from .effort import BACKENDS, DEFAULT_GAMMAS, DEFAULT_TAU
from .exceptions import ConfigError
from .scm import load_graph

logger = logging.getLogger(__name__)

REGENERATE_STREAM = 1
DATA_FORMATS = ("csv", "adult-raw")


def derive_seed(seed, stream):
    """Independent child seed for one random step of a run."""
    return np.random.SeedSequence([int(seed), int(stream)])


def _floats(text):
    return tuple(float(v) for v in _names(text))


def _names(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


@dataclass
class RunConfig:
    data_path: Optional[Path] = None
    data_format: str = "csv"
    id_column: str = "row_id"
    schema: Optional[Schema] = None
    value_maps: dict = field(default_factory=dict)
    backends: tuple = ("regression",)
    level: str = "system"
    gammas: Optional[tuple] = None
    gamma_range: Optional[tuple] = None
    tau: float = DEFAULT_TAU
    k_min: Optional[int] = 10
    graph_path: Optional[Path] = None
    lam: float = 5.0
    seed: int = 0
    reduction: str = "mean"
    out_dir: Path = Path("out")

    def override(self, **changes):
        """Copy with the non-``None`` entries of ``changes`` applied."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    @property
    def gamma_spec(self):
        return {"gammas": self.gammas, "gamma_range": self.gamma_range}

    def validate(self):
        if self.data_format not in DATA_FORMATS:
            raise ConfigError(f"data format must be one of {DATA_FORMATS}")
        if self.data_path is None:
            raise ConfigError("no data path given")
        if self.data_format == "csv" and self.schema is None:
            raise ConfigError("a csv data source needs a [schema] section")
        unknown = [b for b in self.backends if b not in BACKENDS]
        if unknown or not self.backends:
            raise ConfigError(f"unknown backends {unknown}; choose from {sorted(BACKENDS)}")
        if "scm" in self.backends and self.graph_path is None:
            raise ConfigError("the scm backend requires a graph path")
        if self.level.startswith("individual") and not self.k_min:
            raise ConfigError("individual-level audits require k_min")
        if self.k_min is not None and self.k_min < 1:
            raise ConfigError("k_min must be at least 1")
        if self.tau < 0:
            raise ConfigError("tau must be non-negative")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError("reduction must be 'mean' or 'sum'")
        if self.gamma_range is not None and self.gammas is not None:
            raise ConfigError("give either gammas or gamma_range, not both")
        if self.gamma_range is not None:
            if len(self.gamma_range) != 2 or not self.gamma_range[0] < self.gamma_range[1]:
                raise ConfigError("gamma_range must be two increasing values")
            values = self.gamma_range
        else:
            values = self.gammas or DEFAULT_GAMMAS
        if any(not 0 < g < 1 for g in values):
            warnings.warn("outcome levels outside (0, 1) are unusual for binary outcomes",
                          UserWarning, stacklevel=2)
        return self

    # -- loading -----------------------------------------------------------

    def load_data(self):
        if self.data_format == "adult-raw":
            from .adult import ADULT_SCHEMA, load_adult_raw, preprocess_adult

            paths = None if str(self.data_path) == "bundled" else [self.data_path]
            return preprocess_adult(load_adult_raw(paths), schema=self.schema or ADULT_SCHEMA)
        return load_csv(self.data_path, self.schema, self.value_maps, id_column=self.id_column)

    def load_graph(self, schema):
        return None if self.graph_path is None else load_graph(self.graph_path, schema)


def _schema(sec):
    try:
        covs = _names(sec.get("covariates", ""))
        match = _names(sec["match_attrs"]) if "match_attrs" in sec else covs
        return Schema(
            protected_attr=sec["protected"],
            protected_pos=sec["protected_pos"],
            protected_neg=sec["protected_neg"],
            treatment_attr=sec["treatment"],
            treatment_levels=tuple(int(v) for v in _names(sec["treatment_levels"])),
            outcome_attr=sec["outcome"],
            outcome_pos=sec["outcome_pos"],
            covariates=covs,
            match_attrs=match,
            outcome_neg=sec.get("outcome_neg"),
        )
    except KeyError as e:
        raise ConfigError(f"[schema] is missing key {e.args[0]!r}") from None


def _path(base, value):
    if value is None or value == "bundled":
        return value
    if value.startswith("bundled:"):
        from .adult import data_path

        return data_path(value[len("bundled:"):])
    p = Path(value)
    return p if p.is_absolute() else base / p


def parse_config(text, base_dir="."):
    """Build a :class:`RunConfig` from INI text."""
    # ':' must not split keys, so labels such as 'a:b' survive
    cp = configparser.ConfigParser(delimiters=("=",), inline_comment_prefixes=(";",),
                                   interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    base = Path(base_dir)
    cfg = RunConfig()
    changes = {}
    try:
        if cp.has_section("data"):
            sec = cp["data"]
            changes["data_format"] = sec.get("format", "csv")
            path = sec.get("path")
            if path is None and changes["data_format"] == "adult-raw":
                path = "bundled"
            changes["data_path"] = _path(base, path)
            changes["id_column"] = sec.get("id_column", "row_id")
        if cp.has_section("schema"):
            changes["schema"] = _schema(cp["schema"])
        maps = {}
        for name in cp.sections():
            if name.startswith("values."):
                maps[name[len("values."):]] = {k: int(v) for k, v in cp[name].items()}
        changes["value_maps"] = maps
        if cp.has_section("audit"):
            sec = cp["audit"]
            if "backends" in sec:
                changes["backends"] = _names(sec["backends"])
            changes["level"] = sec.get("level", "system")
            if "gammas" in sec:
                changes["gammas"] = _floats(sec["gammas"])
            if "gamma_range" in sec:
                changes["gamma_range"] = _floats(sec["gamma_range"])
            if "tau" in sec:
                changes["tau"] = sec.getfloat("tau")
            if "k_min" in sec:
                changes["k_min"] = sec.getint("k_min")
            changes["graph_path"] = _path(base, sec.get("graph"))
        if cp.has_section("repair"):
            sec = cp["repair"]
            if "lambda" in sec:
                changes["lam"] = sec.getfloat("lambda")
            if "seed" in sec:
                changes["seed"] = sec.getint("seed")
            changes["reduction"] = sec.get("reduction", "mean")
        if cp.has_section("output"):
            changes["out_dir"] = _path(base, cp["output"].get("dir", "out"))
    except ValueError as e:
        raise ConfigError(f"bad config value: {e}") from None
    return cfg.override(**changes)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text, base_dir=path.parent)
