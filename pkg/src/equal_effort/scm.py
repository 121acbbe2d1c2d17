"""Discrete structural causal model backend.

The causal graph is read from an edge-list file; conditional probability
tables are Laplace-smoothed frequencies. Post-intervention queries are
answered exactly by enumerating the joint distribution: the treatment's own
factor is dropped and the treatment is fixed to the intervened level in
every other factor (truncated factorization).
"""

from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .curves import OutcomeCurve
from .exceptions import (
    GraphCycleError,
    IdentifiabilityError,
    SchemaError,
    ZeroProbabilityError,
)

logger = logging.getLogger(__name__)


class CausalGraph:
    """Directed acyclic graph over attribute names.

    Parameters
    ----------
    nodes : iterable of str
    edges : iterable of (parent, child)
    tiers : dict, optional
        Node name to tier number; edges may not point to an earlier tier.
    """

    def __init__(self, nodes, edges, tiers=None):
        self.nodes = tuple(dict.fromkeys(nodes))
        self.edges = tuple(dict.fromkeys((str(a), str(b)) for a, b in edges))
        self.tiers = dict(tiers or {})
        known = set(self.nodes)
        for a, b in self.edges:
            for end in (a, b):
                if end not in known:
                    raise SchemaError(f"edge {a} -> {b} uses undeclared node {end!r}")
            if a == b:
                raise GraphCycleError(f"self loop on {a!r}", cycle=[a, a])
        for a, b in self.edges:
            ta, tb = self.tiers.get(a), self.tiers.get(b)
            if ta is not None and tb is not None and ta > tb:
                raise SchemaError(f"edge {a} -> {b} points from tier {ta} back to tier {tb}")
        self.parents = {v: tuple(a for a, b in self.edges if b == v) for v in self.nodes}
        try:
            self.order = tuple(TopologicalSorter(self.parents).static_order())
        except CycleError as exc:
            cycle = exc.args[1]
            raise GraphCycleError(f"graph has a cycle: {' -> '.join(cycle)}", cycle=cycle) from None

    def __repr__(self):
        return f"CausalGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"

    def children(self, v):
        return tuple(b for a, b in self.edges if a == v)

    def descendants(self, v):
        seen, stack = set(), list(self.children(v))
        while stack:
            u = stack.pop()
            if u not in seen:
                seen.add(u)
                stack.extend(self.children(u))
        return seen

    def ancestors(self, v):
        seen, stack = set(), list(self.parents[v])
        while stack:
            u = stack.pop()
            if u not in seen:
                seen.add(u)
                stack.extend(self.parents[u])
        return seen

    def validate_schema(self, schema):
        """Check that graph nodes and schema attributes coincide and the outcome is a sink."""
        attrs = set(schema.attributes)
        unknown = set(self.nodes) - attrs
        if unknown:
            raise SchemaError(f"graph nodes not in schema: {sorted(unknown)}")
        absent = attrs - set(self.nodes)
        if absent:
            raise SchemaError(f"schema attributes missing from graph: {sorted(absent)}")
        if self.children(schema.outcome_attr):
            raise SchemaError(f"outcome {schema.outcome_attr!r} must have no children")

    def to_text(self):
        lines = []
        by_tier = {}
        for v, k in self.tiers.items():
            by_tier.setdefault(k, []).append(v)
        for k in sorted(by_tier):
            lines.append(f"tier {k}: " + ", ".join(by_tier[k]))
        isolated = [v for v in self.nodes if not any(v in e for e in self.edges) and v not in self.tiers]
        if isolated:
            lines.append("nodes: " + ", ".join(isolated))
        lines += [f"{a} -> {b}" for a, b in self.edges]
        return "\n".join(lines) + "\n"


_EDGE = re.compile(r"^(.+?)\s*->\s*(.+)$")
_TIER = re.compile(r"^tier\s+(\d+)\s*:\s*(.*)$", re.IGNORECASE)
_NODES = re.compile(r"^nodes?\s*:\s*(.*)$", re.IGNORECASE)


def parse_graph(text, schema=None):
    nodes, edges, tiers = [], [], {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if m := _TIER.match(line):
            names = [n.strip() for n in m.group(2).split(",") if n.strip()]
            for n in names:
                tiers[n] = int(m.group(1))
            nodes += names
        elif m := _NODES.match(line):
            nodes += [n.strip() for n in m.group(1).split(",") if n.strip()]
        elif m := _EDGE.match(line):
            a, b = m.group(1).strip(), m.group(2).strip()
            nodes += [a, b]
            edges.append((a, b))
        else:
            raise SchemaError(f"line {lineno}: cannot parse {line!r}")
    g = CausalGraph(nodes, edges, tiers)
    if schema is not None:
        g.validate_schema(schema)
    return g


def load_graph(path, schema=None):
    """Read an edge-list graph file.

    One ``parent -> child`` per line, ``#`` starts a comment. Optional
    ``tier <n>: a, b`` lines declare background tiers (checked, not used
    for discovery) and ``nodes: a, b`` declares isolated nodes.
    """
    return parse_graph(Path(path).read_text(encoding="utf-8"), schema)


@dataclass
class ScmModel:
    """Fitted discrete SCM.

    ``cpts[v]`` has one axis per parent (in ``graph.parents[v]`` order)
    followed by an axis over ``domains[v]``.
    """

    graph: CausalGraph
    domains: dict
    cpts: dict
    treatment: str
    outcome: str
    outcome_pos: int = 1
    alpha: float = 1.0
    _do_cache: dict = field(default_factory=dict, repr=False)

    def index(self, v, value):
        hits = np.flatnonzero(self.domains[v] == value)
        if hits.size == 0:
            raise ZeroProbabilityError(f"{v}={value} is outside the observed domain {self.domains[v].tolist()}")
        return int(hits[0])

    def _expand(self, v, variables, fixed=None):
        """CPT of ``v`` broadcast over ``variables``, optionally slicing fixed parents."""
        cpt = self.cpts[v]
        axes = [*self.graph.parents[v], v]
        if fixed:
            idx = tuple(fixed.get(a, slice(None)) for a in axes)
            cpt = cpt[idx]
            axes = [a for a in axes if a not in fixed]
        order = sorted(range(len(axes)), key=lambda k: variables.index(axes[k]))
        cpt = np.transpose(cpt, order)
        shape = [len(self.domains[u]) if u in axes else 1 for u in variables]
        return cpt.reshape(shape)

    def joint(self):
        """Observational joint over ``graph.nodes``."""
        if "obs" not in self._do_cache:
            variables = list(self.graph.nodes)
            out = np.ones([len(self.domains[u]) for u in variables])
            for v in variables:
                out = out * self._expand(v, variables)
            self._do_cache["obs"] = out
        return self._do_cache["obs"]

    def do_joint(self, t):
        """Post-intervention joint under do(T = t), over every node except T."""
        key = int(t)
        if key not in self._do_cache:
            ti = self.index(self.treatment, t)
            variables = [u for u in self.graph.nodes if u != self.treatment]
            out = np.ones([len(self.domains[u]) for u in variables])
            for v in variables:
                out = out * self._expand(v, variables, fixed={self.treatment: ti})
            self._do_cache[key] = out
        return self._do_cache[key]


def fit_cpts(d, g, alpha=1.0):
    """Estimate every node's conditional probability table from ``d``.

    Counts get ``alpha`` added to every cell; a parent configuration with no
    records (and ``alpha=0``) gets a uniform row.
    """
    sc = d.schema
    domains = {v: np.unique(d.column(v)) for v in g.nodes}
    codes = {v: np.searchsorted(domains[v], d.column(v)) for v in g.nodes}
    cpts = {}
    for v in g.nodes:
        axes = [*g.parents[v], v]
        shape = tuple(len(domains[a]) for a in axes)
        counts = np.zeros(shape)
        np.add.at(counts, tuple(codes[a] for a in axes), 1.0)
        counts += alpha
        total = counts.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            cpt = np.where(total > 0, counts / np.where(total > 0, total, 1.0), 1.0 / shape[-1])
        cpts[v] = cpt
    return ScmModel(g, domains, cpts, sc.treatment_attr, sc.outcome_attr, 1, alpha)


def _select(arr, variables, assignment):
    """Slice ``arr`` at the assigned values, keeping unassigned axes."""
    return arr[tuple(assignment.get(v, slice(None)) for v in variables)]


def post_intervention(m, t, z=None):
    """P(Y_t = y+ | z) by truncated factorization.

    ``z`` maps attribute name to code. Every conditioned attribute must be a
    non-descendant of the treatment. The treatment itself may appear in
    ``z`` (its observed level t0): the result is then the effect on the
    group currently at t0, sum_nd P(y_t | nd) P(nd | z, t0), with ``nd``
    ranging over all non-descendants of the treatment.
    """
    z = dict(z or {})
    g = m.graph
    T, Y = m.treatment, m.outcome
    unknown = set(z) - set(g.nodes)
    if unknown:
        raise SchemaError(f"conditioning attributes not in graph: {sorted(unknown)}")
    desc = g.descendants(T)
    if Y in z:
        raise SchemaError("cannot condition on the outcome")
    bad = sorted(set(z) & desc)
    if bad:
        raise IdentifiabilityError(f"{bad} are descendants of {T!r}; P(Y_t | z) is not identified this way")
    zi = {v: m.index(v, val) for v, val in z.items()}
    yi = m.index(Y, m.outcome_pos)
    variables = list(g.nodes)
    do_vars = [u for u in variables if u != T]
    pdo = m.do_joint(t)

    if T not in z:
        # P(empty assignment) is 1 by definition
        den = float(_select(m.joint(), variables, zi).sum()) if zi else 1.0
        if den <= 0:
            raise ZeroProbabilityError(f"P({z}) = 0")
        num = float(_select(pdo, do_vars, {**zi, Y: yi}).sum())
        return num / den

    # effect on the group at T = t0: average P(y_t | nd) over P(nd | z, t0)
    nd = [u for u in variables if u not in desc and u not in (T, Y)]
    pdo_nd_y = pdo.sum(axis=tuple(k for k, u in enumerate(do_vars) if u not in nd and u != Y))
    kept = [u for u in do_vars if u in nd or u == Y]
    y_axis = kept.index(Y)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_y_given_nd = np.take(pdo_nd_y, yi, axis=y_axis) / pdo_nd_y.sum(axis=y_axis)
    obs = m.joint().sum(axis=tuple(k for k, u in enumerate(variables) if u not in nd and u != T))
    obs_vars = [u for u in variables if u in nd or u == T]
    obs = np.take(obs, zi[T], axis=obs_vars.index(T))
    cond = np.zeros_like(obs)
    sel = tuple(zi.get(v, slice(None)) for v in nd)
    cond[sel] = obs[sel]
    den = float(cond.sum())
    if den <= 0:
        raise ZeroProbabilityError(f"P({z}) = 0")
    w = cond / den
    return float(np.sum(np.where(w > 0, w * np.nan_to_num(p_y_given_nd), 0.0)))


class ScmBackend(BaseEstimator):
    """Structural-causal-model estimates of subgroup potential outcomes.

    The subgroup is turned into an assignment z* over the protected
    attribute, the subgroup's conditions and, when the subgroup is fixed at
    one treatment level, that level. Conditions on descendants of the
    treatment cannot be identified and are dropped with a warning.

    Parameters
    ----------
    graph : CausalGraph or path
    alpha : float, default=1.0
        Laplace smoothing constant for the CPTs.
    """

    name = "scm"

    def __init__(self, graph=None, alpha=1.0):
        self.graph = graph
        self.alpha = alpha

    def fit(self, d, y=None):
        if self.graph is None:
            raise SchemaError("ScmBackend needs a causal graph")
        g = self.graph if isinstance(self.graph, CausalGraph) else load_graph(self.graph)
        g.validate_schema(d.schema)
        self.graph_ = g
        self.model_ = fit_cpts(d, g, self.alpha)
        self.levels_ = np.asarray(d.schema.treatment_levels)
        return self

    def conditioning(self, sub):
        check_is_fitted(self, "model_")
        sc = sub.schema
        desc = self.graph_.descendants(sc.treatment_attr)
        z = {sc.protected_attr: sub.side}
        dropped = []
        for name, value in sub.conditions.items():
            if name in desc:
                dropped.append(name)
            else:
                z[name] = value
        if dropped:
            warnings.warn(
                f"not conditioning on {dropped}: descendants of {sc.treatment_attr!r}",
                RuntimeWarning, stacklevel=3,
            )
        return z

    def outcome_curve(self, sub):
        z = self.conditioning(sub)
        values = []
        for t in self.levels_:
            try:
                values.append(post_intervention(self.model_, t, z))
            except ZeroProbabilityError:
                values.append(np.nan)
        return OutcomeCurve(self.name, sub.label, self.levels_, values)
