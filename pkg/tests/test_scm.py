import itertools
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset, make_schema
from equal_effort.curves import make_subgroups
from equal_effort.exceptions import (
    GraphCycleError,
    IdentifiabilityError,
    SchemaError,
    ZeroProbabilityError,
)
from equal_effort.scm import (
    CausalGraph,
    ScmBackend,
    ScmModel,
    fit_cpts,
    parse_graph,
    post_intervention,
)


def test_minimal_graph():
    sc = make_schema(covariates=(), levels=(0, 1))
    g = parse_graph("S -> Y\nT -> Y\n", sc)
    assert g.parents["Y"] == ("S", "T")
    g.validate_schema(sc)


def test_cycle_is_reported():
    with pytest.raises(GraphCycleError) as info:
        parse_graph("A -> B\nB -> A\n")
    assert set(info.value.cycle) == {"A", "B"}


def test_unknown_node_and_outcome_children():
    sc = make_schema(covariates=("X1",), levels=(0, 1))
    with pytest.raises(SchemaError):
        parse_graph("S -> Y\nT -> Y\nX1 -> Y\nQ -> Y\n", sc)
    with pytest.raises(SchemaError):
        parse_graph("S -> Y\nT -> Y\nY -> X1\n", sc)


def test_tiers_and_comments():
    g = parse_graph("# header\ntier 1: A\ntier 2: B\nA -> B  # trailing\nnodes: C\n")
    assert g.tiers == {"A": 1, "B": 2}
    assert "C" in g.nodes
    with pytest.raises(SchemaError):
        parse_graph("tier 1: A\ntier 2: B\nB -> A\n")
    assert parse_graph(g.to_text()).edges == g.edges


def chain_data(n, seed, alpha=1.0):
    """S -> T -> Y plus X1 -> T, from known CPTs."""
    rng = np.random.default_rng(seed)
    s = rng.random(n) < 0.4
    x = rng.random(n) < 0.5
    p_t1 = np.where(x, 0.7, 0.3)
    t = (rng.random(n) < p_t1).astype(int)
    y = rng.random(n) < np.where(t == 1, 0.8, 0.2) - 0.1 * s
    d = make_dataset(s.astype(int), t, x.astype(int).reshape(-1, 1), y.astype(int), levels=(0, 1))
    g = parse_graph("S -> Y\nT -> Y\nX1 -> T\n", d.schema)
    return d, g


def test_cpt_frequency_without_smoothing():
    d = make_dataset([1, 0, 1, 0], [0, 1, 0, 1], [[0], [0], [1], [1]], [1, 0, 0, 0], levels=(0, 1))
    g = CausalGraph(["S", "T", "X1", "Y"], [])
    m = fit_cpts(d, g, alpha=0.0)
    assert m.cpts["Y"][1] == 0.25


def test_unobserved_parent_configuration_is_uniform():
    # (S=1, X1=1) never occurs
    d = make_dataset([1, 0, 0, 1], [0, 1, 0, 1], [[0], [1], [0], [0]], [1, 0, 1, 0], levels=(0, 1))
    g = parse_graph("S -> Y\nX1 -> Y\nT -> Y\n", d.schema)
    for alpha in (0.0, 1.0):
        m = fit_cpts(d, g, alpha=alpha)
        assert m.cpts["Y"][1, 1, :, 1] == pytest.approx([0.5, 0.5])


def test_cpts_normalized():
    d, g = chain_data(500, 0)
    m = fit_cpts(d, g)
    for v, cpt in m.cpts.items():
        assert np.abs(cpt.sum(axis=-1) - 1).max() <= 1e-9
        assert (cpt >= 0).all()
        assert m.domains[v].tolist() == np.unique(d.column(v)).tolist()


def allocate(parent_mask, p):
    """Binary child whose frequency in each parent cell is p rounded to a count."""
    child = np.zeros(len(parent_mask), dtype=bool)
    for cell, prob in ((parent_mask, p[1]), (~parent_mask, p[0])):
        idx = np.flatnonzero(cell)
        child[idx[: int(round(prob * len(idx)))]] = True
    return child


def test_three_node_chain_recovered():
    # X1 -> T -> Y with known CPTs, drawn by exact proportional allocation
    n = 500
    x = np.arange(n) < 200
    t = allocate(x, (0.25, 0.75))
    y = allocate(t, (0.3, 0.8))
    order = np.random.default_rng(0).permutation(n)
    x, t, y = x[order], t[order], y[order]
    d = make_dataset(np.arange(n) % 2, t.astype(int), x.astype(int).reshape(-1, 1), y.astype(int),
                     levels=(0, 1))
    g = CausalGraph(["X1", "T", "Y"], [("X1", "T"), ("T", "Y")])
    m = fit_cpts(d, g)
    assert m.cpts["X1"][1] == pytest.approx(0.4, abs=0.05)
    assert m.cpts["T"][:, 1] == pytest.approx([0.25, 0.75], abs=0.05)
    assert m.cpts["Y"][:, 1] == pytest.approx([0.3, 0.8], abs=0.05)


def test_unsmoothed_cpts_are_empirical_frequencies():
    rng = np.random.default_rng(0)
    n = 500
    x = rng.random(n) < 0.5
    t = rng.random(n) < np.where(x, 0.75, 0.25)
    y = rng.random(n) < np.where(t, 0.8, 0.3)
    d = make_dataset(np.arange(n) % 2, t.astype(int), x.astype(int).reshape(-1, 1), y.astype(int),
                     levels=(0, 1))
    g = CausalGraph(["X1", "T", "Y"], [("X1", "T"), ("T", "Y")])
    m = fit_cpts(d, g, alpha=0.0)
    assert m.cpts["X1"][1] == pytest.approx(x.mean(), abs=1e-12)
    assert m.cpts["T"][:, 1] == pytest.approx([t[~x].mean(), t[x].mean()], abs=1e-12)
    assert m.cpts["Y"][:, 1] == pytest.approx([y[~t].mean(), y[t].mean()], abs=1e-12)


def test_single_factor_truncation():
    d = make_dataset([1, 0, 1, 0, 1], [0, 0, 1, 1, 1], np.empty((5, 0)), [0, 1, 1, 1, 0],
                     covariates=(), levels=(0, 1))
    m = fit_cpts(d, CausalGraph(["T", "Y"], [("T", "Y")]))
    for t in (0, 1):
        assert post_intervention(m, t) == m.cpts["Y"][t, 1]


def test_descendant_condition_not_identified():
    d, g = chain_data(200, 1)
    m = fit_cpts(d, g)
    with pytest.raises(SchemaError):
        post_intervention(m, 1, {"Y": 1})
    g2 = parse_graph("S -> Y\nT -> Y\nT -> X1\n", d.schema)
    with pytest.raises(IdentifiabilityError):
        post_intervention(fit_cpts(d, g2), 1, {"X1": 0})


def test_zero_probability_condition():
    d = make_dataset([1, 0, 0, 1], [0, 1, 0, 1], [[0], [1], [0], [0]], [1, 0, 1, 0], levels=(0, 1))
    g = parse_graph("S -> X1\nS -> Y\nX1 -> Y\nT -> Y\n", d.schema)
    m = fit_cpts(d, g, alpha=0.0)
    with pytest.raises(ZeroProbabilityError):
        post_intervention(m, 0, {"S": 1, "X1": 1})


def test_complement_and_no_path():
    d, g = chain_data(400, 2)
    m = fit_cpts(d, g)
    neg = replace(m, outcome_pos=0, _do_cache={})
    for t in (0, 1):
        for z in ({}, {"S": 1}, {"X1": 0, "S": 0}, {"T": 1}, {"T": 0, "S": 1}):
            assert post_intervention(m, t, z) + post_intervention(neg, t, z) == pytest.approx(1, abs=1e-9)
    g0 = parse_graph("S -> Y\nX1 -> T\nnodes: T\n", d.schema)
    m0 = fit_cpts(d, g0)
    assert post_intervention(m0, 0, {"S": 1}) == post_intervention(m0, 1, {"S": 1})


def test_law_of_total_expectation():
    d, g = chain_data(400, 3)
    m = fit_cpts(d, g)
    joint = m.joint()
    variables = list(g.nodes)
    for t in (0, 1):
        total = 0.0
        for s, x in itertools.product((0, 1), (0, 1)):
            p_z = joint[tuple({"S": s, "X1": x}.get(v, slice(None)) for v in variables)].sum()
            total += p_z * post_intervention(m, t, {"S": s, "X1": x})
        assert total == pytest.approx(post_intervention(m, t), abs=1e-9)


# -- brute-force oracle ----------------------------------------------------

NAMES = ("A", "B", "C", "D")


@st.composite
def random_scm(draw):
    order = draw(st.permutations(NAMES))
    edges = [(order[i], order[j]) for i in range(4) for j in range(i + 1, 4) if draw(st.booleans())]
    g = CausalGraph(NAMES, edges)
    cpts = {}
    for v in NAMES:
        k = len(g.parents[v])
        p1 = np.array(draw(st.lists(st.floats(0.05, 0.95), min_size=2 ** k, max_size=2 ** k)))
        cpts[v] = np.stack([1 - p1, p1], axis=-1).reshape((2,) * k + (2,))
    T, Y = draw(st.lists(st.sampled_from(NAMES), min_size=2, max_size=2, unique=True))
    m = ScmModel(g, {v: np.array([0, 1]) for v in NAMES}, cpts, T, Y)
    free = [v for v in NAMES if v not in g.descendants(T) and v not in (T, Y)]
    zvars = draw(st.lists(st.sampled_from(free), unique=True)) if free else []
    z = {v: draw(st.integers(0, 1)) for v in zvars}
    if draw(st.booleans()):
        z[T] = draw(st.integers(0, 1))
    return m, draw(st.integers(0, 1)), z


def _factor(m, v, world):
    pa = tuple(world[p] for p in m.graph.parents[v])
    return m.cpts[v][pa + (world[v],)]


def oracle(m, t, z):
    """Truncated factorization summed over all 16 worlds."""
    T, Y = m.treatment, m.outcome
    worlds = [dict(zip(NAMES, w)) for w in itertools.product((0, 1), repeat=4)]

    def p_obs(w):
        return np.prod([_factor(m, v, w) for v in NAMES])

    def p_do(w):
        w = {**w, T: t}
        return np.prod([_factor(m, v, w) for v in NAMES if v != T])

    if T not in z:
        num = sum(p_do(w) for w in worlds if w[T] == 0 and w[Y] == 1
                  and all(w[k] == v for k, v in z.items()))
        den = sum(p_obs(w) for w in worlds if all(w[k] == v for k, v in z.items()))
        return num / den
    # effect on those observed at T = z[T]: sum_nd P(y_t | nd) P(nd | z)
    nd = [v for v in NAMES if v not in m.graph.descendants(T) and v not in (T, Y)]
    total, den = 0.0, 0.0
    for vals in itertools.product((0, 1), repeat=len(nd)):
        a = dict(zip(nd, vals))
        if any(a[k] != v for k, v in z.items() if k in a):
            continue
        match = [w for w in worlds if all(w[k] == v for k, v in a.items())]
        p_nd_z = sum(p_obs(w) for w in match if w[T] == z[T])
        do_nd = sum(p_do(w) for w in match if w[T] == 0)
        do_nd_y = sum(p_do(w) for w in match if w[T] == 0 and w[Y] == 1)
        total += p_nd_z * do_nd_y / do_nd
        den += p_nd_z
    return total / den


@settings(max_examples=200, deadline=None)
@given(random_scm())
def test_matches_enumeration_oracle(case):
    m, t, z = case
    assert post_intervention(m, t, z) == pytest.approx(oracle(m, t, z), abs=1e-12)


# -- backend ---------------------------------------------------------------


def test_backend_drops_descendant_conditions(gap_data):
    g = parse_graph("S -> Y\nT -> Y\nT -> X1\nX2 -> T\nX1 -> Y\n", gap_data.schema)
    b = ScmBackend(g).fit(gap_data)
    plus, _ = make_subgroups(gap_data, "group:X1=1,X2=0")
    with pytest.warns(RuntimeWarning, match="X1"):
        z = b.conditioning(plus)
    assert z == {"S": 1, "X2": 0}


def test_backend_requires_graph(gap_data):
    with pytest.raises(SchemaError):
        ScmBackend().fit(gap_data)


def test_backend_curve_values(gap_data, syn_graph):
    b = ScmBackend(syn_graph).fit(gap_data)
    plus, minus = make_subgroups(gap_data)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cp = b.outcome_curve(plus)
    assert cp.values == pytest.approx([post_intervention(b.model_, t, {"S": 1}) for t in range(5)])
