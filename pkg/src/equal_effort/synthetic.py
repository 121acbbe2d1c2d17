"""Synthetic data with a known effort gap.

Structural equations (all variables binary except T in 0..4)::

    S  ~ Bernoulli(0.5)
    X1 ~ Bernoulli(0.5)
    X2 ~ Bernoulli(0.5)
    T  ~ Categorical(softmax(log base + 0.4*k*(X1 - 0.5) + 0.3*k*(X2 - 0.5)))
    Y  ~ Bernoulli(a_S + SLOPE*T + 0.04*X1)

With ``a_plus - a_minus == SLOPE`` the s- curve is the s+ curve shifted up
by exactly one treatment level, so every reachable outcome level needs one
more level of treatment for s- than for s+.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset, Schema
from .scm import parse_graph

SLOPE = 0.18
A_PLUS = 0.18
BASE_T = np.array([0.15, 0.2, 0.3, 0.2, 0.15])

# Midway between consecutive curve values, so level minima are unambiguous.
# At 0.83 only s+ reaches the outcome.
GAP_GAMMAS = (0.29, 0.47, 0.65, 0.83)

SCHEMA = Schema(
    protected_attr="S",
    protected_pos="s+",
    protected_neg="s-",
    treatment_attr="T",
    treatment_levels=(0, 1, 2, 3, 4),
    outcome_attr="Y",
    outcome_pos="1",
    covariates=("X1", "X2"),
    match_attrs=("X1", "X2"),
    outcome_neg="0",
)

GRAPH_TEXT = """\
tier 1: S, X1, X2
tier 2: T
tier 3: Y
S -> Y
X1 -> T
X1 -> Y
X2 -> T
T -> Y
"""


def graph():
    return parse_graph(GRAPH_TEXT, SCHEMA)


def true_curve(side, gap=True):
    """Population E[Y(t)] for one group, t = 0..4."""
    a = A_PLUS if side == 1 or not gap else A_PLUS - SLOPE
    return a + SLOPE * np.arange(5) + 0.04 * 0.5


def make_dataset(n=20_000, seed=0, gap=True):
    """Draw ``n`` records; ``gap=False`` gives both groups the s+ equation."""
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 2, n)
    x = rng.integers(0, 2, (n, 2))
    k = np.arange(5)
    logits = (np.log(BASE_T)[None, :]
              + 0.4 * k[None, :] * (x[:, :1] - 0.5) + 0.3 * k[None, :] * (x[:, 1:] - 0.5))
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    t = (rng.random((n, 1)) > np.cumsum(p, axis=1)).sum(axis=1)
    a = np.where(s == 1, A_PLUS, A_PLUS - SLOPE if gap else A_PLUS)
    y = (rng.random(n) < a + SLOPE * t + 0.04 * x[:, 0]).astype(np.int8)
    return Dataset(SCHEMA, s, t, x, y)
