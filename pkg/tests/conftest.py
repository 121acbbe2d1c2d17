import numpy as np
import pytest

from equal_effort import synthetic
from equal_effort.dataset import Dataset, Schema

# lines printed by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_schema(covariates=("X1", "X2"), levels=(0, 1, 2, 3, 4), match=None):
    return Schema(
        protected_attr="S", protected_pos="s+", protected_neg="s-",
        treatment_attr="T", treatment_levels=levels,
        outcome_attr="Y", outcome_pos="1", outcome_neg="0",
        covariates=covariates, match_attrs=covariates if match is None else match,
    )


def make_dataset(s, t, x, y, covariates=None, levels=None):
    x = np.asarray(x)
    if covariates is None:
        k = x.shape[1] if x.ndim == 2 else 0
        covariates = tuple(f"X{j + 1}" for j in range(k))
    if levels is None:
        levels = tuple(range(max(int(np.max(t)) + 1, 2))) if len(t) else (0, 1)
    sc = make_schema(tuple(covariates), levels)
    return Dataset(sc, s, t, np.asarray(x).reshape(len(s), len(covariates)), y)


@pytest.fixture(scope="session")
def gap_data():
    return synthetic.make_dataset(seed=0, gap=True)


@pytest.fixture(scope="session")
def fair_data():
    return synthetic.make_dataset(seed=0, gap=False)


@pytest.fixture(scope="session")
def syn_graph():
    return synthetic.graph()


@pytest.fixture(scope="session")
def adult():
    from equal_effort.adult import load_adult

    return load_adult()
