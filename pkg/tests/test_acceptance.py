"""End-to-end acceptance checks.

Each test appends one ``CRITERION n: PASS|FAIL - detail`` line, which the
terminal summary repeats, and then asserts the same condition.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from equal_effort import synthetic
from equal_effort.adult import data_path
from equal_effort.config import REGENERATE_STREAM, derive_seed
from equal_effort.dataset import matching_mask
from equal_effort.effort import detect, make_backend
from equal_effort.removal import fit_fair, regenerate, utility_loss, verify_repair
from equal_effort.scm import load_graph

from conftest import ACCEPTANCE_LINES

TESTS = Path(__file__).resolve().parent
BACKENDS = ("weighting", "regression", "scm")

# published expectation tables; columns follow BACKENDS, males first
TABLE_SYSTEM = {
    "Male": np.array([
        [.196, .086, .164],
        [.269, .214, .239],
        [.513, .491, .498],
        [.736, .781, .741],
        [.842, .933, .859],
    ]),
    "Female": np.array([
        [.048, .026, .057],
        [.066, .051, .075],
        [.211, .190, .221],
        [.416, .497, .469],
        [.485, .807, .706],
    ]),
}
# rows are education 1..4 for the group whose recorded education is 0
TABLE_GROUP = {
    "Male": np.array([
        [.225, .232, .227],
        [.457, .462, .467],
        [.692, .694, .719],
        [.810, .870, .842],
    ]),
    "Female": np.array([
        [.071, .084, .081],
        [.205, .205, .224],
        [.418, .411, .497],
        [.497, .693, .754],
    ]),
}
TOL_SYSTEM, TOL_SYSTEM_REGRESSION, TOL_GROUP = 0.05, 0.02, 0.06

PROPERTY_TESTS = [
    "test_effort.py::test_discrepancy_antisymmetric",
    "test_effort.py::test_relabeling_negates",
    "test_effort.py::test_min_effort_monotone_in_gamma",
    "test_effort.py::test_aed_singleton",
    "test_effort.py::test_laisant_form_matches_inverse_quadrature",
    "test_effort.py::test_aed_continuous_matches_trapezoid",
    "test_scm.py::test_matches_enumeration_oracle",
    "test_propensity.py::test_no_confounder_reduction_is_exact",
    "test_removal.py::test_penalty_off_is_group_ols",
    "test_removal.py::test_regenerate_preserves_and_reproduces",
]


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


@pytest.fixture(scope="module")
def adult_graph(adult):
    return load_graph(data_path("adult_graph.txt"), adult.schema)


@pytest.fixture(scope="module")
def backends(adult, adult_graph):
    fitted = {}
    for name in BACKENDS:
        b = make_backend(name, graph=adult_graph)
        fitted[name] = b.fit(adult)
    return fitted


def curves_at(adult, backends, level, gammas):
    reports = {name: detect(adult, b, gammas=gammas, level=level) for name, b in backends.items()}
    table = {
        "Male": np.column_stack([reports[b].curve_plus.values for b in BACKENDS]),
        "Female": np.column_stack([reports[b].curve_minus.values for b in BACKENDS]),
    }
    return reports, table


def test_criterion_1_system_table(adult, adult_graph):
    start = time.perf_counter()
    fitted = {name: make_backend(name, graph=adult_graph).fit(adult) for name in BACKENDS}
    _, got = curves_at(adult, fitted, "system", (0.5,))
    elapsed = time.perf_counter() - start
    tol = np.array([TOL_SYSTEM, TOL_SYSTEM_REGRESSION, TOL_SYSTEM])
    worst, misses = 0.0, 0
    for sex in ("Male", "Female"):
        err = np.abs(got[sex] - TABLE_SYSTEM[sex])
        misses += int(np.sum(~(err <= tol)))
        worst = max(worst, float(np.nanmax(err)))
    ok = misses == 0 and elapsed < 60
    record(1, ok, f"{30 - misses}/30 cells within tolerance, max |error| {worst:.3f}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_gamma_07(adult, backends):
    r = detect(adult, backends["scm"], gammas=(0.7,))
    pp, pm = r.profile.psi_plus[0], r.profile.psi_minus[0]
    ok = pp == 3 and pm == 4 and r.verdict and abs(r.profile.delta[0]) == 1
    record(2, ok, f"scm psi+={pp} psi-={pm} delta={r.profile.delta[0]} verdict={r.verdict}")
    assert ok


def test_criterion_3_group_table(adult, backends):
    reports, got = curves_at(adult, backends, "group:education=0", (0.5,))
    worst, misses = 0.0, 0
    for sex in ("Male", "Female"):
        err = np.abs(got[sex][1:] - TABLE_GROUP[sex])
        misses += int(np.sum(~(err <= TOL_GROUP)))
        worst = max(worst, float(np.nanmax(err)))
    psi = {b: (reports[b].profile.psi_plus_level if reports[b].profile.psi_plus_level is not None
               else reports[b].profile.psi_plus)[0] for b in BACKENDS}
    psi_m = {b: (reports[b].profile.psi_minus_level if reports[b].profile.psi_minus_level is not None
                 else reports[b].profile.psi_minus)[0] for b in BACKENDS}
    psi_ok = all(psi[b] == 3 and psi_m[b] == 4 for b in BACKENDS)
    ok = misses == 0 and psi_ok
    shown = ", ".join(f"{b} {psi[b]}/{psi_m[b]}" for b in BACKENDS)
    record(3, ok, f"{24 - misses}/24 cells within {TOL_GROUP}, max |error| {worst:.3f}; "
                  f"psi(0.5) male/female: {shown}")
    assert ok


def most_matched_female(adult):
    """Female, education 0 record with the largest smaller comparator side."""
    sc = adult.schema
    frame = pd.DataFrame(adult.x, columns=sc.covariates)
    frame["s"], frame["t"], frame["id"] = adult.s, adult.t, adult.ids
    keys = list(sc.match_attrs) + ["t"]
    counts = frame.groupby(keys)["s"].agg(plus="sum", size="size")
    counts["minus"] = counts["size"] - counts["plus"]
    counts["k"] = counts[["plus", "minus"]].min(axis=1)
    cand = frame[(frame.s == 0) & (frame.t == 0)].join(counts["k"], on=keys)
    best = cand.sort_values(["k", "id"], ascending=[False, True]).iloc[0]
    return int(best["id"]), int(best["k"])


def test_criterion_4_individual(adult, backends):
    rid, k = most_matched_female(adult)
    mask = matching_mask(adult, rid)
    assert min((adult.s[mask] == 1).sum(), (adult.s[mask] == 0).sum()) == k
    parts = []
    ok = True
    for name, b in backends.items():
        r = detect(adult, b, gammas=(0.5,), level=f"individual:{rid}", k_min=1)
        prof = r.profile
        pp = (prof.psi_plus_level if prof.psi_plus_level is not None else prof.psi_plus)[0]
        pm = (prof.psi_minus_level if prof.psi_minus_level is not None else prof.psi_minus)[0]
        ok &= bool(pp == 3 and pm == 4)
        parts.append(f"{name} {pp}/{pm}")
    record(4, ok, f"record {rid} (at least {k} comparators per side), psi(0.5) male/female: " + ", ".join(parts))
    assert ok


def test_criterion_5_repair(adult):
    pair = fit_fair(adult, 5.0)
    repaired = regenerate(adult, pair, derive_seed(1, REGENERATE_STREAM))
    after = verify_repair(repaired, "regression", tau=0.5)
    diff = after.mean_curve_difference
    loss = utility_loss(adult, repaired)
    ok = abs(diff) <= 0.05 and not after.verdict and 1e4 <= loss <= 1e5
    record(5, ok, f"mean curve difference {diff:+.4f}, post AED {after.aed:+.3f} "
                  f"verdict={after.verdict}, chi-square {loss:.0f}")
    assert ok


def test_criterion_6_property_suite():
    start = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_TESTS],
        cwd=TESTS, capture_output=True, text=True,
    )
    elapsed = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 30
    record(6, ok, f"{summary} ({elapsed:.1f}s wall)")
    assert ok


def test_criterion_7_synthetic():
    start = time.perf_counter()
    d = synthetic.make_dataset(seed=0, gap=True)
    g = synthetic.graph()
    deltas = {}
    for name in BACKENDS:
        r = detect(d, name, gammas=synthetic.GAP_GAMMAS, graph=g)
        lv = r.profile.delta_level
        deltas[name] = [float(v) for v in lv[~np.isnan(lv)]]
    found = all(v and all(abs(x) == 1 for x in v) for v in deltas.values())
    pair = fit_fair(d, 5.0, gammas=synthetic.GAP_GAMMAS)
    after = verify_repair(regenerate(d, pair, derive_seed(0, REGENERATE_STREAM)),
                          gammas=synthetic.GAP_GAMMAS, tau=0.5)
    elapsed = time.perf_counter() - start
    ok = found and abs(after.aed) < 0.5 and elapsed < 30
    shown = ", ".join(f"{b} {v}" for b, v in deltas.items())
    record(7, ok, f"delta per backend: {shown}; re-audited AED {after.aed:+.3f}; {elapsed:.1f}s")
    assert ok
