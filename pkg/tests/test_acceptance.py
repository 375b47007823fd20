"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are collected
into the "acceptance criteria" section of the terminal summary. The three
synthetic experiments run once per session at their default configuration.
"""
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import expit

from conftest import ACCEPTANCE_LINES
from oracles import fiedler_oracle, gradient_check, random_table_dist
from preflab.connectivity import GDAConfig, TestDistributionQ, VariationalConfig, variational_connectivity
from preflab.core import Cprd, TabularTripletDistribution, cprd_from_distribution
from preflab.design import bt_consistent_pair, uniform_negative
from preflab.evaluation import accuracy, accuracy_lower_bound
from preflab.experiments import ExperimentConfig, records_to_csv, run_experiment
from preflab.representability import ConditionalPair, check_bt_representable, product_distribution
from preflab.scorers import init_model, tabular_from_table
from preflab.training import TrainConfig, bt_population_loss, fit_population_gd, kl_decomposition

pytestmark = pytest.mark.acceptance


def report(k, ok, detail):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_01_kl_identity():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        m, k = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        dist = random_table_dist(rng, m, k)
        model = tabular_from_table(rng.normal(scale=2.0, size=(k, m)))
        dec = kl_decomposition(dist, model)
        worst = max(worst, abs(bt_population_loss(model, None, dist) - (dec.C + dec.Z * dec.expected_kl)))
    dt = time.perf_counter() - t0
    report(1, worst <= 1e-9 and dt < 5, f"max |L - (C + Z E[KL])| = {worst:.2e} over 200 instances, {dt:.2f} s")


def test_criterion_02_consistency():
    rng = np.random.default_rng(102)
    t0 = time.perf_counter()
    scores = rng.normal(size=(1, 5))
    dist = product_distribution(bt_consistent_pair(scores, uniform_negative(1, 5)))
    omega = cprd_from_distribution(dist)
    assert omega.support[0][~np.eye(5, dtype=bool)].all()
    fitted = fit_population_gd(dist, init_model("tabular", {"n_contexts": 1, "m": 5}, 0)).score_table()
    pred = expit(fitted[:, :, None] - fitted[:, None, :])
    err = float(np.max(np.abs(pred - omega.omega)[omega.support]))
    dt = time.perf_counter() - t0
    report(2, err <= 1e-3 and dt < 30, f"max |sigma(fitted margin) - omega| = {err:.2e}, {dt:.2f} s")


def test_criterion_03_representability():
    rng = np.random.default_rng(103)
    ok = 0
    for _ in range(100):
        k, m = int(rng.integers(1, 4)), int(rng.integers(2, 9))
        pp, pm = rng.gamma(1.0, size=(2, k, m))
        px = rng.gamma(1.0, size=k)
        pair = ConditionalPair(pp / pp.sum(1, keepdims=True), pm / pm.sum(1, keepdims=True), px / px.sum())
        ok += check_bt_representable(cprd_from_distribution(product_distribution(pair)), tol=1e-9).representable
    om = np.full((1, 3, 3), 0.1)
    om[0, [0, 1, 2], [0, 1, 2]] = 0
    om[0, 0, 1] = om[0, 1, 2] = om[0, 2, 0] = 0.9
    v = check_bt_representable(Cprd(om, ~np.eye(3, dtype=bool)[None]))
    err = abs(v.cycle_log_odds - 3 * math.log(9)) if not v.representable else math.inf
    report(3, ok == 100 and not v.representable and err <= 1e-9,
           f"{ok}/100 product pairs representable; cycle rejected with sum error {err:.1e}")


def test_criterion_04_tabular_closed_forms():
    from preflab.connectivity import tabular_connectivity

    def conn(adj):
        return tabular_connectivity(TabularTripletDistribution.single_context(np.triu(adj, 1))).value

    complete = np.ones((4, 4)) - np.eye(4)
    path = np.zeros((3, 3))
    path[[0, 1, 1, 2], [1, 0, 2, 1]] = 1
    split = np.zeros((4, 4))
    split[[0, 1, 2, 3], [1, 0, 3, 2]] = 1
    cases = [(complete, 8 / 3), (path, 1.5), (split, 0.0)]
    errs = [max(abs(conn(a) - v), abs(fiedler_oracle(a) - v)) for a, v in cases]
    report(4, max(errs) <= 1e-9, "errors vs closed forms (K4, P3, disconnected): "
           + ", ".join(f"{e:.1e}" for e in errs))


def test_criterion_05_variational_vs_spectral():
    rng = np.random.default_rng(105)
    t0 = time.perf_counter()
    worst_lo, worst_hi, count = math.inf, 0.0, 0
    cfg = VariationalConfig(restarts=8)
    while count < 20:
        adj = np.triu(rng.gamma(1.0, size=(8, 8)) * (rng.random((8, 8)) < 0.5), 1)
        adj = adj + adj.T
        exact = fiedler_oracle(adj)
        if exact <= 1e-6:
            continue
        count += 1
        dist = TabularTripletDistribution.single_context(np.triu(adj, 1))
        est = variational_connectivity(dist, TestDistributionQ.uniform(1, 8), "tabular", cfg).value
        worst_lo = min(worst_lo, est - exact)
        worst_hi = max(worst_hi, est / exact)
    dt = time.perf_counter() - t0
    report(5, worst_lo >= -1e-9 and worst_hi <= 1.05 and dt < 120,
           f"min(est - spectral) = {worst_lo:.2e}, max est/spectral = {worst_hi:.4f}, {dt:.1f} s")


def test_criterion_06_gradients():
    worst = gradient_check(np.random.default_rng(106), n_points=50)
    report(6, worst <= 1e-4, f"worst per-coordinate relative error {worst:.2e} over 50 kink-free points")


def test_criterion_10_accuracy_bound():
    rng = np.random.default_rng(110)
    violations = 0
    for _ in range(100):
        k, m = int(rng.integers(1, 4)), int(rng.integers(2, 10))
        qy, qx = rng.gamma(1.0, size=(k, m)), rng.gamma(1.0, size=k)
        q = TestDistributionQ(qx / qx.sum(), qy / qy.sum(1, keepdims=True))
        target = rng.normal(size=(k, m))
        fitted = target + rng.normal(scale=rng.uniform(0.05, 3.0), size=(k, m))
        violations += accuracy_lower_bound(fitted, target, q) > accuracy(fitted, target, q)
    report(10, violations == 0, f"{violations} violations of bound <= accuracy in 100 instances")


# experiment criteria

def _by_cell(records, key):
    cells = {}
    for r in records:
        cells.setdefault(key(r), []).append(r)
    return cells


@pytest.fixture(scope="module")
def margin_records():
    return run_experiment(ExperimentConfig("margin"), base_seed=0)


@pytest.fixture(scope="module")
def alpha_records():
    return run_experiment(ExperimentConfig("alpha_sweep"), base_seed=0)


@pytest.fixture(scope="module")
def conn_records():
    return run_experiment(ExperimentConfig("conn_optimize"), base_seed=0)


def test_criterion_07_margin(margin_records):
    cells = _by_cell(margin_records, lambda r: (r.variant, r.n))
    ns = sorted({r.n for r in margin_records})
    gaps, ses = {}, {}
    for n in ns:
        rank = np.array([r.accuracy for r in cells["rank", n]])
        raw = np.array([r.accuracy for r in cells["raw", n]])
        gaps[n] = rank.mean() - raw.mean()
        ses[n] = math.sqrt(rank.var(ddof=1) / rank.size + raw.var(ddof=1) / raw.size)
    lo, hi = ns[0], ns[-1]
    monotone = all(gaps[a] > gaps[b] for a, b in zip(ns, ns[1:]))
    ok = gaps[lo] > 2 * ses[lo] and gaps[hi] < gaps[lo]
    detail = ", ".join(f"n={n}: {gaps[n]:+.4f} (se {ses[n]:.4f})" for n in ns)
    report(7, ok, f"rank - raw gaps {detail}; monotone over grid: {monotone}")


def test_criterion_08_alpha_sweep(alpha_records):
    cells = _by_cell(alpha_records, lambda r: float(r.variant.split("=")[1]))
    alphas = sorted(cells)
    by_seed = {a: {r.seed: r.lambda_conn for r in cells[a]} for a in alphas}
    lo_a, hi_a = alphas[0], alphas[-1]
    extremes_low = all(by_seed[a][s] < by_seed[0.0][s] for a in (lo_a, hi_a) for s in by_seed[0.0])
    mean_lam = {a: np.mean([r.lambda_conn for r in cells[a]]) for a in alphas}
    mean_acc = {a: np.mean([r.accuracy for r in cells[a]]) for a in alphas}
    median = float(np.median(list(mean_acc.values())))
    lowest = sorted(alphas, key=lambda a: mean_lam[a])[:2]
    below = all(mean_acc[a] < median for a in lowest)
    detail = (f"lambda(+-16) < lambda(0) on every seed: {extremes_low}; lowest-lambda cells "
              + ", ".join(f"alpha={a:g} acc {mean_acc[a]:.4f}" for a in lowest) + f" vs median {median:.4f}")
    report(8, extremes_low and below, detail)


def test_criterion_09_conn_optimize(conn_records):
    cells = _by_cell(conn_records, lambda r: (float(r.variant.split("/")[0].split("=")[1]),
                                              r.variant.split("/")[1], r.seed))
    betas = sorted({b for b, _, _ in cells})
    seeds = sorted({s for _, _, s in cells})
    # lambda is computed once per (beta, seed) and repeated on every n row
    lam_ok = all(cells[b, "optimized", s][0].lambda_conn >= cells[b, "uniform", s][0].lambda_conn
                 for b in betas for s in seeds)

    def mean_acc(b, variant, s):
        return float(np.mean([r.accuracy for r in cells[b, variant, s]]))

    def gain(b):
        return float(np.mean([mean_acc(b, "optimized", s) - mean_acc(b, "uniform", s) for s in seeds]))
    g_lo, g_hi = gain(betas[0]), gain(betas[-1])
    report(9, lam_ok and g_hi > g_lo,
           f"optimized lambda >= uniform on every (beta, seed): {lam_ok}; mean accuracy gain "
           f"beta={betas[-1]:g}: {g_hi:+.4f}, beta={betas[0]:g}: {g_lo:+.4f}")


def test_criterion_11_determinism():
    small = dict(m=8, d=16, hidden=8, embed=4, seeds=(0, 1),
                 train=TrainConfig(epochs=3), variational=VariationalConfig(restarts=2, steps=100),
                 gda=GDAConfig(outer_steps=3, inner_steps=10, variational=VariationalConfig(restarts=2, steps=100)))
    grids = {"margin": dict(n_grid=(64, 128)), "alpha_sweep": dict(n_grid=(64,), alpha_grid=(-16.0, 0.0, 16.0)),
             "conn_optimize": dict(n_grid=(64,), beta_grid=(0.25, 8.0))}
    same = {}
    for name, extra in grids.items():
        cfg = ExperimentConfig(name, **small, **extra)
        first, second = (records_to_csv(run_experiment(cfg, base_seed=42)) for _ in range(2))
        same[name] = first.encode() == second.encode()
    report(11, all(same.values()), "byte-identical reruns: " + ", ".join(f"{k}={v}" for k, v in same.items()))


# qualitative findings listed with the experiments; not acceptance criteria

def test_finding_alpha_zero_matches_raw_baseline(margin_records, alpha_records):
    raw = {(r.seed, r.n): r.accuracy for r in margin_records if r.variant == "raw"}
    zero = {(r.seed, r.n): r.accuracy for r in alpha_records if r.variant == "alpha=0"}
    assert raw.keys() == zero.keys()
    for n in {n for _, n in raw}:
        a = np.array([raw[k] for k in sorted(raw) if k[1] == n])
        b = np.array([zero[k] for k in sorted(zero) if k[1] == n])
        se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
        assert abs(a.mean() - b.mean()) <= 2 * se + 1e-12


@pytest.mark.xfail(strict=False, reason="measured: bottom-10% gap exceeds the overall gap only for n >= 2048 "
                                        "(see decisions ledger)")
def test_finding_bottom_slice_gap_at_least_overall(margin_records):
    cells = _by_cell(margin_records, lambda r: (r.variant, r.n))
    for n in sorted({r.n for r in margin_records}):
        def gap(key):
            return np.mean([getattr(r, key) for r in cells["rank", n]]) - np.mean(
                [getattr(r, key) for r in cells["raw", n]])
        assert gap("acc_bottom10") >= gap("accuracy"), f"n={n}"


@pytest.mark.xfail(strict=False, reason="measured: beta=0.25 accuracy is about 0.63, not within 0.05 of chance "
                                        "(see decisions ledger)")
def test_finding_smallest_beta_near_chance(conn_records):
    b_min = min(float(r.variant.split("/")[0].split("=")[1]) for r in conn_records)
    for variant in ("uniform", "optimized"):
        acc = [r.accuracy for r in conn_records if r.variant == f"beta={b_min:g}/{variant}"]
        assert abs(np.mean(acc) - 0.5) <= 0.05, variant


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
