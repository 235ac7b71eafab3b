"""Acceptance criteria 1-9, one verdict line each in the terminal summary."""

import json
import math
import time

import numpy as np
import pytest

from mimofair.asymptotics import algorithm1, group_rates, solve_gamma, weight_order
from mimofair.cli import builtin_config, main
from mimofair.montecarlo import validate
from mimofair.scenario import ClusterProblem, build_cluster_problems, two_cell_scenario

import oracles
from conftest import record

LN2 = math.log(2.0)


def full_rates(layout, coop, kind, solve_builtin):
    sc, clusters, reports = solve_builtin(layout, coop, kind)
    R = np.zeros(sc.num_groups)
    for c, rep in zip(clusters, reports):
        R[list(c.groups)] = rep.rates_bits
    return R, reports


def test_criterion_1_fixed_point_closed_form():
    t0 = time.perf_counter()
    errs = [abs(solve_gamma([[math.sqrt(2.0)]], [1.0], 1, [0], 0) - 1.0)]
    for qb2 in (0.1, 1.0, 10.0):
        errs.append(abs(solve_gamma([[1.0]], [qb2], 1, [0], 0) - oracles.quadratic_gamma(qb2)))
    dt = time.perf_counter() - t0
    record(1, max(errs) <= 1e-10 and dt < 1.0, f"max |Gamma - closed form| = {max(errs):.2e}, {dt:.3f} s")


def test_criterion_2_monte_carlo_agreement():
    (cp,) = build_cluster_problems(two_cell_scenario("full", gamma=4, num_groups=8))
    order = weight_order(np.ones(cp.A))
    res = algorithm1(cp, order)
    rows = validate(cp, res.powers, order, N_list=(1, 2, 4), draws=500, seed=1)
    at4 = [r for r in rows if r.N == 4]
    ok4 = all(r.abs_delta <= max(3 * r.stderr_bits, 0.05 * r.R_asymptotic_bits) for r in at4)
    worst = {}
    for N in (1, 2, 4):
        sel = [r for r in rows if r.N == N and r.R_asymptotic_bits > 0]
        w = max(sel, key=lambda r: r.rel_delta)
        worst[N] = (w.rel_delta, w.stderr_bits / w.R_asymptotic_bits)
    mono = all(worst[b][0] <= worst[a][0] + 2 * worst[b][1] for a, b in ((1, 2), (2, 4)))
    detail = ", ".join(f"N={N} worst rel {worst[N][0]:.4f}" for N in (1, 2, 4))
    single = validate(cp, res.powers, order, N_list=(4,), draws=500, seed=1, form="single")
    s_worst = max(r.rel_delta for r in single)
    record(2, ok4 and mono, f"coupled form; {detail}; all groups within band at N=4: {ok4} "
                            f"(single-Gamma form worst rel {s_worst:.3f})")


def test_criterion_3_grid_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    beaten = False
    for _ in range(20):
        A = int(rng.integers(1, 4))
        num_bs, gamma = [(1, 1), (1, 2), (1, 3), (1, 4), (2, 1), (2, 2)][rng.integers(6)]
        Q = float(rng.uniform(1.0, 10.0))
        beta = np.sqrt(rng.uniform(0.05, 1.5, (num_bs, A)))
        w = rng.uniform(0.5, 2.0, A) if rng.random() < 0.7 else np.ones(A)
        cp = ClusterProblem.single(beta, gamma=gamma, Q=Q)
        res = algorithm1(cp, weight_order(w))
        mine = oracles.weighted_objective(beta ** 2, gamma, w, res.powers[None, :])[0]
        best, _ = oracles.grid_maximum(beta ** 2, gamma, w, Q, steps=1000)
        worst = max(worst, abs(mine - best) / abs(best))
        beaten |= best > mine * (1 + 1e-9)
    dt = time.perf_counter() - t0
    record(3, worst <= 1e-3 and not beaten and dt < 60,
           f"worst relative gap to grid optimum {worst:.2e}, grid never better: {not beaten}, {dt:.1f} s")


def test_criterion_4_telescoping_and_conservation(solve_builtin):
    worst_tel = worst_sum = 0.0
    for layout, coop, kind in (("2cell", "full", "pfs"), ("2cell", "full", "hfs"),
                               ("2cell", "none", "pfs"), ("2cell", "none", "hfs")):
        _, clusters, reports = solve_builtin(layout, coop, kind)
        for c, rep in zip(clusters, reports):
            worst_sum = max(worst_sum, abs(rep.powers.sum() - c.Q) / c.Q)
            o = weight_order(rep.mu, tie_rtol=1e-6)
            res = algorithm1(c, o)
            for split in ("sic", "shapley", "project"):
                R = group_rates(c, res.powers, o, tie_split=split, logdets=res.logdets)
                worst_tel = max(worst_tel, abs(R.sum() - res.logdets[0]))
            worst_sum = max(worst_sum, abs(res.powers.sum() - c.Q) / c.Q)
    rng = np.random.default_rng(7)
    for _ in range(30):
        A = int(rng.integers(1, 7))
        cp = ClusterProblem.single(rng.uniform(0.05, 3.0, (int(rng.integers(1, 4)), A)),
                                   gamma=int(rng.integers(1, 5)), Q=float(rng.uniform(0.1, 50)))
        o = weight_order(rng.uniform(0.1, 5.0, A))
        res = algorithm1(cp, o)
        R = group_rates(cp, res.powers, o, tie_split="sic")
        worst_tel = max(worst_tel, abs(R.sum() - res.logdets[0]))
        worst_sum = max(worst_sum, abs(res.powers.sum() - cp.Q) / cp.Q)
    record(4, worst_tel <= 1e-9 and worst_sum <= 1e-8,
           f"max |sum R - I| = {worst_tel:.2e} nats, max |sum Q - Q|/Q = {worst_sum:.2e}")


def test_criterion_5_hfs_equal_rates(solve_builtin):
    R, reports = full_rates("2cell", "none", "hfs", solve_builtin)
    spread = float(np.ptp(R) / R.mean())
    record(5, spread <= 1e-3 and all(r.converged for r in reports),
           f"2-cell no cooperation HFS spread {spread:.2e}, common rate {R.mean():.4f} bits")


def test_criterion_6_pfs_stationarity(solve_builtin):
    worst_st = worst_gap = 0.0
    for coop in ("full", "none"):
        _, _, reports = solve_builtin("2cell", coop, "pfs")
        for rep in reports:
            active = rep.rates_nats > 0
            st_r = np.abs(rep.mu * rep.r - 1.0)[active]
            st_R = np.abs(rep.mu * rep.rates_nats - 1.0)[active]
            worst_st = max(worst_st, float(st_r.max()), float(st_R.max()))
            worst_gap = max(worst_gap, rep.rel_gap)
    record(6, worst_st <= 1e-4 and worst_gap <= 1e-3,
           f"max |mu r - C|/C = {worst_st:.2e} (also with achieved rates), max rel gap {worst_gap:.2e}")


def test_criterion_7_fairness_ordering(solve_builtin):
    pfs, _ = full_rates("2cell", "full", "pfs", solve_builtin)
    hfs, _ = full_rates("2cell", "full", "hfs", solve_builtin)
    record(7, hfs.min() >= pfs.min() - 1e-6,
           f"min HFS {hfs.min():.4f} bits vs min PFS {pfs.min():.4f} bits")


def test_criterion_8_cooperation_ordering(solve_builtin):
    t0 = time.perf_counter()
    R = {}
    conv = True
    for coop in ("none", "sector", "full"):
        R[coop], reports = full_rates("7cell", coop, "pfs", solve_builtin)
        conv &= all(r.converged for r in reports)
    dt = time.perf_counter() - t0
    a_ok = bool(np.all(R["full"] >= R["none"] - 1e-6))
    # the three outer sub-rhombi of every sector touch the cell boundary
    edge = np.array([g % 4 != 0 for g in range(84)])
    g_sector = (R["sector"] - R["none"])[edge]
    g_full = (R["full"] - R["none"])[edge]
    b_ok = bool(np.all(g_sector < g_full))
    record(8, a_ok and b_ok and conv and dt <= 1800,
           f"(a) full >= none for all 84 groups: {a_ok}; (b) edge gain sector "
           f"{g_sector.mean():.3f} < full {g_full.mean():.3f} bits: {b_ok}; {dt:.0f} s")


def test_criterion_9_determinism(tmp_path):
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = main(["--scenario", "2cell-nocoop-pfs", "--mc-validate", "--mc-draws", "50",
                     "--seed", "11", "--out", str(out)])
        assert code in (0, 4)
        outs.append(out)
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
               for f in ("rates.csv", "validation.csv", "summary.json"))
    record(9, same, f"rates.csv, validation.csv, summary.json byte-identical across runs: {same}")
