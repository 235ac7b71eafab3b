import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from mimofair.asymptotics import algorithm1, asymptotic_logdet, weight_order
from mimofair.montecarlo import (empirical_group_rates, empirical_logdet, empirical_mmse,
                                 sample_channel, validate, validation_csv, VALIDATION_COLUMNS)
from mimofair.scenario import ClusterProblem

SQ = ClusterProblem.single([[math.sqrt(2.0)]], gamma=1, Q=1.0)
ASYM = ClusterProblem.single([[1.2, 0.3], [0.4, 0.9]], gamma=2, Q=2.0)


def test_zero_beta_gives_zero_matrix():
    cp = ClusterProblem.single(np.zeros((2, 3)), gamma=2, Q=1.0)
    assert not np.any(sample_channel(cp, 3, seed=1).H)


def test_block_second_moment():
    cp = ClusterProblem.single([[2.0, 0.5]], gamma=4, Q=1.0)
    N = 50
    H = sample_channel(cp, N, seed=7).H
    blk = H[:, :N]
    assert H.shape == (4 * N, 2 * N)
    assert np.mean(np.abs(blk) ** 2) == pytest.approx(4.0 / N, rel=0.05)


def test_same_seed_same_matrix():
    a = sample_channel(ASYM, 4, seed=3, draw=9).H
    b = sample_channel(ASYM, 4, seed=3, draw=9).H
    c = sample_channel(ASYM, 4, seed=3, draw=10).H
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_logdet_zero_power():
    assert empirical_logdet(ASYM, [0.0, 0.0], 4, 10, [0, 1]) == (0.0, 0.0)


def test_logdet_closed_form_case():
    mean, se = empirical_logdet(SQ, [1.0], 64, 200, [0], seed=2)
    assert abs(mean - (2 * math.log(2) - 0.5)) <= 3 * se


def test_logdet_deviation_shrinks_with_N():
    q = [1.5, 0.5]
    ref = asymptotic_logdet(ASYM, q, [0, 1])
    m2, _ = empirical_logdet(ASYM, q, 2, 400, [0, 1], seed=5)
    m8, _ = empirical_logdet(ASYM, q, 8, 400, [0, 1], seed=5)
    assert abs(m8 - ref) < abs(m2 - ref)


def test_logdet_asymmetric_within_band_at_16():
    q = [1.5, 0.5]
    mean, se = empirical_logdet(ASYM, q, 16, 500, [0, 1], seed=11)
    assert abs(mean - asymptotic_logdet(ASYM, q, [0, 1])) <= 3 * se + 1e-3


def test_logdet_draws_nonnegative():
    _, _, vals, skipped = empirical_logdet(ASYM, [1.0, 1.0], 2, 50, [0, 1], return_draws=True)
    assert skipped == 0 and min(vals) >= 0


def test_mmse_identity_and_bounds():
    assert empirical_mmse(ASYM, [0.0, 1.0], 3, 5, 0, [0, 1])[0] == 1.0
    mean, se = empirical_mmse(SQ, [1.0], 64, 200, 0, [0], seed=4)
    assert abs(mean - 0.5) <= 3 * se
    _, _, vals, _ = empirical_mmse(ASYM, [2.0, 1.0], 2, 50, 1, [0, 1], return_draws=True)
    assert all(-1e-9 <= v <= 1 + 1e-9 for v in vals)


def test_parallel_equals_sequential():
    q = [1.0, 1.0]
    seq = empirical_logdet(ASYM, q, 3, 40, [0, 1], seed=8, return_draws=True)
    with ThreadPoolExecutor(max_workers=4) as ex:
        par = empirical_logdet(ASYM, q, 3, 40, [0, 1], seed=8, executor=ex, return_draws=True)
    assert seq[0] == par[0] and seq[1] == par[1]
    assert sorted(seq[2]) == sorted(par[2])


def test_zero_power_group_rate_is_exact_zero():
    o = weight_order([1.0, 2.0])
    rows = validate(ASYM, [2.0, 0.0], o, N_list=(2,), draws=20, seed=1)
    zero = [r for r in rows if r.group_id == 1]
    assert zero[0].abs_delta == 0.0 and zero[0].R_empirical_bits == 0.0


def test_symmetric_cluster_deltas_symmetric():
    cp = ClusterProblem.single([[1.0, 1.0]], gamma=2, Q=2.0)
    m, se = empirical_group_rates(cp, [1.0, 1.0], weight_order([1.0, 1.0]), 4, 300, seed=2)
    # successive decoding: the two rates differ, but their sum is symmetric in the columns
    swapped, _ = empirical_group_rates(cp, [1.0, 1.0], weight_order([1.0, 1.0 + 1e-3]), 4, 300, seed=2)
    assert abs(m.sum() - swapped.sum()) <= 2 * math.hypot(*se)


def test_stderr_shrinks_with_N():
    q = [1.5, 0.5]
    o = weight_order([1.0, 2.0])
    _, se2 = empirical_group_rates(ASYM, q, o, 2, 300, seed=3)
    _, se8 = empirical_group_rates(ASYM, q, o, 8, 300, seed=3)
    assert np.all(se8 < se2)


def test_validation_csv_format():
    o = weight_order([1.0, 2.0])
    res = algorithm1(ASYM, o)
    rows = validate(ASYM, res.powers, o, N_list=(1, 2), draws=30, seed=0)
    text = validation_csv(rows)
    lines = text.splitlines()
    assert lines[0] == ",".join(VALIDATION_COLUMNS)
    assert len(lines) == 1 + 4 and "\r" not in text
    assert all(l.rsplit(",", 1)[1] in ("true", "false") for l in lines[1:])
