"""Finite-N Monte Carlo oracle for the deterministic equivalents.

Each draw ``d`` uses its own generator seeded with ``(seed, d)``, so the
set of per-draw values does not depend on how draws are scheduled across
workers.  Means are accumulated with :func:`math.fsum` over the per-draw
values sorted by draw index.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .asymptotics import WeightOrder, group_rates
from .errors import InvalidInputError
from .scenario import ClusterProblem

__all__ = [
    "ChannelSample",
    "sample_channel",
    "draw_rng",
    "empirical_logdet",
    "empirical_mmse",
    "empirical_group_rates",
    "ValidationRow",
    "validate",
    "validation_csv",
    "VALIDATION_COLUMNS",
]

LN2 = math.log(2.0)
VALIDATION_COLUMNS = ("group_id", "N", "R_asymptotic_bits", "R_empirical_bits",
                      "stderr_bits", "abs_delta", "rel_delta", "pass")


@dataclass(frozen=True)
class ChannelSample:
    """Composite channel ``(gamma num_bs N) x (A N)``; column block ``k`` is group ``k``."""

    H: np.ndarray
    N: int
    seed: int
    draw: int


def draw_rng(seed: int, draw: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(draw)])


def sample_channel(cluster: ClusterProblem, N: int, seed: int = 0, draw: int = 0) -> ChannelSample:
    """Block ``(m, k)`` is ``beta[m, k] / sqrt(N)`` times a ``gamma N x N`` iid CN(0, 1) matrix."""
    if N < 1:
        raise InvalidInputError("N must be >= 1")
    rng = draw_rng(seed, draw)
    rows, cols = cluster.B * N, cluster.A * N
    Z = (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / math.sqrt(2.0)
    scale = np.repeat(np.repeat(cluster.beta, cluster.gamma * N, axis=0), N, axis=1)
    return ChannelSample(H=Z * scale / math.sqrt(N), N=N, seed=seed, draw=draw)


def _column_mask(cluster, active, N):
    mask = np.zeros(cluster.A, dtype=bool)
    mask[list(active)] = True
    return np.repeat(mask, N)


def _logdet_one(H, powers, cols, N):
    """``(1/N) log|I + H_S Q_S H_S^H|`` via the smaller ``A N`` side, Cholesky-based."""
    Hs = H[:, cols]
    if Hs.shape[1] == 0:
        return 0.0
    sq = np.sqrt(np.repeat(powers, N)[cols])
    X = Hs * sq[None, :]
    Mx = np.eye(X.shape[1]) + X.conj().T @ X
    L = np.linalg.cholesky(Mx)
    return float(2.0 * np.sum(np.log(np.real(np.diag(L))))) / N


def _mmse_one(H, powers, cols, k, N):
    """``(1/N) tr(I - Q_k H_k^H (I + Theta_S)^{-1} H_k)`` for group ``k``."""
    qk = powers[k]
    if qk == 0:
        return 1.0
    Hs = H[:, cols]
    sq = np.sqrt(np.repeat(powers, N)[cols])
    X = Hs * sq[None, :]
    Hk = H[:, k * N:(k + 1) * N]
    # (I + X X^H)^{-1} Hk via push-through: Hk - X (I + X^H X)^{-1} X^H Hk.
    inner = np.eye(X.shape[1]) + X.conj().T @ X
    L = np.linalg.cholesky(inner)
    Y = np.linalg.solve(L, X.conj().T @ Hk)
    quad = np.real(np.trace(Hk.conj().T @ Hk) - np.trace(Y.conj().T @ Y))
    return 1.0 - qk * quad / N


def _draw_values(fn, draws: int, executor: Executor | None):
    if executor is None:
        vals = [fn(d) for d in range(draws)]
    else:
        vals = list(executor.map(fn, range(draws)))
    return vals


def _mean_stderr(vals: Sequence[float]) -> tuple[float, float]:
    n = len(vals)
    mean = math.fsum(vals) / n
    if n < 2:
        return mean, float("nan")
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return mean, math.sqrt(var / n)


def empirical_logdet(cluster: ClusterProblem, powers, N: int, draws: int, active: Iterable[int],
                     seed: int = 0, executor: Executor | None = None,
                     return_draws: bool = False):
    """Sample mean and standard error of ``(1/N) log|I + Theta_S|`` in nats.

    Draws whose Cholesky factorisation fails are skipped; the count is
    returned in the third slot when ``return_draws`` is set (together with
    the per-draw values).
    """
    if draws < 2:
        raise InvalidInputError("draws must be >= 2")
    powers = np.asarray(powers, dtype=float)
    cols = _column_mask(cluster, active, N)
    if not cols.any() or not np.any(np.repeat(powers, N)[cols] > 0):
        return (0.0, 0.0, [0.0] * draws, 0) if return_draws else (0.0, 0.0)

    def one(d):
        H = sample_channel(cluster, N, seed, d).H
        try:
            return _logdet_one(H, powers, cols, N)
        except np.linalg.LinAlgError:
            return None

    raw = _draw_values(one, draws, executor)
    vals = [v for v in raw if v is not None]
    skipped = len(raw) - len(vals)
    mean, se = _mean_stderr(vals)
    return (mean, se, vals, skipped) if return_draws else (mean, se)


def empirical_mmse(cluster: ClusterProblem, powers, N: int, draws: int, k: int,
                   active: Iterable[int], seed: int = 0, executor: Executor | None = None,
                   return_draws: bool = False):
    """Sample mean and standard error of the normalised MMSE of group ``k``."""
    if draws < 2:
        raise InvalidInputError("draws must be >= 2")
    active = list(active)
    if k not in active:
        raise InvalidInputError("group k must be in the active set")
    powers = np.asarray(powers, dtype=float)
    cols = _column_mask(cluster, active, N)

    def one(d):
        H = sample_channel(cluster, N, seed, d).H
        try:
            return _mmse_one(H, powers, cols, k, N)
        except np.linalg.LinAlgError:
            return None

    raw = _draw_values(one, draws, executor)
    vals = [v for v in raw if v is not None]
    mean, se = _mean_stderr(vals)
    return (mean, se, vals, len(raw) - len(vals)) if return_draws else (mean, se)


def empirical_group_rates(cluster: ClusterProblem, powers, order: WeightOrder, N: int,
                          draws: int, seed: int = 0, executor: Executor | None = None):
    """Per-group rates from successive log-det differences, column order.

    Every draw evaluates all suffix sets of the decoding order on the same
    channel realisation, so the rate of each group is a per-draw difference
    and its standard error accounts for the correlation.
    """
    if draws < 2:
        raise InvalidInputError("draws must be >= 2")
    powers = np.asarray(powers, dtype=float)
    perm = order.perm
    A = cluster.A
    col_sets = [_column_mask(cluster, perm[i:], N) for i in range(A)]

    def one(d):
        H = sample_channel(cluster, N, seed, d).H
        I = [_logdet_one(H, powers, c, N) for c in col_sets] + [0.0]
        r = np.empty(A)
        for i in range(A):
            r[perm[i]] = I[i] - I[i + 1]
        return r

    per_draw = np.array(_draw_values(one, draws, executor))
    means, ses = [], []
    for k in range(A):
        m, s = _mean_stderr(per_draw[:, k].tolist())
        means.append(m)
        ses.append(s)
    means, ses = np.array(means), np.array(ses)
    zero = powers == 0
    means[zero] = 0.0
    ses[zero] = 0.0
    return means, ses


@dataclass(frozen=True)
class ValidationRow:
    group_id: int
    N: int
    R_asymptotic_bits: float
    R_empirical_bits: float
    stderr_bits: float
    abs_delta: float
    rel_delta: float
    passed: bool

    def as_tuple(self):
        return (self.group_id, self.N, self.R_asymptotic_bits, self.R_empirical_bits,
                self.stderr_bits, self.abs_delta, self.rel_delta, self.passed)


def validate(cluster: ClusterProblem, powers, order: WeightOrder, N_list=(1, 2, 4),
             draws: int = 500, seed: int = 0, *, rel_tol: float = 0.05, n_stderr: float = 3.0,
             form: str = "coupled", executor: Executor | None = None) -> list[ValidationRow]:
    """Compare asymptotic and empirical per-group rates for each ``N``.

    Both sides use the plain successive-decoding order of ``order``.  A row
    passes when ``|delta| <= max(n_stderr * stderr, rel_tol * R_asymptotic)``.
    """
    powers = np.asarray(powers, dtype=float)
    R_asym = group_rates(cluster, powers, order, form=form, tie_split="sic") / LN2
    rows = []
    for N in N_list:
        mean, se = empirical_group_rates(cluster, powers, order, N, draws, seed, executor)
        mean, se = mean / LN2, se / LN2
        for k in range(cluster.A):
            delta = abs(mean[k] - R_asym[k])
            rel = delta / R_asym[k] if R_asym[k] > 0 else 0.0
            ok = delta <= max(n_stderr * se[k], rel_tol * R_asym[k])
            rows.append(ValidationRow(cluster.groups[k], int(N), float(R_asym[k]), float(mean[k]),
                                      float(se[k]), float(delta), float(rel), bool(ok)))
    return rows


def validation_csv(rows: Sequence[ValidationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(VALIDATION_COLUMNS)
    for r in rows:
        w.writerow([r.group_id, r.N, repr(r.R_asymptotic_bits), repr(r.R_empirical_bits),
                    repr(r.stderr_bits), repr(r.abs_delta), repr(r.rel_delta),
                    "true" if r.passed else "false"])
    return buf.getvalue()
