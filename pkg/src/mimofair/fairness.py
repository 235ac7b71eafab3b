"""Network-utility maximisation over the large-system ergodic rate region.

The utility problem is dualised on the rate constraints ``r_k <= R_k``.
For fixed multipliers ``mu`` the Lagrangian splits into

* a rate part ``max_r g(r) - sum_k mu_k r_k`` with a closed-form maximiser
  (:func:`inner_rates`), and
* a weighted sum-rate part with weights ``mu``, solved by
  :func:`~mimofair.asymptotics.algorithm1`.

The multipliers follow the projected subgradient ``R - r`` with a
backtracking line search on the dual function.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .asymptotics import algorithm1, group_rates, weight_order
from .errors import InvalidInputError
from .scenario import ClusterProblem

__all__ = [
    "UtilitySpec",
    "FairnessOptions",
    "DualState",
    "RateReport",
    "utility_value",
    "inner_rates",
    "subgradient_step",
    "dual_value",
    "solve_fairness",
    "solve_weighted",
    "solve_cluster",
]

logger = logging.getLogger(__name__)
LN2 = math.log(2.0)
KINDS = ("pfs", "hfs", "weighted")


@dataclass(frozen=True)
class UtilitySpec:
    kind: str = "pfs"
    C: float = 1.0
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"utility kind must be one of {KINDS}")
        if not (self.C > 0 and math.isfinite(self.C)):
            raise InvalidInputError("C must be positive")
        if self.kind == "weighted":
            if self.weights is None:
                raise InvalidInputError("weighted utility needs explicit weights")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise InvalidInputError("weights must be finite and non-negative")


@dataclass(frozen=True)
class FairnessOptions:
    gap_tol: float = 1e-3
    feas_tol: float = 1e-5          # PFS: max |mu R / C - 1|; HFS: rate spread / mean
    max_outer: int = 2000
    mu_floor: float = 1e-6
    step0: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    max_halvings: int = 30
    bb_steps: bool = True           # Barzilai-Borwein trial step before backtracking
    memory: int = 10                # non-monotone reference window
    form: str = "coupled"
    alg1_tol: float = 1e-9
    warm_start: bool = True
    tie_rtol: float = 1e-6          # multipliers this close are treated as tied


@dataclass
class DualState:
    mu: np.ndarray
    r: np.ndarray
    n: int = 0
    step: float = 1.0
    gap_history: list = field(default_factory=list)
    floor_hits: int = 0


@dataclass
class RateReport:
    """Per-cluster outcome.  Rates in bits per channel use per user."""

    cluster_id: int
    groups: tuple[int, ...]
    rates_bits: np.ndarray
    powers: np.ndarray
    utility: float
    dual: float
    gap: float
    rel_gap: float
    iterations: int
    converged: bool
    kind: str
    mu: np.ndarray | None = None
    r: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def rates_nats(self) -> np.ndarray:
        return self.rates_bits * LN2


# ---------------------------------------------------------------------------
# Pieces of the dual
# ---------------------------------------------------------------------------
def utility_value(utility: UtilitySpec, R) -> float:
    R = np.asarray(R, dtype=float)
    if utility.kind == "pfs":
        with np.errstate(divide="ignore"):
            return float(utility.C * np.sum(np.log(R)))
    if utility.kind == "hfs":
        return float(utility.C * np.min(R))
    return float(np.dot(utility.weights, R))


def inner_rates(utility: UtilitySpec, mu, R=None, mu_floor: float = 1e-6):
    """Maximiser of ``g(r) - sum mu_k r_k``.

    Returns ``(r, clamped)`` where ``clamped`` counts multipliers raised to
    ``mu_floor``.  PFS: ``r_k = C / mu_k``.  HFS: the common rate is the mean
    of the current ``R``.  Weighted: ``r`` is not used and ``R`` is returned.
    """
    mu = np.asarray(mu, dtype=float)
    clamped = int(np.sum(mu < mu_floor))
    mu = np.maximum(mu, mu_floor)
    if utility.kind == "pfs":
        return utility.C / mu, clamped
    if R is None:
        raise InvalidInputError("HFS and weighted inner rates need the current group rates")
    R = np.asarray(R, dtype=float)
    if utility.kind == "hfs":
        return np.full_like(R, R.mean()), clamped
    return R.copy(), clamped


def subgradient_step(state: DualState, R, r, step: float, mu_floor: float = 1e-6) -> DualState:
    """``mu <- max(mu_floor, mu - step (R - r))`` and advance the counter."""
    mu_raw = state.mu - step * (np.asarray(R) - np.asarray(r))
    hits = int(np.sum(mu_raw < mu_floor))
    return replace(state, mu=np.maximum(mu_raw, mu_floor), n=state.n + 1, step=step,
                   floor_hits=state.floor_hits + hits,
                   gap_history=list(state.gap_history))


def dual_value(utility: UtilitySpec, mu, R) -> float:
    """Dual function at ``mu`` given the weighted-sum-rate maximiser's rates ``R``.

    For HFS the multipliers are rescaled onto ``sum mu = C``, where the
    rate part of the Lagrangian is bounded.
    """
    mu = np.asarray(mu, dtype=float)
    wsr = float(np.dot(mu, R))
    if utility.kind == "pfs":
        C = utility.C
        return float(np.sum(C * np.log(C / mu)) - C * mu.size + wsr)
    if utility.kind == "hfs":
        return utility.C * wsr / float(mu.sum())
    return wsr


def _dual_gradient(utility, mu, R, r):
    if utility.kind == "pfs":
        return R - r
    S = mu.sum()
    return utility.C / S * (R - np.dot(mu, R) / S)


def _feasibility(utility, mu, R):
    if utility.kind == "pfs":
        return float(np.max(np.abs(mu * R / utility.C - 1.0)))
    m = R.mean()
    return float((R.max() - R.min()) / m) if m > 0 else math.inf


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------
class _Evaluator:
    """Power allocation plus rates at given weights, warm-started from the last call."""

    def __init__(self, cluster, options):
        self.cluster = cluster
        self.options = options
        self.powers = None
        self.calls = 0
        self.alg1_iterations = 0

    def __call__(self, mu, target=None):
        order = weight_order(mu, self.options.tie_rtol)
        init = self.powers if self.options.warm_start else None
        res = algorithm1(self.cluster, order, form=self.options.form,
                         tol=self.options.alg1_tol, init=init)
        R = group_rates(self.cluster, res.powers, order, form=self.options.form,
                        tie_split="project", target=target, logdets=res.logdets)
        self.calls += 1
        self.alg1_iterations += res.iterations
        return res, R

    def accept(self, res):
        self.powers = res.powers


def solve_weighted(cluster: ClusterProblem, weights, options: FairnessOptions | None = None
                   ) -> RateReport:
    """Single power-allocation pass for fixed weights."""
    options = options or FairnessOptions()
    w = np.asarray(weights, dtype=float)
    if w.shape != (cluster.A,):
        raise InvalidInputError(f"expected {cluster.A} weights, got {w.size}")
    order = weight_order(w)
    res = algorithm1(cluster, order, form=options.form, tol=options.alg1_tol)
    R = group_rates(cluster, res.powers, order, form=options.form, logdets=res.logdets)
    val = float(np.dot(w, R))
    return RateReport(
        cluster_id=cluster.cluster_id, groups=cluster.groups, rates_bits=R / LN2,
        powers=res.powers, utility=val, dual=val, gap=0.0, rel_gap=0.0,
        iterations=res.iterations, converged=True, kind="weighted",
        diagnostics={"pruned": list(res.pruned), "kkt_pruned_ok": res.diagnostics["kkt_pruned_ok"],
                     "sum_rate_nats": float(R.sum()), "logdet_full_nats": float(res.logdets[0])},
    )


def solve_fairness(cluster: ClusterProblem, utility: UtilitySpec,
                   options: FairnessOptions | None = None) -> RateReport:
    """Dual subgradient solution of PFS or HFS on one cluster.

    Each outer iteration orders the groups by ``mu``, solves the weighted
    sum-rate problem with weights ``mu``, computes the inner-rate maximiser
    and moves ``mu`` along ``-(R - r)``.  The step is found by backtracking
    from a Barzilai-Borwein trial (``step0`` on the first iteration) against
    a non-monotone Armijo reference.  Stops when the relative duality gap is
    at most ``gap_tol`` and the rate constraints are met to ``feas_tol``.
    """
    options = options or FairnessOptions()
    if utility.kind == "weighted":
        return solve_weighted(cluster, utility.weights, options)
    A = cluster.A
    ev = _Evaluator(cluster, options)
    def target(m):
        # Tied blocks are resolved toward the inner rates (min-norm subgradient).
        return utility.C / np.maximum(m, options.mu_floor) if utility.kind == "pfs" else None

    mu = np.ones(A)
    res, R = ev(mu, target(mu))
    ev.accept(res)
    r, clamped = inner_rates(utility, mu, R, options.mu_floor)
    state = DualState(mu=mu, r=r, step=options.step0, floor_hits=clamped)
    G = dual_value(utility, mu, R)
    G_hist = [G]
    best = None
    prev_mu = prev_d = None
    ls_exhausted = 0
    order_ok = True
    converged = False

    for n in range(options.max_outer + 1):
        g = utility_value(utility, R)
        gap = G - g
        rel_gap = gap / max(abs(g), 1e-300) if math.isfinite(g) else math.inf
        feas = _feasibility(utility, mu, R)
        state.gap_history.append(rel_gap)
        key = (max(rel_gap / options.gap_tol, feas / options.feas_tol))
        if best is None or key < best[0]:
            best = (key, mu.copy(), R.copy(), res, G, g, r.copy(), n)
        if rel_gap <= options.gap_tol and feas <= options.feas_tol:
            converged = True
            break
        if n == options.max_outer:
            break

        d = R - r
        grad = _dual_gradient(utility, mu, R, r)
        if options.bb_steps and prev_mu is not None:
            dm, dd = mu - prev_mu, d - prev_d
            denom = float(np.dot(dm, dd))
            step = float(np.dot(dm, dm)) / denom if denom > 0 else state.step
            step = min(max(step, 1e-10), 1e10)
        else:
            step = options.step0
        G_ref = max(G_hist[-options.memory:])
        accepted = None
        for _ in range(options.max_halvings + 1):
            trial = subgradient_step(state, R, r, step, options.mu_floor)
            t_res, t_R = ev(trial.mu, target(trial.mu))
            t_G = dual_value(utility, trial.mu, t_R)
            if t_G <= G_ref + options.armijo * float(np.dot(grad, trial.mu - mu)):
                accepted = (trial, t_res, t_R, t_G)
                break
            step *= options.shrink
        if accepted is None:
            # Line search exhausted: take the smallest step tried.
            ls_exhausted += 1
            accepted = (trial, t_res, t_R, t_G)
        prev_mu, prev_d = mu, d
        state, res, R, G = accepted
        ev.accept(res)
        mu = state.mu
        order_ok &= bool(np.all(np.diff(mu[res.order.perm]) >= 0))
        r, clamped = inner_rates(utility, mu, R, options.mu_floor)
        state.r = r
        state.floor_hits += clamped
        G_hist.append(G)

    if not converged:
        _, mu, R, res, G, g, r, n = best
        logger.warning("cluster %d: %s did not converge (best rel gap %.3g)",
                       cluster.cluster_id, utility.kind, state.gap_history[n])
    gap = G - g
    rel_gap = gap / max(abs(g), 1e-300) if math.isfinite(g) else math.inf
    zero_rate = [int(cluster.groups[k]) for k in np.flatnonzero(R <= 0)]
    diag = {
        "feasibility": _feasibility(utility, mu, R),
        "stationarity_mu_r": float(np.max(np.abs(mu * r - utility.C)) / utility.C)
        if utility.kind == "pfs" else None,
        "mu_floor_hits": state.floor_hits,
        "line_search_exhausted": ls_exhausted,
        "permutation_sorted": order_ok,
        "algorithm1_calls": ev.calls,
        "algorithm1_iterations": ev.alg1_iterations,
        "zero_rate_groups": zero_rate,
        "pruned": list(res.pruned),
        "gap_history": [float(x) for x in state.gap_history],
    }
    return RateReport(
        cluster_id=cluster.cluster_id, groups=cluster.groups, rates_bits=R / LN2,
        powers=res.powers, utility=g, dual=G, gap=gap, rel_gap=rel_gap, iterations=n,
        converged=converged, kind=utility.kind, mu=mu, r=r, diagnostics=diag,
    )


def solve_cluster(cluster: ClusterProblem, utility: UtilitySpec,
                  options: FairnessOptions | None = None) -> RateReport:
    if utility.kind == "weighted":
        return solve_weighted(cluster, utility.weights, options)
    return solve_fairness(cluster, utility, options)
