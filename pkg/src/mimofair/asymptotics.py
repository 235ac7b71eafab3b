"""Large-system weighted ergodic sum-rate maximisation for one cluster.

All quantities are deterministic equivalents of the ``N -> inf`` limit with
channel entries scaled by ``1/sqrt(N)``.  Groups are processed in the
order ``pi`` that sorts the weights non-decreasingly; successive
interference cancellation decodes ``pi[0]`` first, so the group at
position ``k`` sees interference from positions ``k..A-1`` only.

An *active set* is a boolean mask over group positions.  For a set ``S``
the per-group MMSE SINRs ``Gamma_k`` solve

    Gamma_k = gamma Q_k sum_m beta2[m, k] t_m,
    t_m     = 1 / (1 + sum_{j in S} beta2[m, j] Q_j / (1 + Gamma_j)),

and ``(1/N) E log|I + Theta_S|`` tends to

    sum_k [log(1 + Gamma_k) - Gamma_k / (1 + Gamma_k)]
        + gamma sum_m log(1 + sum_{j in S} beta2[m, j] Q_j / (1 + Gamma_j)).

``form="single"`` instead uses the target group's own ``Gamma`` in every
interferer term of ``t_m``; it exists for comparison against the Monte
Carlo oracle, ``"coupled"`` is the default.

Rates are in nats per channel use per user.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import InvalidInputError, SolverFailure
from .scenario import ClusterProblem

__all__ = [
    "WeightOrder",
    "FixedPointTable",
    "Algorithm1Result",
    "weight_order",
    "solve_fixed_points",
    "logdet_from_gamma",
    "solve_gamma",
    "asymptotic_logdet",
    "weighted_objective",
    "algorithm1",
    "group_rates",
    "FORMS",
]

FORMS = ("coupled", "single")
GAMMA_TOL = 1e-10


@dataclass(frozen=True)
class WeightOrder:
    """Weights, their sorting permutation and successive differences.

    ``blocks`` lists ``(start, stop)`` position ranges of tied weights;
    inside a block the differences are exactly zero.
    """

    weights: np.ndarray
    perm: np.ndarray
    delta: np.ndarray
    blocks: tuple[tuple[int, int], ...]

    @property
    def A(self) -> int:
        return len(self.perm)


def weight_order(weights: Sequence[float], tie_rtol: float = 1e-9) -> WeightOrder:
    """Stable ascending order of ``weights`` with tie detection.

    Consecutive sorted weights closer than ``tie_rtol * max(weights)`` to the
    first weight of their block are tied and snapped to the block maximum,
    so ``delta`` sums to ``max(weights)``.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidInputError("weights must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidInputError("weights must be finite and non-negative")
    perm = np.argsort(w, kind="stable")
    ws = w[perm]
    scale = ws[-1]
    blocks = []
    start = 0
    for k in range(1, len(ws) + 1):
        if k == len(ws) or ws[k] - ws[start] > tie_rtol * scale:
            blocks.append((start, k))
            start = k
    snapped = ws.copy()
    for a, b in blocks:
        snapped[a:b] = ws[b - 1]
    delta = np.diff(snapped, prepend=0.0)
    return WeightOrder(weights=w, perm=perm, delta=delta, blocks=tuple(blocks))


@dataclass
class FixedPointTable:
    """``gamma[i, k]`` is ``Gamma`` of position ``k`` for active set ``i:A``."""

    gamma: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    @property
    def upsilon(self) -> np.ndarray:
        return 1.0 / (1.0 + self.gamma)


@dataclass
class Algorithm1Result:
    powers: np.ndarray              # scenario (column) order
    order: WeightOrder
    table: FixedPointTable          # suffix sets, pi order
    logdets: np.ndarray             # I_{i:A} for i = 0..A (last entry 0), pi order
    iterations: int
    pruned: tuple[int, ...] = ()    # column indices permanently zeroed
    diagnostics: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        """``F_W(Q) = sum_k delta_k I_{k:A}``."""
        return float(np.dot(self.order.delta, self.logdets[:-1]))


# ---------------------------------------------------------------------------
# Fixed points
# ---------------------------------------------------------------------------
def _gamma_map(beta2, qa, gamma, G):
    load = (qa / (1.0 + G)) @ beta2.T
    t = 1.0 / (1.0 + load)
    return gamma * qa * (t @ beta2), t


def _solve_coupled(beta2, qa, gamma, tol, max_iter, t0=None):
    """Newton's method on ``t`` (one unknown per BS), substitution fallback."""
    S, A = qa.shape
    M = beta2.shape[0]
    if t0 is None:
        t = 1.0 / (1.0 + qa @ beta2.T)
    else:
        t = np.array(t0, dtype=float)
    gq = gamma * qa
    eye = np.eye(M)

    def residual_t(t):
        G = gq * (t @ beta2)
        load = (qa / (1.0 + G)) @ beta2.T
        return t * (1.0 + load) - 1.0, G, load

    F, G, load = residual_t(t)
    iters = 0
    for iters in range(1, 101):
        w = gq * qa / (1.0 + G) ** 2
        J = eye * (1.0 + load)[:, :, None] - t[:, :, None] * np.einsum("mj,sj,nj->smn", beta2, w, beta2)
        try:
            step = -np.linalg.solve(J, F[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        fnorm = np.max(np.abs(F), axis=1)
        lam = np.ones(S)
        for _ in range(40):
            t_new = t + lam[:, None] * step
            ok = np.all((t_new > 0) & (t_new <= 1.0 + 1e-12), axis=1)
            F_new, G_new, load_new = residual_t(np.clip(t_new, 1e-300, 1.0))
            better = ok & (np.max(np.abs(F_new), axis=1) <= (1 - 1e-4 * lam) * fnorm)
            done = better | (fnorm < 1e-15)
            if np.all(done):
                break
            lam = np.where(done, lam, lam * 0.5)
        upd = better
        t = np.where(upd[:, None], np.clip(t_new, 1e-300, 1.0), t)
        F, G, load = residual_t(t)
        if np.max(np.abs(F)) < 1e-15 or not np.any(upd):
            break
    G_next, t = _gamma_map(beta2, qa, gamma, G)
    res = np.max(np.abs(G_next - G), initial=0.0)
    G = G_next
    # Substitution polishes any set Newton left behind; damped once the
    # residual stops decreasing.
    damp = False
    while res > tol and iters < max_iter:
        iters += 1
        G_next, t = _gamma_map(beta2, qa, gamma, G)
        prev, res = res, np.max(np.abs(G_next - G))
        damp = damp or res > prev
        G = 0.5 * (G + G_next) if damp else G_next
    return G, t, iters, res


def _solve_single(beta2, qa, gamma, tol, max_iter):
    """Per (set, group) scalar equation with a shared Gamma in the denominator."""
    L = qa @ beta2.T                                  # (S, M)
    U = gamma * qa * beta2.sum(axis=0)                # upper bound, (S, A)
    G = U.copy()
    iters = 0
    res = 0.0
    for iters in range(1, max_iter + 1):
        d = 1.0 + G[..., None] + L[:, None, :]        # (S, A, M)
        phi = gamma * qa * np.sum(beta2.T[None] * (1.0 + G[..., None]) / d, axis=2)
        dphi = gamma * qa * np.sum(beta2.T[None] * L[:, None, :] / d ** 2, axis=2)
        h = G - phi
        res = np.max(np.abs(h), initial=0.0)
        if res <= 0.1 * tol:
            break
        G = np.maximum(G - h / (1.0 - dphi), 0.0)
    d = 1.0 + G[..., None] + L[:, None, :]
    phi = gamma * qa * np.sum(beta2.T[None] * (1.0 + G[..., None]) / d, axis=2)
    res = np.max(np.abs(G - phi), initial=0.0)
    return phi, iters, res


def solve_fixed_points(beta2, powers, gamma, masks, form: str = "coupled",
                       tol: float = GAMMA_TOL, max_iter: int = 10_000, t0=None):
    """Solve the MMSE-SINR fixed points for a batch of active sets.

    Parameters
    ----------
    beta2 : ndarray, shape (M, A)
        Squared effective coefficients.
    powers : ndarray, shape (A,)
        Per-group powers.
    gamma : int
        Antennas per BS per user-group dimension.
    masks : ndarray of bool, shape (S, A)
        Active sets.
    form : {"coupled", "single"}
    t0 : ndarray, shape (S, M), optional
        Warm start for the coupled solver.

    Returns
    -------
    gamma_table : ndarray, shape (S, A)
        Zero outside each active set and for zero-power groups.
    t : ndarray, shape (S, M) or None
        Per-BS diagonal resolvent values (coupled form only).
    iterations : int
    residual : float
        ``max |Gamma - map(Gamma)|`` over the batch.

    Raises
    ------
    SolverFailure
        If the residual is still above ``tol`` after ``max_iter`` sweeps.
    """
    beta2 = np.asarray(beta2, dtype=float)
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    qa = masks * np.asarray(powers, dtype=float)[None, :]
    if form == "coupled":
        G, t, iters, res = _solve_coupled(beta2, qa, gamma, tol, max_iter, t0)
    elif form == "single":
        G, iters, res = _solve_single(beta2, qa, gamma, tol, max_iter)
        t = None
    else:
        raise InvalidInputError(f"unknown fixed-point form {form!r}")
    if not np.all(np.isfinite(G)) or res > tol:
        raise SolverFailure("fixed-point iteration did not converge", residual=float(res),
                            diagnostics={"iterations": iters, "form": form})
    return np.maximum(G, 0.0), t, iters, float(res)


def logdet_from_gamma(beta2, powers, gamma, masks, G) -> np.ndarray:
    """Deterministic-equivalent ``(1/N) log|I + Theta_S|`` for each set, in nats."""
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    qa = masks * np.asarray(powers, dtype=float)[None, :]
    load = (qa / (1.0 + G)) @ np.asarray(beta2).T
    return (np.sum(np.log1p(G) - G / (1.0 + G), axis=1)
            + gamma * np.sum(np.log1p(load), axis=1))


def solve_gamma(beta, powers, gamma, active, k, form: str = "coupled") -> float:
    """``Gamma`` of group ``k`` when the groups in ``active`` are undecoded.

    ``beta`` is ``(num_bs, A)``; ``active`` an iterable of column indices
    that must contain ``k``.
    """
    beta = np.array(beta, dtype=float, ndmin=2)
    A = beta.shape[1]
    mask = np.zeros(A, dtype=bool)
    mask[list(active)] = True
    if not mask[k]:
        raise InvalidInputError("target group must belong to the active set")
    G, _, _, _ = solve_fixed_points(beta ** 2, powers, gamma, mask[None, :], form=form)
    return float(G[0, k])


def asymptotic_logdet(cluster: ClusterProblem, powers, active, form: str = "coupled") -> float:
    """``lim (1/N) E log|I + Theta|`` for the groups (column indices) in ``active``."""
    mask = np.zeros(cluster.A, dtype=bool)
    mask[list(active)] = True
    if not mask.any():
        return 0.0
    b2 = cluster.beta2
    G, _, _, _ = solve_fixed_points(b2, powers, cluster.gamma, mask[None, :], form=form)
    return float(logdet_from_gamma(b2, powers, cluster.gamma, mask[None, :], G)[0])


def _suffix_masks(A: int) -> np.ndarray:
    return np.triu(np.ones((A, A), dtype=bool))


def weighted_objective(cluster: ClusterProblem, powers, order: WeightOrder,
                       form: str = "coupled") -> float:
    """``sum_k delta_k I_{k:A}`` for the given column-order powers."""
    b2 = cluster.beta2[:, order.perm]
    q = np.asarray(powers, dtype=float)[order.perm]
    masks = _suffix_masks(cluster.A)[order.delta > 0]
    G, _, _, _ = solve_fixed_points(b2, q, cluster.gamma, masks, form=form)
    return float(np.dot(order.delta[order.delta > 0],
                        logdet_from_gamma(b2, q, cluster.gamma, masks, G)))


# ---------------------------------------------------------------------------
# Weighted sum-rate power allocation
# ---------------------------------------------------------------------------
def algorithm1(cluster: ClusterProblem, order: WeightOrder, *, form: str = "coupled",
               tol: float = 1e-9, max_iter: int = 50_000, zero_tol: float = 1e-6,
               init=None) -> Algorithm1Result:
    """Power allocation maximising the weighted ergodic sum rate.

    Iterates ``Q_k <- Q num_k / sum_j num_j`` with
    ``num_k = sum_{i<=k} delta_i (1 - Upsilon^(k)_{i:A})`` from
    ``Q/A`` (or ``init``) until the largest change is at most ``tol * Q``.
    Groups whose converged power is below ``zero_tol * Q`` are zeroed one
    at a time, lowest marginal utility first, and the iteration is rerun on
    the remaining groups.

    Returns powers in column order plus the suffix-set fixed-point table and
    log-determinants at the final powers.
    """
    if order.A != cluster.A:
        raise InvalidInputError("weight vector length does not match the cluster")
    if not np.any(order.delta > 0):
        raise InvalidInputError("at least one weight must be positive")
    A, Qtot, gamma = cluster.A, cluster.Q, cluster.gamma
    perm = order.perm
    b2 = cluster.beta2[:, perm]
    delta = order.delta
    levels = np.flatnonzero(delta > 0)
    masks = _suffix_masks(A)[levels]
    dl = delta[levels]
    cumw = np.cumsum(delta)

    # Groups with zero cumulative weight or no channel never earn power.
    active = (cumw > 0) & (b2.sum(axis=0) > 0)
    if not active.any():
        raise InvalidInputError("no group has both positive weight and a non-zero channel")
    pruned = [int(k) for k in np.flatnonzero(~active)]

    if init is None:
        q = np.where(active, Qtot / active.sum(), 0.0)
    else:
        q = np.asarray(init, dtype=float)[perm].copy()
        q = np.where(active, np.maximum(q, 1e-3 * Qtot / active.sum()), 0.0)
        q *= Qtot / q.sum()

    t = None
    total_iters = 0
    fp_iters = 0
    while True:
        converged = False
        for _ in range(max_iter):
            total_iters += 1
            G, t, it, _ = solve_fixed_points(b2, q, gamma, masks, form=form, t0=t)
            fp_iters += it
            num = dl @ (G / (1.0 + G))
            num = np.where(active, num, 0.0)
            s = num.sum()
            if not s > 0:
                raise SolverFailure("power update degenerated to zero", residual=float("nan"))
            q_new = Qtot * num / s
            change = np.max(np.abs(q_new - q))
            q = q_new
            if change <= tol * Qtot:
                converged = True
                break
        if not converged:
            raise SolverFailure("power allocation iteration did not converge",
                                residual=float(change) / Qtot,
                                diagnostics={"iterations": total_iters})
        small = np.flatnonzero(active & (q <= zero_tol * Qtot))
        if small.size == 0:
            break
        G, t, _, _ = solve_fixed_points(b2, q, gamma, masks, form=form, t0=t)
        marginal = _marginal_sinr(b2, q, gamma, masks, G, t, form)
        util = dl @ marginal
        drop = int(small[np.argmin(util[small])])
        active[drop] = False
        pruned.append(drop)
        q[drop] = 0.0
        q *= Qtot / q.sum()
        t = None

    # Final evaluation on every suffix set (needed for rates) and KKT audit.
    all_masks = _suffix_masks(A)
    G_all, t_all, it, res = solve_fixed_points(b2, q, gamma, all_masks, form=form)
    logdets = np.append(logdet_from_gamma(b2, q, gamma, all_masks, G_all), 0.0)
    num = dl @ (G_all[levels] / (1.0 + G_all[levels]))
    lam = num.sum() / Qtot
    kkt = {}
    if pruned:
        marginal = _marginal_sinr(b2, q, gamma, masks, G_all[levels],
                                  None if t_all is None else t_all[levels], form)
        util = dl @ marginal
        kkt = {int(perm[k]): bool(util[k] <= lam * (1 + 1e-6)) for k in pruned}

    powers = np.empty(A)
    powers[perm] = q
    return Algorithm1Result(
        powers=powers, order=order,
        table=FixedPointTable(gamma=G_all, iterations=fp_iters, residual=res),
        logdets=logdets, iterations=total_iters,
        pruned=tuple(int(perm[k]) for k in pruned),
        diagnostics={"lambda": lam, "kkt_pruned_ok": kkt},
    )


def _marginal_sinr(b2, q, gamma, masks, G, t, form):
    """``lim Gamma_k / Q_k`` as ``Q_k -> 0``: SINR per unit power.

    Every group, active or not, is probed against the interference of the
    set's other groups.
    """
    qa = masks * q[None, :]
    if form == "coupled":
        if t is None:
            t = 1.0 / (1.0 + (qa / (1.0 + G)) @ b2.T)
        out = gamma * (t @ b2)
    else:
        L = qa @ b2.T
        d = 1.0 + L
        out = gamma * np.sum(b2.T[None] / d[:, None, :], axis=2)
    return out * masks


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------
def group_rates(cluster: ClusterProblem, powers, order: WeightOrder, *,
                form: str = "coupled", tie_split: str = "shapley", target=None,
                logdets: np.ndarray | None = None) -> np.ndarray:
    """Per-group ergodic rates (nats) in column order.

    Rates follow successive decoding in ``pi`` order:
    ``R_{pi_k} = I_{k:A} - I_{k+1:A}``.

    Inside a block of tied weights every decoding order is optimal, so the
    block may sit anywhere on the corresponding dominant face.  Members with
    identical sorted channel columns form an equivalence class whose rate is
    split equally; the face vertices are the class-level decoding orders.

    ``tie_split``:

    ``"sic"``
        the stable order, no time sharing;
    ``"shapley"``
        the average over all class orders (cyclic rotations only beyond
        six classes);
    ``"project"``
        the time-sharing point closest to ``target`` (column order); with
        ``target=None`` the most even split of each block.

    The block totals, hence the weighted sum rate, do not depend on the choice.
    """
    if tie_split not in ("sic", "shapley", "project"):
        raise InvalidInputError(f"unknown tie_split {tie_split!r}")
    A = cluster.A
    perm = order.perm
    b2 = cluster.beta2[:, perm]
    q = np.asarray(powers, dtype=float)[perm]
    if logdets is None:
        masks = _suffix_masks(A)
        G, _, _, _ = solve_fixed_points(b2, q, cluster.gamma, masks, form=form)
        logdets = np.append(logdet_from_gamma(b2, q, cluster.gamma, masks, G), 0.0)
    rates_pi = logdets[:-1] - logdets[1:]

    if tie_split != "sic":
        tgt = None if target is None else np.asarray(target, dtype=float)[perm]
        for a, b in order.blocks:
            if b - a < 2:
                continue
            V = _tie_vertices(b2, q, cluster.gamma, a, b, logdets, form)
            if V is None:
                continue
            if tie_split == "shapley" or V.shape[1] == 1:
                rates_pi[a:b] = V.mean(axis=1)
            else:
                t = np.full(b - a, V[:, 0].sum() / (b - a)) if tgt is None else tgt[a:b]
                rates_pi[a:b] = V @ _simplex_lstsq(V, t)

    rates_pi = np.where(q > 0, rates_pi, 0.0)
    rates_pi = np.where(rates_pi < 0, np.where(rates_pi >= -1e-12, 0.0, rates_pi), rates_pi)
    out = np.empty(A)
    out[perm] = rates_pi
    return out


MAX_TIE_CLASSES = 6


def _equivalence_classes(b2, q, members, rtol=1e-9):
    classes, keys = [], []
    for p in members:
        if q[p] == 0:
            continue
        key = np.sort(b2[:, p])
        for c, kk in zip(classes, keys):
            if np.allclose(key, kk, rtol=rtol, atol=0.0):
                c.append(p)
                break
        else:
            classes.append([p])
            keys.append(key)
    return classes


def _tie_vertices(b2, q, gamma, a, b, logdets, form):
    """Rates of block positions ``a:b`` for each class-level decoding order.

    Returns an array ``(b - a, n_orders)`` or ``None`` when the block
    carries no power.
    """
    A = b2.shape[1]
    classes = _equivalence_classes(b2, q, range(a, b))
    c = len(classes)
    if c == 0:
        return None
    if c <= MAX_TIE_CLASSES:
        orders = list(itertools.permutations(range(c)))
    else:
        orders = [tuple(np.roll(np.arange(c), -r)) for r in range(c)]
    subsets = sorted({frozenset(o[j:]) for o in orders for j in range(1, c)}, key=sorted)
    values = {frozenset(range(c)): logdets[a], frozenset(): logdets[b]}
    if subsets:
        masks = np.zeros((len(subsets), A), dtype=bool)
        masks[:, b:] = True
        for i, sub in enumerate(subsets):
            for ci in sub:
                masks[i, classes[ci]] = True
        G, _, _, _ = solve_fixed_points(b2, q, gamma, masks, form=form)
        values.update(zip(subsets, logdet_from_gamma(b2, q, gamma, masks, G)))
    V = np.zeros((b - a, len(orders)))
    for n, o in enumerate(orders):
        for j, ci in enumerate(o):
            gain = values[frozenset(o[j:])] - values[frozenset(o[j + 1:])]
            V[np.array(classes[ci]) - a, n] = gain / len(classes[ci])
    return V


def _simplex_lstsq(V, t):
    """Convex weights ``lam`` minimising ``||V lam - t||``."""
    n = V.shape[1]
    rho = 1e3 * max(1.0, float(np.abs(V).max()), float(np.abs(t).max()))
    lam, _ = nnls(np.vstack([V, np.full((1, n), rho)]), np.append(t, rho))
    s = lam.sum()
    return lam / s if s > 0 else np.full(n, 1.0 / n)
