"""Reference computations that share no code with the package."""

import itertools
import math

import numpy as np


def quadratic_gamma(q_beta2, gamma=1):
    """Root of G^2 + G - gamma*Q*beta^2 = 0 for one group on one BS with ``gamma = 1``."""
    return (-1.0 + math.sqrt(1.0 + 4.0 * q_beta2)) / 2.0


def square_mp_capacity(snr):
    """(1/N) E log|I + snr/N H H^H| for square N x N iid CN(0,1), N -> infinity."""
    g = quadratic_gamma(snr)
    return 2.0 * math.log1p(g) - g / (1.0 + g)


def substitution_logdet(beta2, gamma, Q, tol=1e-13, max_iter=20000):
    """Plain substitution on the per-BS resolvent for a batch of power vectors.

    ``beta2`` is (M, A); ``Q`` is (P, A).  Returns log-det per row, in nats.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    P, A = Q.shape
    M = beta2.shape[0]
    t = np.ones((P, M))
    for _ in range(max_iter):
        G = gamma * Q * (t @ beta2)
        t_new = 1.0 / (1.0 + (Q / (1.0 + G)) @ beta2.T)
        if np.max(np.abs(t_new - t)) < tol:
            t = t_new
            break
        t = t_new
    G = gamma * Q * (t @ beta2)
    load = (Q / (1.0 + G)) @ beta2.T
    return np.sum(np.log1p(G) - G / (1.0 + G), axis=1) + gamma * np.sum(np.log1p(load), axis=1)


def weighted_objective(beta2, gamma, weights, Q):
    """sum_k delta_k I_{k:A} with ascending weights, for each power row of ``Q``."""
    w = np.asarray(weights, dtype=float)
    perm = np.argsort(w, kind="stable")
    ws = w[perm]
    delta = np.diff(ws, prepend=0.0)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    total = np.zeros(Q.shape[0])
    for i in range(len(w)):
        if delta[i] == 0:
            continue
        sub = perm[i:]
        total += delta[i] * substitution_logdet(beta2[:, sub], gamma, Q[:, sub])
    return total


def simplex_grid(A, Q, steps=1000):
    """All power vectors on the simplex sum = Q with spacing Q/steps."""
    pts = [c + (steps - sum(c),) for c in itertools.product(range(steps + 1), repeat=A - 1)
           if sum(c) <= steps]
    return np.array(pts, dtype=float) * (Q / steps)


def grid_maximum(beta2, gamma, weights, Q, steps=1000, chunk=100_000):
    grid = simplex_grid(beta2.shape[1], Q, steps)
    best = -np.inf
    arg = None
    for s in range(0, len(grid), chunk):
        vals = weighted_objective(beta2, gamma, weights, grid[s:s + chunk])
        j = int(np.argmax(vals))
        if vals[j] > best:
            best, arg = float(vals[j]), grid[s + j]
    return best, arg
