"""Numeric inner loops for rating computation.

Two implementations live here: numba-jitted kernels and plain numpy
fallbacks. Set ARENAKIT_NO_NUMBA=1 to force the numpy path (the jitted and
plain versions are interchangeable; benchmarks/bench_kernels.py compares
them).
"""
from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("ARENAKIT_NO_NUMBA", "") not in ("", "0")

try:
    if _DISABLE:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _elo_replay_py(left_idx, right_idx, score_left, k, alpha, initial, n_models):
    ratings = np.full(n_models, initial, dtype=np.float64)
    for m in range(left_idx.shape[0]):
        i = left_idx[m]
        j = right_idx[m]
        s = score_left[m]
        if s < 0.0:  # dropped record
            continue
        e = 1.0 / (1.0 + 10.0 ** ((ratings[j] - ratings[i]) / alpha))
        delta = k * (s - e)
        ratings[i] += delta
        ratings[j] -= delta
    return ratings


def _aggregate_pairs_py(winner_idx, loser_idx, weight, n_models):
    w = np.zeros((n_models, n_models), dtype=np.float64)
    for m in range(winner_idx.shape[0]):
        w[winner_idx[m], loser_idx[m]] += weight[m]
    return w


def _bt_loglik_grad_py(wins, strengths):
    """Log-likelihood and gradient of the pairwise win model.

    wins[i, j] = weighted number of times i beat j; strengths are natural-log
    scale parameters. P(i beats j) = sigmoid(s_i - s_j).
    """
    n = strengths.shape[0]
    ll = 0.0
    grad = np.zeros(n, dtype=np.float64)
    for i in range(n):
        for j in range(n):
            w = wins[i, j]
            if w == 0.0:
                continue
            d = strengths[i] - strengths[j]
            # log sigmoid(d), numerically stable
            if d > 0.0:
                ll += w * (-np.log1p(np.exp(-d)))
                p = 1.0 / (1.0 + np.exp(-d))
            else:
                ll += w * (d - np.log1p(np.exp(d)))
                p = np.exp(d) / (1.0 + np.exp(d))
            grad[i] += w * (1.0 - p)
            grad[j] -= w * (1.0 - p)
    return ll, grad


def _bt_hessian_py(wins, strengths):
    n = strengths.shape[0]
    h = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            t = wins[i, j] + wins[j, i]
            if t == 0.0:
                continue
            d = strengths[i] - strengths[j]
            p = 1.0 / (1.0 + np.exp(-d))
            q = t * p * (1.0 - p)
            h[i, i] -= q
            h[j, j] -= q
            h[i, j] += q
            h[j, i] += q
    return h


def _resample_aggregate_py(winner_idx, loser_idx, weight, record_of_entry,
                           picked_counts, n_models):
    """Aggregate a bootstrap resample into a win matrix.

    picked_counts[r] is how many times record r was drawn; each expanded
    entry carries its source record index in record_of_entry.
    """
    w = np.zeros((n_models, n_models), dtype=np.float64)
    for m in range(winner_idx.shape[0]):
        c = picked_counts[record_of_entry[m]]
        if c > 0:
            w[winner_idx[m], loser_idx[m]] += weight[m] * c
    return w


if HAVE_NUMBA:
    elo_replay = njit(cache=True)(_elo_replay_py)
    aggregate_pairs = njit(cache=True)(_aggregate_pairs_py)
    bt_loglik_grad = njit(cache=True)(_bt_loglik_grad_py)
    bt_hessian = njit(cache=True)(_bt_hessian_py)
    resample_aggregate = njit(cache=True)(_resample_aggregate_py)
else:
    elo_replay = _elo_replay_py
    aggregate_pairs = _aggregate_pairs_py
    bt_loglik_grad = _bt_loglik_grad_py
    bt_hessian = _bt_hessian_py
    resample_aggregate = _resample_aggregate_py
