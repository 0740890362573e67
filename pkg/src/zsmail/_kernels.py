"""Compiled inner loop for UCBVI on tabular MDPs with the squared-distance reward."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK = 0
ROLLOUT_TOO_LONG = 1


@njit(cache=True)
def _pick(cdf_row, u):
    n = cdf_row.shape[0]
    target = u * cdf_row[n - 1]
    for i in range(n):
        if target < cdf_row[i]:
            return i
    return n - 1


@njit(cache=True)
def ucbvi_distance_kernel(
    seed,
    cdf,  # (S, A, S) next-state CDFs
    d0_cdf,  # (S,)
    learner_rows,  # (S, A_l) learner policy rows entering the reward
    learner_sq,  # (S,) squared norms of the learner rows
    expert_cdf,  # (S, A_l) expert CDFs
    gamma,
    coef,
    max_steps,
    Q,  # (S, A) modified in place
    N,
    Nsas,
    Rsum,
    policies,  # (T, S) output
    samples,  # (T, 2) output: visited state and action
    expert_actions,  # (T,) output: first expert draw per step
):
    np.random.seed(seed)
    S, A = Q.shape
    T = policies.shape[0]
    V = np.empty(S)
    for s in range(S):
        V[s] = Q[s].max()
    optimistic = np.empty((S, A))
    P_hat = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            denom = N[s, a] + 1.0
            optimistic[s, a] = Rsum[s, a] / denom + coef / math.sqrt(denom)
            for t2 in range(S):
                P_hat[s, a, t2] = Nsas[s, a, t2] / denom
    log_gamma = math.log(gamma) if gamma > 0 else -np.inf
    pi = np.empty(S, dtype=np.int64)

    for t in range(T):
        for s in range(S):
            pi[s] = np.argmax(Q[s])
            policies[t, s] = pi[s]
        s = _pick(d0_cdf, np.random.random())
        u = np.random.random()
        H = 0
        if gamma > 0:
            h = math.log1p(-u) / log_gamma
            if h > max_steps:
                return ROLLOUT_TOO_LONG
            H = int(h)
        for _ in range(H):
            s = _pick(cdf[s, pi[s]], np.random.random())
        a = pi[s]
        s_next = _pick(cdf[s, a], np.random.random())
        e1 = _pick(expert_cdf[s], np.random.random())
        e2 = _pick(expert_cdf[s], np.random.random())
        reward = (1.0 if e1 == e2 else 0.0) - 2.0 * learner_rows[s, e1] + learner_sq[s]
        samples[t, 0] = s
        samples[t, 1] = a
        expert_actions[t] = e1

        N[s, a] += 1.0
        Nsas[s, a, s_next] += 1.0
        Rsum[s, a] += reward
        denom = N[s, a] + 1.0
        optimistic[s, a] = Rsum[s, a] / denom + coef / math.sqrt(denom)
        for t2 in range(S):
            P_hat[s, a, t2] = Nsas[s, a, t2] / denom

        for x in range(S):
            for y in range(A):
                target = optimistic[x, y]
                for t2 in range(S):
                    target += gamma * P_hat[x, y, t2] * V[t2]
                if target < 0.0:
                    target = 0.0
                if target < Q[x, y]:
                    Q[x, y] = target
        for x in range(S):
            V[x] = Q[x].max()
    return OK
