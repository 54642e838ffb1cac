"""Exact risk-sensitive values for small MDPs.

Two independent routes are provided: backward recursions (the multiplicative
Bellman equation, run in log space) and brute-force path enumeration. The
generic certain equivalent only has the enumeration route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .mdp import FiniteMdp, Policy, enumerate_paths


@dataclass(frozen=True)
class UtilitySpec:
    """A monotone utility ``u`` paired with its inverse."""

    u: Callable[[np.ndarray], np.ndarray]
    u_inv: Callable[[float], float]
    name: str = "custom"

    @classmethod
    def identity(cls) -> "UtilitySpec":
        return cls(lambda x: np.asarray(x, dtype=float), lambda y: float(y), "identity")

    @classmethod
    def exponential(cls, beta: float) -> "UtilitySpec":
        """``u(x) = sign(beta) exp(beta x)``; the identity when ``beta == 0``."""
        beta = float(beta)
        if beta == 0.0:
            return cls.identity()
        sign = math.copysign(1.0, beta)
        return cls(
            lambda x: sign * np.exp(beta * np.asarray(x, dtype=float)),
            lambda y: math.log(sign * y) / beta,
            f"exponential({beta:g})",
        )

    @classmethod
    def cubic_odd(cls) -> "UtilitySpec":
        return cls(lambda x: np.asarray(x, dtype=float) ** 3, lambda y: float(np.cbrt(y)), "cubic-odd")

    @classmethod
    def named(cls, name: str, beta: float = 0.0) -> "UtilitySpec":
        if name == "identity":
            return cls.identity()
        if name == "exponential":
            return cls.exponential(beta)
        if name == "cubic-odd":
            return cls.cubic_odd()
        raise ValueError(f"unknown utility {name!r}")


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not math.isfinite(beta):
        raise ValueError(f"beta must be finite, got {beta}")
    return beta


def certain_equivalent(mdp: FiniteMdp, policy: Policy, s0: int, utility: UtilitySpec) -> float:
    """``u^-1(E[u(return)])`` by enumerating every path."""
    paths = enumerate_paths(mdp, policy, s0)
    expected_utility = float(np.sum(paths.probs * utility.u(paths.returns)))
    return utility.u_inv(expected_utility)


def value_tables(mdp: FiniteMdp, policy: Policy, beta: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """State and state-action risk values for every number of steps remaining.

    Returns ``(V, Q)`` with shapes ``[T + 1, S]`` and ``[T + 1, S, A]``,
    indexed by ``t_remaining``. ``beta == 0`` runs the additive recursion;
    otherwise the recursion on ``beta * V`` is carried out with log-sum-exp.
    """
    beta = _check_beta(beta)
    table = policy.table_for(mdp)
    T, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    V = np.zeros((T + 1, S))
    Q = np.zeros((T + 1, S, A))
    trans = mdp.transition
    if beta == 0.0:
        nxt = np.zeros(S)
        for t_rem in range(T + 1):
            Q[t_rem] = mdp.reward[t_rem] + trans @ nxt
            V[t_rem] = np.sum(table[t_rem] * Q[t_rem], axis=1)
            nxt = V[t_rem]
        return V, Q

    # log-space: bq = beta * Q, bv = beta * V
    bv_next = np.zeros(S)
    with np.errstate(divide="ignore"):
        for t_rem in range(T + 1):
            bq = beta * mdp.reward[t_rem] + logsumexp(
                np.broadcast_to(bv_next, trans.shape), b=trans, axis=2
            )
            bv = logsumexp(bq, b=table[t_rem], axis=1)
            Q[t_rem] = bq / beta
            V[t_rem] = bv / beta
            bv_next = bv
    return V, Q


def expected_return_exact(mdp: FiniteMdp, policy: Policy, s0: int) -> float:
    s0 = mdp.check_state(s0)
    V, _ = value_tables(mdp, policy, 0.0)
    return float(V[mdp.horizon, s0])


def risk_value_exact(mdp: FiniteMdp, policy: Policy, s0: int, beta: float) -> float:
    """``(1/beta) log E[exp(beta * return)]``, or the expected return at ``beta == 0``."""
    s0 = mdp.check_state(s0)
    V, _ = value_tables(mdp, policy, beta)
    return float(V[mdp.horizon, s0])


def q_value_exact(mdp: FiniteMdp, policy: Policy, s0: int, a0: int, beta: float) -> float:
    s0 = mdp.check_state(s0)
    if not 0 <= int(a0) < mdp.num_actions:
        raise ValueError(f"action {a0} out of range")
    _, Q = value_tables(mdp, policy, beta)
    return float(Q[mdp.horizon, s0, int(a0)])


def risk_value_enumerated(mdp: FiniteMdp, policy: Policy, s0: int, beta: float) -> float:
    """Enumeration route for the risk value; the oracle for the recursion."""
    beta = _check_beta(beta)
    paths = enumerate_paths(mdp, policy, s0)
    if beta == 0.0:
        return float(np.sum(paths.probs * paths.returns))
    return float(logsumexp(beta * paths.returns, b=paths.probs) / beta)


def return_support_bounds(mdp: FiniteMdp, policy: Policy, s0: int) -> tuple[float, float]:
    paths = enumerate_paths(mdp, policy, s0)
    returns = paths.returns[paths.probs > 0]
    return float(returns.min()), float(returns.max())


def taylor_coefficients(mdp: FiniteMdp, policy: Policy, s0: int) -> tuple[float, float]:
    """Mean and variance of the return, the first two terms of the small-beta expansion."""
    paths = enumerate_paths(mdp, policy, s0)
    mean = float(np.sum(paths.probs * paths.returns))
    var = float(np.sum(paths.probs * (paths.returns - mean) ** 2))
    return mean, var
