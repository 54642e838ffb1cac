"""Policy-gradient estimators and the exact gradients they are checked against.

Every sampled estimator is a score-function sum ``coef * grad log pi(a|s)``.
Estimators build the coefficient table ``coef[..., t_remaining, s, a]`` and
hand it to the policy's ``accumulate_score``, which returns a gradient with
the policy's parameter shape (logits ``[S, A, T+1]``, or ``[1]`` for the
aliased policy).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .exact import value_tables
from .mdp import FiniteMdp, Policy, TrajectoryBatch, enumerate_paths
from .pvf import ParticleSystem, PvfEstimate


def _as_batch(trajectories) -> TrajectoryBatch:
    if isinstance(trajectories, TrajectoryBatch):
        if len(trajectories) == 0:
            raise ValueError("empty trajectory batch")
        return trajectories
    return TrajectoryBatch.from_trajectories(list(trajectories))


def _policy_dims(policy: Policy, states: np.ndarray, actions: np.ndarray, T: int) -> tuple[int, int]:
    if hasattr(policy, "logits"):
        S, A, steps = policy.logits.shape
        if steps != T + 1:
            raise ValueError(f"policy has {steps} time steps, samples have {T + 1}")
        if states.size and (states.max() >= S or actions.max() >= A):
            raise ValueError("samples index outside the policy table")
        return S, A
    return int(states.max()) + 1 if states.size else 1, 2


def score_coefficients(states, actions, values, S: int, A: int) -> np.ndarray:
    """Scatter per-sample coefficients into ``coef[n, t_remaining, s, a]``.

    ``states``, ``actions`` and ``values`` share shape ``[n, T+1, ...]``;
    axis 1 is the time step ``t``.
    """
    states = np.asarray(states)
    n, steps = states.shape[:2]
    t_rem = (steps - 1 - np.arange(steps)).reshape((1, steps) + (1,) * (states.ndim - 2))
    run = np.arange(n).reshape((n,) + (1,) * (states.ndim - 1))
    flat = ((run * steps + t_rem) * S + states) * A + np.asarray(actions)
    vals = np.broadcast_to(values, states.shape)
    coef = np.bincount(flat.ravel(), weights=vals.ravel(), minlength=n * steps * S * A)
    return coef.reshape(n, steps, S, A)


# -- finite differences -------------------------------------------------------


def finite_diff_grad(
    value_fn: Callable[[Policy], float], policy: Policy, epsilon: float = 1e-5, scheme: str = "central"
) -> np.ndarray:
    """Coordinate-wise finite differences of ``value_fn`` over ``policy.params``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = np.array(policy.params, dtype=np.float64)
    grad = np.zeros_like(base)
    f0 = value_fn(policy) if scheme != "central" else None
    for idx in np.ndindex(base.shape):
        up = base.copy()
        down = base.copy()
        if scheme == "central":
            up[idx] += epsilon
            down[idx] -= epsilon
            grad[idx] = (value_fn(policy.with_params(up)) - value_fn(policy.with_params(down))) / (2 * epsilon)
        elif scheme == "forward":
            up[idx] += epsilon
            grad[idx] = (value_fn(policy.with_params(up)) - f0) / epsilon
        elif scheme == "backward":
            down[idx] -= epsilon
            grad[idx] = (f0 - value_fn(policy.with_params(down))) / epsilon
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    return grad


# -- REINFORCE ---------------------------------------------------------------


class EmaBaseline:
    """Per-(state, steps remaining) moving average of the observed return-to-go."""

    def __init__(self, num_states: int, horizon: int, smoothing: float = 0.8):
        self.table = np.zeros((num_states, horizon + 1))
        self.smoothing = float(smoothing)

    def values(self, batch: TrajectoryBatch) -> np.ndarray:
        T = batch.horizon
        return self.table[batch.states, T - np.arange(T + 1)[None, :]]

    def update(self, batch: TrajectoryBatch) -> None:
        """One EMA step per visited cell, towards the batch-mean return-to-go there."""
        T = batch.horizon
        S, steps = self.table.shape
        g = batch.returns_to_go()
        flat = batch.states * steps + (T - np.arange(T + 1))[None, :]
        sums = np.bincount(flat.ravel(), weights=g.ravel(), minlength=S * steps)
        counts = np.bincount(flat.ravel(), minlength=S * steps)
        seen = counts > 0
        tab = self.table.reshape(-1)
        tab[seen] = self.smoothing * tab[seen] + (1.0 - self.smoothing) * sums[seen] / counts[seen]


def reinforce_grad(trajectories, baseline: EmaBaseline | None, policy: Policy) -> np.ndarray:
    """Batch-mean of ``sum_t (G_t - b[S_t, T-t]) grad log pi(A_t|S_t)``.

    The baseline (if any) is read first and then updated with this batch.
    """
    batch = _as_batch(trajectories)
    S, A = _policy_dims(policy, batch.states, batch.actions, batch.horizon)
    signal = batch.returns_to_go()
    if baseline is not None:
        signal = signal - baseline.values(batch)
    coef = score_coefficients(batch.states, batch.actions, signal, S, A).sum(axis=0) / len(batch)
    grad = policy.accumulate_score(coef)
    if baseline is not None:
        baseline.update(batch)
    return grad


def reinforce_grad_samples(batch: TrajectoryBatch, policy: Policy, baseline: EmaBaseline | None = None) -> np.ndarray:
    """Per-trajectory REINFORCE gradients, shape ``[n, ...]``.

    With a baseline, trajectory ``i`` is scored against the baseline left by
    trajectories ``0..i-1`` and then folded into it, as in training with
    batches of one.
    """
    S, A = _policy_dims(policy, batch.states, batch.actions, batch.horizon)
    signal = batch.returns_to_go()
    if baseline is not None:
        signal = signal.copy()
        for i in range(len(batch)):
            one = TrajectoryBatch(batch.states[i:i + 1], batch.actions[i:i + 1], batch.rewards[i:i + 1])
            signal[i] -= baseline.values(one)[0]
            baseline.update(one)
    coef = score_coefficients(batch.states, batch.actions, signal, S, A)
    return policy.accumulate_score(coef)


# -- particle value function ---------------------------------------------------


def _system(estimate) -> ParticleSystem:
    return estimate.system if isinstance(estimate, PvfEstimate) else estimate


def _batched(system: ParticleSystem):
    if system.states.ndim == 2:
        return (system.states[None], system.actions[None], system.log_weights[None], system.log_z[None]), True
    return (system.states, system.actions, system.log_weights, system.log_z), False


def _pvf_coefficients(system: ParticleSystem, policy: Policy, signal_fn) -> np.ndarray:
    (states, actions, log_w, log_z), single = _batched(system)
    S, A = _policy_dims(policy, states, actions, states.shape[1] - 1)
    signal = signal_fn(log_w, log_z) / system.beta  # [n, T+1, K]
    coef = score_coefficients(states, actions, signal, S, A)
    grad = policy.accumulate_score(coef)
    return grad[0] if single else grad


def _future_log_z(log_z: np.ndarray) -> np.ndarray:
    """``sum_{t' > t} log Z_t'`` as ``[n, T+1]``."""
    to_go = np.cumsum(log_z[:, ::-1], axis=1)[:, ::-1]
    return to_go - log_z


def pvf_policy_grad(estimate, policy: Policy) -> np.ndarray:
    """Score-function gradient of the PVF from one filter run (or a batch of runs).

    Every particle action at step ``t`` is credited with
    ``(1/beta) * sum_{t' >= t} log Z_t'``.
    """
    def signal(log_w, log_z):
        to_go = np.cumsum(log_z[:, ::-1], axis=1)[:, ::-1]
        return np.broadcast_to(to_go[:, :, None], log_w.shape)

    return _pvf_coefficients(_system(estimate), policy, signal)


def leave_one_out_log_mean(log_w: np.ndarray) -> np.ndarray:
    """``log mean`` of the weights with entry ``i`` swapped for the others' geometric mean.

    ``log_w`` has particles on its last axis; the result has the same shape.
    """
    K = log_w.shape[-1]
    others_mean = (log_w.sum(axis=-1, keepdims=True) - log_w) / (K - 1)
    swapped = np.repeat(log_w[..., None, :], K, axis=-2)  # [..., i, j]
    diag = np.arange(K)
    swapped[..., diag, diag] = others_mean
    return logsumexp(swapped, axis=-1) - math.log(K)


def pvf_policy_grad_cv(estimate, policy: Policy) -> np.ndarray:
    """PVF gradient with a leave-one-out control variate on the immediate term.

    For particle ``i`` at step ``t`` the immediate ``log Z_t`` is replaced by
    ``log Z_t - log Zhat_t^(-i)``; later terms are left as they are.
    """
    system = _system(estimate)
    if system.num_particles < 2:
        raise ValueError("the leave-one-out control variate needs K >= 2")

    def signal(log_w, log_z):
        cv = log_z[:, :, None] - leave_one_out_log_mean(log_w)
        return cv + _future_log_z(log_z)[:, :, None]

    return _pvf_coefficients(system, policy, signal)


# -- VIMCO -------------------------------------------------------------------


def vimco_objective(returns, beta: float) -> float:
    """``(1/beta) log((1/K) sum_i exp(beta * return_i))``."""
    returns = np.asarray(returns, dtype=np.float64)
    beta = float(beta)
    if beta == 0.0:
        raise ValueError("vimco_objective needs beta != 0")
    if returns.shape[-1] < 1:
        raise ValueError("need at least one return")
    val = (logsumexp(beta * returns, axis=-1) - math.log(returns.shape[-1])) / beta
    return float(val) if np.ndim(val) == 0 else val


def vimco_learning_signals(returns: np.ndarray, beta: float) -> np.ndarray:
    """Per-rollout ``L - L^(-i)`` with the geometric-mean leave-one-out baseline."""
    lw = beta * np.asarray(returns, dtype=np.float64)
    K = lw.shape[-1]
    full = logsumexp(lw, axis=-1, keepdims=True) - math.log(K)
    return (full - leave_one_out_log_mean(lw)) / beta


def vimco_grad(trajectories, beta: float, policy: Policy, groups: int | None = None) -> np.ndarray:
    """Score-function gradient of the multi-sample objective over ``K`` rollouts.

    With ``groups`` set, the batch is split into that many consecutive
    ``K``-tuples and one gradient per tuple is returned (``[groups, ...]``).
    """
    batch = _as_batch(trajectories)
    beta = float(beta)
    if beta == 0.0:
        raise ValueError("vimco_grad needs beta != 0")
    n = len(batch)
    g = 1 if groups is None else int(groups)
    if n % g:
        raise ValueError("batch size must be a multiple of groups")
    K = n // g
    if K < 2:
        raise ValueError("vimco_grad needs K >= 2")
    S, A = _policy_dims(policy, batch.states, batch.actions, batch.horizon)
    signals = vimco_learning_signals(batch.returns.reshape(g, K), beta)  # [g, K]
    steps = batch.horizon + 1
    states = batch.states.reshape(g, K, steps).transpose(0, 2, 1)
    actions = batch.actions.reshape(g, K, steps).transpose(0, 2, 1)
    coef = score_coefficients(states, actions, signals[:, None, :], S, A)
    grad = policy.accumulate_score(coef)
    return grad[0] if groups is None else grad


# -- exact gradients -----------------------------------------------------------


def _path_scores(paths, policy: Policy, mdp: FiniteMdp, weights: np.ndarray) -> np.ndarray:
    """``sum_paths sum_t weights[path, t] grad log pi(A_t|S_t)``."""
    coef = score_coefficients(paths.states, paths.actions, weights, mdp.num_states, mdp.num_actions)
    return policy.accumulate_score(coef.sum(axis=0))


def exact_risk_policy_grad(mdp: FiniteMdp, policy: Policy, s0: int, beta: float) -> np.ndarray:
    """Exact gradient of the risk value by path enumeration.

    Step ``t`` of a path is weighted by
    ``(1/beta) exp(beta * (G_{<t} + Q_{T-t}(S_t, A_t) - V_T(s0)))`` where
    ``G_{<t}`` is the reward already collected; at ``beta == 0`` the weight is
    ``Q_{T-t}(S_t, A_t)``.
    """
    beta = float(beta)
    paths = enumerate_paths(mdp, policy, s0)
    V, Q = value_tables(mdp, policy, beta)
    T = mdp.horizon
    t_rem = T - np.arange(T + 1)
    q = Q[t_rem[None, :], paths.states, paths.actions]  # [N, T+1]
    if beta == 0.0:
        w = q
    else:
        past = np.cumsum(paths.rewards, axis=1) - paths.rewards
        w = np.exp(beta * (past + q - V[T, s0])) / beta
    return _path_scores(paths, policy, mdp, paths.probs[:, None] * w)


def exp_space_grad_enumerated(mdp: FiniteMdp, policy: Policy, s0: int, beta: float) -> np.ndarray:
    """``E[exp(beta * return) * sum_t grad log pi(A_t|S_t)]`` by enumeration."""
    paths = enumerate_paths(mdp, policy, s0)
    w = paths.probs * np.exp(beta * paths.returns)
    return _path_scores(paths, policy, mdp, np.broadcast_to(w[:, None], paths.states.shape))


def vimco_value_exact(mdp: FiniteMdp, policy: Policy, s0: int, K: int, beta: float) -> float:
    """Expected multi-sample objective over all ``K``-tuples of paths."""
    paths = enumerate_paths(mdp, policy, s0)
    n = len(paths.probs)
    if float(n) ** K > 1e7:
        from .mdp import CapacityError

        raise CapacityError(f"{n}^{K} path tuples is too many")
    idx = np.stack(np.meshgrid(*([np.arange(n)] * K), indexing="ij"), axis=-1).reshape(-1, K)
    probs = np.prod(paths.probs[idx], axis=1)
    vals = vimco_objective(paths.returns[idx], beta)
    return float(np.sum(probs * vals))
