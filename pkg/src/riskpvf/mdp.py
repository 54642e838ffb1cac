"""Finite-horizon MDPs, tabular policies and trajectory sampling.

Time is indexed two ways. ``t`` counts steps taken (``0..T``) and
``t_remaining = T - t`` counts steps left. Rewards and policy tables are
stored by ``t_remaining``, so ``reward[T - t]`` is the reward function in
force at time ``t``.

Sampling uses inverse-CDF draws from pre-drawn uniforms, the same
convention the compiled kernels use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import _backend

MAX_ENUMERATED_PATHS = 10**7


class CapacityError(RuntimeError):
    """Raised when an exact computation would exceed its size guard."""


def _readonly(x, dtype=np.float64) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Finite-horizon MDP with non-stationary rewards.

    Attributes:
        transition: ``p(s'|s, a)`` with shape ``[S, A, S]``.
        reward: ``r[t_remaining, s, a]`` with shape ``[T + 1, S, A]``.
        initial_state: default start state.
        grid_shape: optional ``(rows, cols)`` for grid worlds, used to
            reshape state distributions.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_state: int = 0
    grid_shape: tuple[int, int] | None = None
    name: str = ""

    def __post_init__(self):
        trans = _readonly(self.transition)
        rew = _readonly(self.reward)
        if trans.ndim != 3 or trans.shape[0] != trans.shape[2]:
            raise ValueError(f"transition must have shape [S, A, S], got {trans.shape}")
        if rew.ndim != 3 or rew.shape[1:] != trans.shape[:2]:
            raise ValueError(
                f"reward must have shape [T+1, S, A] matching transition, got {rew.shape}"
            )
        if rew.shape[0] < 1:
            raise ValueError("reward needs at least one time step")
        if np.any(trans < 0) or not np.all(np.abs(trans.sum(axis=2) - 1.0) <= 1e-12):
            raise ValueError("transition rows must be probability vectors")
        if not np.all(np.isfinite(rew)):
            raise ValueError("rewards must be finite")
        if not 0 <= self.initial_state < trans.shape[0]:
            raise ValueError(f"initial_state {self.initial_state} out of range")
        if self.grid_shape is not None:
            rows, cols = self.grid_shape
            if rows * cols != trans.shape[0]:
                raise ValueError("grid_shape does not match num_states")
            object.__setattr__(self, "grid_shape", (int(rows), int(cols)))
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "reward", rew)
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def horizon(self) -> int:
        """``T``; an episode has ``T + 1`` steps."""
        return self.reward.shape[0] - 1

    @property
    def transition_cdf(self) -> np.ndarray:
        cdf = self.__dict__.get("_transition_cdf")
        if cdf is None:
            cdf = np.cumsum(self.transition, axis=2)
            cdf.setflags(write=False)
            self.__dict__["_transition_cdf"] = cdf
        return cdf

    def check_state(self, s: int) -> int:
        if not 0 <= int(s) < self.num_states:
            raise ValueError(f"state {s} out of range [0, {self.num_states})")
        return int(s)


def _softmax_last(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Non-stationary softmax policy with logits ``theta[s, a, t_remaining]``."""

    logits: np.ndarray

    def __post_init__(self):
        logits = _readonly(self.logits)
        if logits.ndim != 3:
            raise ValueError(f"logits must have shape [S, A, T+1], got {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        object.__setattr__(self, "logits", logits)

    @classmethod
    def uniform(cls, mdp: FiniteMdp) -> "TabularPolicy":
        return cls(np.zeros((mdp.num_states, mdp.num_actions, mdp.horizon + 1)))

    @property
    def params(self) -> np.ndarray:
        return self.logits

    def with_params(self, params: np.ndarray) -> "TabularPolicy":
        return TabularPolicy(params)

    def probs_table(self) -> np.ndarray:
        """Action probabilities as ``[t_remaining, s, a]``."""
        table = self.__dict__.get("_probs_table")
        if table is None:
            table = _softmax_last(np.transpose(self.logits, (2, 0, 1)))
            table.setflags(write=False)
            self.__dict__["_probs_table"] = table
        return table

    def table_for(self, mdp: FiniteMdp) -> np.ndarray:
        expected = (mdp.num_states, mdp.num_actions, mdp.horizon + 1)
        if self.logits.shape != expected:
            raise ValueError(f"policy shape {self.logits.shape} does not match MDP {expected}")
        return self.probs_table()

    def score_table(self) -> np.ndarray:
        """Per-(t_remaining, s, a) gradient of log pi with respect to its own row.

        Returns ``g[t_rem, s, a, a']`` = ``1{a'=a} - pi(a'|s)``.
        """
        probs = self.probs_table()
        eye = np.eye(probs.shape[-1])
        return eye[None, None, :, :] - probs[:, :, None, :]

    def accumulate_score(self, coef: np.ndarray) -> np.ndarray:
        """Turn per-(t_rem, s, a) score coefficients into a logit gradient.

        ``coef[..., t_rem, s, a]`` multiplies ``grad log pi_{t_rem}(a|s)``;
        the sum collapses to ``coef - pi * sum_a coef`` on each row. Leading
        batch axes are kept.
        """
        probs = self.probs_table()
        grad = coef - probs * coef.sum(axis=-1, keepdims=True)
        return np.ascontiguousarray(np.moveaxis(grad, -3, -1))


@dataclass(frozen=True, eq=False)
class AliasedBernoulliPolicy:
    """Two-action policy sharing one probability ``p_remain`` across all states and steps.

    Action 0 is "remain", action 1 is "leave".
    """

    p_remain: float

    def __post_init__(self):
        p = float(self.p_remain)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p_remain must lie in [0, 1], got {p}")
        object.__setattr__(self, "p_remain", p)

    @property
    def params(self) -> np.ndarray:
        return np.array([self.p_remain])

    def with_params(self, params: np.ndarray) -> "AliasedBernoulliPolicy":
        return AliasedBernoulliPolicy(float(np.asarray(params).reshape(-1)[0]))

    def table_for(self, mdp: FiniteMdp) -> np.ndarray:
        if mdp.num_actions != 2:
            raise ValueError("AliasedBernoulliPolicy needs exactly 2 actions")
        table = np.empty((mdp.horizon + 1, mdp.num_states, 2))
        table[..., 0] = self.p_remain
        table[..., 1] = 1.0 - self.p_remain
        return table

    def accumulate_score(self, coef: np.ndarray) -> np.ndarray:
        """Gradient with respect to ``p_remain`` from score coefficients.

        Coefficients on actions with zero probability are ignored; such
        actions are never sampled.
        """
        p = self.p_remain
        c_remain = coef[..., 0].sum(axis=(-2, -1))
        c_leave = coef[..., 1].sum(axis=(-2, -1))
        g = np.zeros_like(c_remain)
        if p > 0.0:
            g = g + c_remain / p
        if p < 1.0:
            g = g - c_leave / (1.0 - p)
        return np.asarray(g)[..., None]


Policy = Union[TabularPolicy, AliasedBernoulliPolicy]


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())

    def returns_to_go(self) -> np.ndarray:
        return np.cumsum(self.rewards[::-1])[::-1]


class TrajectoryBatch:
    """``n`` independent trajectories stored as ``[n, T+1]`` arrays."""

    def __init__(self, states, actions, rewards):
        self.states = np.asarray(states, dtype=np.int64)
        self.actions = np.asarray(actions, dtype=np.int64)
        self.rewards = np.asarray(rewards, dtype=np.float64)
        if not (self.states.shape == self.actions.shape == self.rewards.shape) or self.states.ndim != 2:
            raise ValueError("states, actions and rewards must share one [n, T+1] shape")

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory]) -> "TrajectoryBatch":
        if len(trajectories) == 0:
            raise ValueError("empty trajectory batch")
        return cls(
            np.stack([tr.states for tr in trajectories]),
            np.stack([tr.actions for tr in trajectories]),
            np.stack([tr.rewards for tr in trajectories]),
        )

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1] - 1

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)

    def returns_to_go(self) -> np.ndarray:
        return np.cumsum(self.rewards[:, ::-1], axis=1)[:, ::-1]


def sample_batch(mdp: FiniteMdp, policy: Policy, s0: int, n: int, rng: np.random.Generator) -> TrajectoryBatch:
    """``n`` independent rollouts through the sampling kernel.

    Uses the same uniform layout as :func:`sample_trajectory`, so the batch
    matches ``n`` consecutive single rollouts from the same generator.
    """
    s0 = mdp.check_state(s0)
    pcdf = np.ascontiguousarray(np.cumsum(policy.table_for(mdp), axis=2))
    u = rng.random((int(n), mdp.horizon + 1, 2))
    init = np.full(int(n), s0, dtype=np.int64)
    states, actions, rewards = _backend.rollout_batch(pcdf, mdp.transition_cdf, mdp.reward, init, u)
    return TrajectoryBatch(states, actions, rewards)


def _check_t_remaining(policy: TabularPolicy, t_remaining: int) -> int:
    n = policy.logits.shape[2]
    if not 0 <= int(t_remaining) < n:
        raise ValueError(f"t_remaining {t_remaining} out of range [0, {n})")
    return int(t_remaining)


def policy_probs(policy: TabularPolicy, s: int, t_remaining: int) -> np.ndarray:
    """Softmax of the logit row ``theta[s, :, t_remaining]``."""
    t_remaining = _check_t_remaining(policy, t_remaining)
    if not 0 <= int(s) < policy.logits.shape[0]:
        raise ValueError(f"state {s} out of range")
    return policy.probs_table()[t_remaining, int(s)].copy()


def log_policy_grad(policy: TabularPolicy, s: int, a: int, t_remaining: int) -> np.ndarray:
    """Gradient of ``log pi_{t_remaining}(a|s)`` with respect to all logits."""
    probs = policy_probs(policy, s, t_remaining)
    if not 0 <= int(a) < probs.shape[0]:
        raise ValueError(f"action {a} out of range")
    grad = np.zeros_like(policy.logits)
    row = -probs
    row[int(a)] += 1.0
    grad[int(s), :, t_remaining] = row
    return grad


def draw_index(cdf: np.ndarray, u: float) -> int:
    """Inverse-CDF draw; never returns an index whose probability is zero."""
    n = cdf.shape[0]
    k = int(np.searchsorted(cdf, u, side="right"))
    if k >= n:
        # u landed in the rounding gap above cdf[-1]
        k = n - 1
    while k > 0 and cdf[k] == cdf[k - 1]:
        k -= 1
    return k


def sample_trajectory(mdp: FiniteMdp, policy: Policy, s0: int, rng: np.random.Generator) -> Trajectory:
    """Roll out one episode of ``T + 1`` steps from ``s0``.

    Draws ``2 * (T + 1)`` uniforms from ``rng``: one for each action and one
    for each transition (the final transition is drawn but unused so the
    stream layout does not depend on ``T``'s parity).
    """
    s = mdp.check_state(s0)
    n = mdp.horizon + 1
    table = policy.table_for(mdp)
    pcdf = np.cumsum(table, axis=2)
    tcdf = mdp.transition_cdf
    u = rng.random((n, 2))
    states = np.empty(n, dtype=np.int64)
    actions = np.empty(n, dtype=np.int64)
    rewards = np.empty(n)
    log_probs = np.empty(n)
    for t in range(n):
        t_rem = mdp.horizon - t
        a = draw_index(pcdf[t_rem, s], u[t, 0])
        states[t] = s
        actions[t] = a
        rewards[t] = mdp.reward[t_rem, s, a]
        log_probs[t] = np.log(table[t_rem, s, a])
        s = draw_index(tcdf[s, a], u[t, 1])
    return Trajectory(states, actions, rewards, log_probs)


@dataclass(frozen=True)
class PathEnumeration:
    """All positive-probability paths of an MDP under a policy."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    probs: np.ndarray

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


def enumerate_paths(mdp: FiniteMdp, policy: Policy, s0: int) -> PathEnumeration:
    """Breadth-first expansion of every (state, action) path with nonzero probability."""
    s0 = mdp.check_state(s0)
    S, A, T = mdp.num_states, mdp.num_actions, mdp.horizon
    worst = float(S * A) ** (T + 1)
    if worst > MAX_ENUMERATED_PATHS:
        raise CapacityError(
            f"enumeration needs up to {worst:.3g} paths (limit {MAX_ENUMERATED_PATHS})"
        )
    table = policy.table_for(mdp)
    states = np.array([[s0]], dtype=np.int64)
    actions = np.zeros((1, 0), dtype=np.int64)
    probs = np.ones(1)
    for t in range(T + 1):
        t_rem = T - t
        cur = states[:, -1]
        pa = table[t_rem, cur]  # [N, A]
        idx, act = np.nonzero(pa > 0)
        states = states[idx]
        actions = np.concatenate([actions[idx], act[:, None]], axis=1)
        probs = probs[idx] * pa[idx, act]
        if t == T:
            break
        ps = mdp.transition[states[:, -1], act]  # [N, S]
        idx, nxt = np.nonzero(ps > 0)
        states = np.concatenate([states[idx], nxt[:, None]], axis=1)
        actions = actions[idx]
        probs = probs[idx] * ps[idx, nxt]
        act = act[idx]
    t_rem = T - np.arange(T + 1)
    rewards = mdp.reward[t_rem[None, :], states, actions]
    return PathEnumeration(states, actions, rewards, probs)


def enumerate_trajectories(mdp: FiniteMdp, policy: Policy, s0: int) -> list[tuple[float, float]]:
    """``(return, probability)`` for every support path from ``s0``."""
    paths = enumerate_paths(mdp, policy, s0)
    return list(zip(paths.returns.tolist(), paths.probs.tolist()))


# -- JSON documents ---------------------------------------------------------


def mdp_to_dict(mdp: FiniteMdp) -> dict:
    doc = {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "horizon": mdp.horizon,
        "initial_state": mdp.initial_state,
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
    }
    if mdp.grid_shape is not None:
        doc["grid_shape"] = list(mdp.grid_shape)
    if mdp.name:
        doc["name"] = mdp.name
    return doc


def mdp_from_dict(doc: dict) -> FiniteMdp:
    transition = np.asarray(doc["transition"], dtype=np.float64)
    reward = np.asarray(doc["reward"], dtype=np.float64)
    expected = (doc["num_states"], doc["num_actions"], doc["num_states"])
    if transition.shape != tuple(expected):
        raise ValueError(f"transition shape {transition.shape} != {expected}")
    if reward.shape != (doc["horizon"] + 1, doc["num_states"], doc["num_actions"]):
        raise ValueError(f"reward shape {reward.shape} does not match header")
    grid = doc.get("grid_shape")
    return FiniteMdp(
        transition,
        reward,
        initial_state=doc.get("initial_state", 0),
        grid_shape=tuple(grid) if grid else None,
        name=doc.get("name", ""),
    )


def dumps_mdp(mdp: FiniteMdp) -> str:
    return json.dumps(mdp_to_dict(mdp))


def loads_mdp(text: str) -> FiniteMdp:
    return mdp_from_dict(json.loads(text))


def policy_to_dict(policy: Policy) -> dict:
    if isinstance(policy, AliasedBernoulliPolicy):
        return {"p_remain": policy.p_remain}
    return {"logits": policy.logits.tolist()}


def policy_from_dict(doc: dict) -> Policy:
    if "p_remain" in doc:
        return AliasedBernoulliPolicy(doc["p_remain"])
    if "logits" in doc:
        return TabularPolicy(np.asarray(doc["logits"], dtype=np.float64))
    raise ValueError("policy document needs 'logits' or 'p_remain'")
