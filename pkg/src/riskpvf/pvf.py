"""Particle value functions: the bootstrap particle filter over agent trajectories.

Each of ``K`` particles is a state-action trajectory weighted by
``exp(beta * reward)``; at every step after the first, each particle picks a
parent in proportion to the previous weights and continues from the parent's
state and action. ``(1/beta) * sum_t log Z_t`` is one draw of the PVF.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _backend
from .exact import expected_return_exact
from .mdp import CapacityError, FiniteMdp, Policy

MAX_JOINT_CONFIGS = 10**6


def _check_nonzero_beta(beta: float) -> float:
    beta = float(beta)
    if beta == 0.0 or not math.isfinite(beta):
        raise ValueError(
            "the particle filter needs a finite nonzero beta; "
            "use independent trajectories (REINFORCE) for beta == 0"
        )
    return beta


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """Filter state for one or many runs.

    Arrays carry shape ``[T+1, K]`` (``log_z``: ``[T+1]``) for a single run,
    or a leading ``n_runs`` axis for a batch. ``ancestors[..., 0, :]`` is -1.
    """

    states: np.ndarray
    actions: np.ndarray
    ancestors: np.ndarray
    log_weights: np.ndarray
    log_z: np.ndarray
    beta: float

    @property
    def num_particles(self) -> int:
        return self.states.shape[-1]

    @property
    def horizon(self) -> int:
        return self.states.shape[-2] - 1

    @property
    def values(self) -> np.ndarray:
        """``(1/beta) * sum_t log Z_t`` per run."""
        return self.log_z.sum(axis=-1) / self.beta

    def run(self, r: int) -> "ParticleSystem":
        return ParticleSystem(
            self.states[r], self.actions[r], self.ancestors[r],
            self.log_weights[r], self.log_z[r], self.beta,
        )


@dataclass(frozen=True, eq=False)
class PvfEstimate:
    value: float
    system: ParticleSystem


def _prepare(mdp: FiniteMdp, policy: Policy, init_states) -> tuple[np.ndarray, np.ndarray]:
    init = np.atleast_1d(np.asarray(init_states, dtype=np.int64))
    if init.ndim != 1 or init.size < 1:
        raise ValueError("init_states must be a non-empty 1-d sequence")
    if np.any(init < 0) or np.any(init >= mdp.num_states):
        raise ValueError("init_states out of range")
    pcdf = np.ascontiguousarray(np.cumsum(policy.table_for(mdp), axis=2))
    return init, pcdf


def run_filter_batch(
    mdp: FiniteMdp, policy: Policy, init_states, beta: float, n_runs: int, rng: np.random.Generator
) -> ParticleSystem:
    """``n_runs`` independent filter runs.

    Consumes ``n_runs * (T+1) * K * 3`` uniforms from ``rng`` in one call, so
    a batch equals the same number of consecutive single runs.
    """
    beta = _check_nonzero_beta(beta)
    init, pcdf = _prepare(mdp, policy, init_states)
    K = init.size
    u = rng.random((int(n_runs), mdp.horizon + 1, K, 3))
    out = _backend.filter_batch(pcdf, mdp.transition_cdf, mdp.reward, init, beta, u)
    return ParticleSystem(*out, beta=beta)


def run_filter(mdp: FiniteMdp, policy: Policy, init_states, beta: float, rng: np.random.Generator) -> PvfEstimate:
    """One run of the filter; returns its value and the particle system."""
    system = run_filter_batch(mdp, policy, init_states, beta, 1, rng).run(0)
    return PvfEstimate(float(system.values), system)


def pvf_value_mc(
    mdp: FiniteMdp,
    policy: Policy,
    s: int,
    K: int,
    beta: float,
    n_runs: int,
    rng: np.random.Generator,
    chunk: int = 20000,
) -> tuple[float, float]:
    """Monte Carlo PVF with all particles started at ``s``: ``(mean, stderr)``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    init = np.full(int(K), mdp.check_state(s))
    values = []
    left = int(n_runs)
    while left > 0:
        m = min(left, chunk)
        values.append(run_filter_batch(mdp, policy, init, beta, m, rng).values)
        left -= m
    v = np.concatenate(values)
    stderr = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), stderr


def pvf_exact_small(mdp: FiniteMdp, policy: Policy, init_states, beta: float) -> float:
    """Exact PVF by backward recursion over the joint K-particle state space.

    For each joint state ``s^(1:K)`` and joint action ``a^(1:K)`` the
    recursion adds ``log Z`` for the step plus the expected continuation
    under the resampling kernel, which factorises over particles: each new
    particle state is drawn from the weight-mixture
    ``sum_j w_j p(. | s^(j), a^(j))``.
    """
    beta = _check_nonzero_beta(beta)
    init, _ = _prepare(mdp, policy, init_states)
    K = init.size
    S, A, T = mdp.num_states, mdp.num_actions, mdp.horizon
    if (S * A) ** K > MAX_JOINT_CONFIGS:
        raise CapacityError(
            f"{(S * A) ** K} joint configurations per step exceeds {MAX_JOINT_CONFIGS}"
        )
    table = policy.table_for(mdp)

    # joint configurations ordered (s_1..s_K, a_1..a_K) so they reshape to [S^K, A^K]
    js = np.array(list(itertools.product(range(S), repeat=K)), dtype=np.int64)  # [S^K, K]
    ja = np.array(list(itertools.product(range(A), repeat=K)), dtype=np.int64)  # [A^K, K]
    cs = np.repeat(js, len(ja), axis=0)
    ca = np.tile(ja, (len(js), 1))
    n_cfg = cs.shape[0]
    particle = np.arange(K)

    bv_next = np.zeros((S,) * K)  # beta * V for zero steps left after the last
    for t_rem in range(T + 1):
        joint_pi = np.prod(table[t_rem][cs, ca], axis=1)  # [N]
        lw = beta * mdp.reward[t_rem][cs, ca]  # [N, K]
        log_z = logsumexp(lw, axis=1) - math.log(K)
        if t_rem > 0:
            w = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
            mix = np.einsum("nj,njs->ns", w, mdp.transition[cs, ca])  # [N, S]
            cont = np.broadcast_to(bv_next, (n_cfg,) + (S,) * K)
            for _ in particle:
                # contract the leading particle axis with the mixture
                cont = np.einsum("ns,ns...->n...", mix, cont)
        else:
            cont = np.zeros(n_cfg)
        per_cfg = joint_pi * (log_z + cont)
        bv = per_cfg.reshape(len(js), len(ja)).sum(axis=1)
        bv_next = bv.reshape((S,) * K)
    return float(bv_next[tuple(init)] / beta)


def beta_zero_limit_check(mdp: FiniteMdp, policy: Policy, s: int, K: int, beta: float = 1e-4) -> float:
    """Largest deviation of the exact PVF at ``+-beta`` from the expected return."""
    init = np.full(int(K), mdp.check_state(s))
    target = expected_return_exact(mdp, policy, s)
    return max(abs(pvf_exact_small(mdp, policy, init, b) - target) for b in (beta, -beta))
