"""Gradient oracle suite: every estimator against an exact or finite-difference reference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import random_mdp
from .exact import expected_return_exact, risk_value_exact
from .gradients import (
    EmaBaseline,
    exact_risk_policy_grad,
    exp_space_grad_enumerated,
    finite_diff_grad,
    pvf_policy_grad,
    pvf_policy_grad_cv,
    reinforce_grad_samples,
    vimco_grad,
    vimco_value_exact,
)
from .mdp import TabularPolicy, sample_batch
from .pvf import pvf_exact_small, run_filter_batch

EXACT_REL_TOL = 1e-6
Z_TOL = 3.0


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    max_z: float
    passed: bool

    def row(self) -> dict:
        return {
            "check": self.name,
            "max_rel_error": self.max_rel_error,
            "max_z": self.max_z,
            "pass": int(self.passed),
        }


def relative_error(got: np.ndarray, ref: np.ndarray) -> float:
    """Largest absolute deviation scaled by the reference's largest entry."""
    scale = max(float(np.max(np.abs(ref))), 1e-12)
    return float(np.max(np.abs(np.asarray(got) - ref)) / scale)


def z_scores(samples: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """Per-coordinate ``|mean - target| / stderr``.

    Returns ``(max_z, max_abs_dev_on_zero_variance_coords)``; coordinates with
    zero sample variance must match the target exactly (within 1e-9).
    """
    flat = samples.reshape(samples.shape[0], -1)
    tgt = np.asarray(target).reshape(-1)
    mean = flat.mean(axis=0)
    se = flat.std(axis=0, ddof=1) / np.sqrt(flat.shape[0])
    varying = se > 1e-14
    dev = np.abs(mean - tgt)
    max_z = float(np.max(dev[varying] / se[varying])) if np.any(varying) else 0.0
    flat_dev = float(np.max(dev[~varying])) if np.any(~varying) else 0.0
    return max_z, flat_dev


def tiny_instance(seed: int = 7, horizon: int = 2):
    """A 2-state, 2-action stochastic MDP and a non-uniform policy."""
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 2, 2, horizon)
    policy = TabularPolicy(0.7 * rng.standard_normal((2, 2, horizon + 1)))
    return mdp, policy


def _sampled(name: str, samples: np.ndarray, target: np.ndarray) -> CheckResult:
    z, flat_dev = z_scores(samples, target)
    rel = relative_error(samples.mean(axis=0), target)
    return CheckResult(name, rel, z, z <= Z_TOL and flat_dev <= 1e-9)


def run_suite(n_samples: int = 100_000, seed: int = 0, K: int = 2, beta: float = 1.0) -> list[CheckResult]:
    mdp, policy = tiny_instance()
    s0 = mdp.initial_state
    init = np.full(K, s0)
    ss = np.random.SeedSequence(seed).spawn(4)
    results = []

    # exact against finite differences
    for b in (-1.0, 0.0, 1.0):
        exact = exact_risk_policy_grad(mdp, policy, s0, b)
        fd = finite_diff_grad(lambda p: risk_value_exact(mdp, p, s0, b), policy)
        rel = relative_error(exact, fd)
        results.append(CheckResult(f"exact_risk_grad_vs_fd[beta={b:g}]", rel, 0.0, rel <= EXACT_REL_TOL))

    lhs = beta * np.exp(beta * risk_value_exact(mdp, policy, s0, beta)) * exact_risk_policy_grad(mdp, policy, s0, beta)
    rhs = exp_space_grad_enumerated(mdp, policy, s0, beta)
    rel = relative_error(lhs, rhs)
    results.append(CheckResult("exp_space_identity", rel, 0.0, rel <= 1e-8))

    # REINFORCE with the moving-average baseline against the expected-return gradient
    fd_er = finite_diff_grad(lambda p: expected_return_exact(mdp, p, s0), policy)
    batch = sample_batch(mdp, policy, s0, n_samples, np.random.default_rng(ss[0]))
    base = EmaBaseline(mdp.num_states, mdp.horizon)
    results.append(_sampled("reinforce_ema_vs_fd", reinforce_grad_samples(batch, policy, base), fd_er))

    # particle value function, with and without control variate, against the exact PVF
    fd_pvf = finite_diff_grad(lambda p: pvf_exact_small(mdp, p, init, beta), policy)
    system = run_filter_batch(mdp, policy, init, beta, n_samples, np.random.default_rng(ss[1]))
    g_pvf = pvf_policy_grad(system, policy)
    g_cv = pvf_policy_grad_cv(system, policy)
    results.append(_sampled(f"pvf_vs_fd[K={K}]", g_pvf, fd_pvf))
    results.append(_sampled(f"pvf_cv_vs_fd[K={K}]", g_cv, fd_pvf))

    # the control variate is mean-zero: paired difference has mean zero
    diff = g_cv - g_pvf
    z, flat_dev = z_scores(diff, np.zeros(diff.shape[1:]))
    results.append(CheckResult("pvf_cv_mean_preserved", 0.0, z, z <= Z_TOL and flat_dev <= 1e-9))
    tr_pvf = float(np.sum(g_pvf.reshape(n_samples, -1).var(axis=0)))
    tr_cv = float(np.sum(g_cv.reshape(n_samples, -1).var(axis=0)))
    results.append(CheckResult("pvf_cv_variance_reduction", tr_cv / tr_pvf, 0.0, tr_cv < tr_pvf))

    # VIMCO against the exact K-tuple objective
    fd_vimco = finite_diff_grad(lambda p: vimco_value_exact(mdp, p, s0, K, beta), policy)
    vb = sample_batch(mdp, policy, s0, n_samples * K, np.random.default_rng(ss[2]))
    results.append(_sampled(f"vimco_vs_fd[K={K}]", vimco_grad(vb, beta, policy, groups=n_samples), fd_vimco))
    return results
