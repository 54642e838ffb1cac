"""Training loop, sweeps and evaluation metrics."""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .envs import build_env
from .gradients import (
    EmaBaseline,
    pvf_policy_grad,
    pvf_policy_grad_cv,
    reinforce_grad,
    vimco_grad,
)
from .mdp import AliasedBernoulliPolicy, FiniteMdp, Policy, TabularPolicy, sample_batch
from .pvf import run_filter

ESTIMATORS = ("reinforce", "pvf", "pvf_cv", "vimco")


@dataclass(frozen=True)
class TrainConfig:
    env: str = "cliffworld"
    estimator: str = "pvf"
    beta: float = 1.0
    K: int = 4
    learning_rate: float = 1e-3
    num_updates: int = 20000
    seeds: tuple[int, ...] = tuple(range(8))
    eval_rollouts: int = 1000
    eval_every: int = 100
    policy: str = "tabular"
    init_p: float = 0.5
    baseline_smoothing: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        beta = float(self.beta)
        if not math.isfinite(beta):
            raise ValueError("beta must be finite")
        if self.estimator == "reinforce" and beta != 0.0:
            raise ValueError("reinforce optimises the expected return; set beta to 0")
        if self.estimator != "reinforce" and beta == 0.0:
            raise ValueError(f"{self.estimator} needs beta != 0; use reinforce for beta == 0")
        if int(self.K) < 1:
            raise ValueError("K must be >= 1")
        if self.estimator in ("pvf_cv", "vimco") and int(self.K) < 2:
            raise ValueError(f"{self.estimator} needs K >= 2")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.num_updates < 0 or self.eval_every < 1 or self.eval_rollouts < 1:
            raise ValueError("num_updates >= 0, eval_every >= 1 and eval_rollouts >= 1 required")
        if self.policy not in ("tabular", "aliased"):
            raise ValueError("policy must be 'tabular' or 'aliased'")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "K", int(self.K))

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "seeds" in doc:
            doc["seeds"] = tuple(doc["seeds"])
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["seeds"] = list(self.seeds)
        return doc


@dataclass
class RunMetrics:
    config: TrainConfig
    seed: int
    updates: list[int] = field(default_factory=list)
    avg_returns: list[float] = field(default_factory=list)
    solved: list[bool] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    last_state: np.ndarray | None = None
    final_policy: Policy | None = None
    wall_clock: float = 0.0

    @property
    def final_solved(self) -> bool:
        return bool(self.solved[-1]) if self.solved else False

    @property
    def ever_solved(self) -> bool:
        return any(self.solved)

    @property
    def first_solve_update(self) -> int | None:
        for u, s in zip(self.updates, self.solved):
            if s:
                return u
        return None

    def rows(self) -> list[dict]:
        return [
            {"update": u, "avg_return": r, "solved": int(s), "grad_norm": g}
            for u, r, s, g in zip(self.updates, self.avg_returns, self.solved, self.grad_norms)
        ]

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config.to_dict(),
            "final_avg_return": self.avg_returns[-1] if self.avg_returns else None,
            "solved": self.final_solved,
            "ever_solved": self.ever_solved,
            "first_solve_update": self.first_solve_update,
        }


def last_state_distribution(mdp: FiniteMdp, policy: Policy, n_rollouts: int, rng: np.random.Generator) -> np.ndarray:
    """Empirical distribution of the state at the final step ``t = T``.

    Reshaped to the environment grid when the MDP has one.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    batch = sample_batch(mdp, policy, mdp.initial_state, n_rollouts, rng)
    dist = np.bincount(batch.states[:, -1], minlength=mdp.num_states) / n_rollouts
    if mdp.grid_shape is not None:
        return dist.reshape(mdp.grid_shape)
    return dist


def _initial_policy(config: TrainConfig, mdp: FiniteMdp) -> Policy:
    if config.policy == "aliased":
        return AliasedBernoulliPolicy(config.init_p)
    return TabularPolicy.uniform(mdp)


def _step(policy: Policy, grad: np.ndarray, lr: float) -> Policy:
    if isinstance(policy, AliasedBernoulliPolicy):
        return AliasedBernoulliPolicy(float(np.clip(policy.p_remain + lr * grad[0], 0.0, 1.0)))
    return TabularPolicy(policy.logits + lr * grad)


def train(config: TrainConfig, seed: int, mdp: FiniteMdp | None = None) -> RunMetrics:
    """Plain stochastic gradient ascent on the configured objective.

    The policy is evaluated on fresh rollouts every ``eval_every`` updates
    and after the last one. Two independent streams are split off ``seed``:
    one for the training samples and one for evaluation, so the evaluation
    schedule never perturbs training.
    """
    start = time.perf_counter()
    mdp = mdp if mdp is not None else build_env(config.env)
    train_ss, eval_ss = np.random.SeedSequence(int(seed)).spawn(2)
    rng = np.random.default_rng(train_ss)
    eval_rng = np.random.default_rng(eval_ss)
    policy = _initial_policy(config, mdp)
    s0 = mdp.initial_state
    init = np.full(config.K, s0)
    baseline = EmaBaseline(mdp.num_states, mdp.horizon, config.baseline_smoothing)
    metrics = RunMetrics(config=config, seed=int(seed))
    norms: list[float] = []

    def evaluate(update: int) -> None:
        batch = sample_batch(mdp, policy, s0, config.eval_rollouts, eval_rng)
        avg = float(batch.returns.mean())
        metrics.updates.append(update)
        metrics.avg_returns.append(avg)
        metrics.solved.append(avg > 0.0)
        metrics.grad_norms.append(float(np.mean(norms)) if norms else 0.0)
        norms.clear()

    for update in range(config.num_updates):
        if update % config.eval_every == 0:
            evaluate(update)
        if config.estimator == "reinforce":
            batch = sample_batch(mdp, policy, s0, config.K, rng)
            grad = reinforce_grad(batch, baseline, policy)
        elif config.estimator == "vimco":
            batch = sample_batch(mdp, policy, s0, config.K, rng)
            grad = vimco_grad(batch, config.beta, policy)
        else:
            estimate = run_filter(mdp, policy, init, config.beta, rng)
            if config.estimator == "pvf":
                grad = pvf_policy_grad(estimate, policy)
            else:
                grad = pvf_policy_grad_cv(estimate, policy)
        norms.append(float(np.sqrt(np.sum(grad * grad))))
        if config.learning_rate != 0.0:
            policy = _step(policy, grad, config.learning_rate)
    evaluate(config.num_updates)

    metrics.final_policy = policy
    metrics.last_state = last_state_distribution(mdp, policy, config.eval_rollouts, eval_rng)
    metrics.wall_clock = time.perf_counter() - start
    return metrics


# -- sweeps ---------------------------------------------------------------------


@dataclass(frozen=True)
class SweepGrid:
    betas: tuple[float, ...] = (1.0,)
    Ks: tuple[int, ...] = (4,)
    learning_rates: tuple[float, ...] = (1e-3,)

    @classmethod
    def from_dict(cls, doc: dict, base: TrainConfig | None = None) -> "SweepGrid":
        """Axes missing from ``doc`` default to the single value in ``base``."""
        base = base or TrainConfig()
        grid = cls(
            betas=tuple(float(b) for b in doc.get("betas", (base.beta,))),
            Ks=tuple(int(k) for k in doc.get("Ks", (base.K,))),
            learning_rates=tuple(float(x) for x in doc.get("learning_rates", (base.learning_rate,))),
        )
        if not (grid.betas and grid.Ks and grid.learning_rates):
            raise ValueError("sweep grid must be non-empty on every axis")
        return grid


def sweep_configs(grid: SweepGrid, env: str, estimators: Sequence[str], base: TrainConfig | None = None) -> list[TrainConfig]:
    """Valid configurations in the grid; ``reinforce`` runs only at ``beta == 0``
    and the particle estimators only at ``beta != 0``."""
    base = base or TrainConfig(env=env)
    out = []
    for est, beta, K, lr in itertools.product(estimators, grid.betas, grid.Ks, grid.learning_rates):
        if (est == "reinforce") != (beta == 0.0):
            continue
        if est in ("pvf_cv", "vimco") and K < 2:
            continue
        out.append(dataclasses.replace(base, env=env, estimator=est, beta=beta, K=K, learning_rate=lr))
    if not out:
        raise ValueError("sweep grid produced no valid configurations")
    return out


def _train_job(args):
    config, seed = args
    return train(config, seed)


def sweep(
    grid: SweepGrid,
    env: str,
    estimators: Iterable[str],
    seeds: Sequence[int],
    base: TrainConfig | None = None,
    threads: int = 1,
) -> tuple[list[dict], list[dict]]:
    """Train every (configuration, seed) pair.

    Returns per-run summary rows and one aggregate row per cell with the
    solve probability (mean of final solve flags) and its sample standard
    deviation.
    """
    configs = sweep_configs(grid, env, list(estimators), base)
    jobs = [(c, int(s)) for c in configs for s in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_train_job, jobs))
    else:
        results = [_train_job(j) for j in jobs]
    return summarize_runs(results)


def summarize_runs(results: Sequence[RunMetrics]) -> tuple[list[dict], list[dict]]:
    rows = []
    cells: dict[tuple, list[RunMetrics]] = {}
    for m in results:
        c = m.config
        key = (c.estimator, c.beta, c.K, c.learning_rate)
        cells.setdefault(key, []).append(m)
        rows.append({
            "estimator": c.estimator,
            "beta": c.beta,
            "K": c.K,
            "learning_rate": c.learning_rate,
            "seed": m.seed,
            "final_avg_return": m.avg_returns[-1],
            "solved": int(m.final_solved),
            "ever_solved": int(m.ever_solved),
            "first_solve_update": -1 if m.first_solve_update is None else m.first_solve_update,
        })
    aggregates = []
    for (est, beta, K, lr), runs in cells.items():
        flags = np.array([float(r.final_solved) for r in runs])
        returns = np.array([r.avg_returns[-1] for r in runs])
        aggregates.append({
            "estimator": est,
            "beta": beta,
            "K": K,
            "learning_rate": lr,
            "n_seeds": len(runs),
            "solve_probability": float(flags.mean()),
            "solve_std": float(flags.std(ddof=1)) if len(runs) > 1 else 0.0,
            "mean_final_return": float(returns.mean()),
            "std_final_return": float(returns.std(ddof=1)) if len(runs) > 1 else 0.0,
        })
    return rows, aggregates
