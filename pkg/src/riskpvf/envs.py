"""Benchmark environments: the aliased two-state MDP and Cliffworld."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import AliasedBernoulliPolicy, FiniteMdp

REMAIN, LEAVE = 0, 1
NORTH, EAST, SOUTH, WEST = 0, 1, 2, 3
ACTION_NAMES = ("north", "east", "south", "west")
_MOVES = {NORTH: (-1, 0), EAST: (0, 1), SOUTH: (1, 0), WEST: (0, -1)}


@dataclass(frozen=True)
class TwoStateSpec:
    """Rewards for the two-state example; ``remain`` keeps the state, ``leave`` toggles it.

    The defaults make the expected return under remain-probability ``p``
    equal ``1.5 p^2 - 2 p + 1`` from state 1 over two steps.
    """

    remain_in_1: float = 0.25
    leave_1_to_2: float = 1.0
    remain_in_2: float = -2.25
    leave_2_to_1: float = 0.0
    horizon: int = 1


def build_two_state(spec: TwoStateSpec | None = None) -> FiniteMdp:
    """Two states (index 0 is "state 1"), two actions, two reward steps."""
    spec = spec or TwoStateSpec()
    transition = np.zeros((2, 2, 2))
    transition[0, REMAIN, 0] = 1.0
    transition[0, LEAVE, 1] = 1.0
    transition[1, REMAIN, 1] = 1.0
    transition[1, LEAVE, 0] = 1.0
    r = np.array([[spec.remain_in_1, spec.leave_1_to_2], [spec.remain_in_2, spec.leave_2_to_1]])
    reward = np.broadcast_to(r, (spec.horizon + 1, 2, 2))
    return FiniteMdp(transition, reward, initial_state=0, name="two-state")


def two_state_polynomial(p):
    return 1.5 * np.asarray(p) ** 2 - 2.0 * np.asarray(p) + 1.0


def basin_boundary(beta: float, p_grid_resolution: float = 1e-3, spec: TwoStateSpec | None = None) -> float:
    """Largest grid ``p`` where the risk value is non-increasing in ``p``.

    Gradient ascent started at or below this point drifts towards the
    global optimum ``p = 0``. Derivatives are finite differences of the
    exact risk value over the aliased parameter, one-sided at the ends of
    the unit interval.
    """
    from .exact import risk_value_exact
    from .gradients import finite_diff_grad

    if p_grid_resolution < 1e-3 or p_grid_resolution > 1:
        raise ValueError("p_grid_resolution must lie in [1e-3, 1]")
    mdp = build_two_state(spec)
    n = int(round(1.0 / p_grid_resolution))
    grid = np.linspace(0.0, 1.0, n + 1)

    def value(pol):
        return risk_value_exact(mdp, pol, 0, beta)

    eps = min(1e-6, p_grid_resolution / 10)
    best = 0.0
    for p in grid:
        scheme = "forward" if p == 0.0 else "backward" if p == 1.0 else "central"
        d = finite_diff_grad(value, AliasedBernoulliPolicy(p), eps, scheme=scheme)[0]
        # tolerate finite-difference noise at a flat point
        if d <= 1e-9:
            best = float(p)
    return best


@dataclass(frozen=True)
class CliffworldSpec:
    rows: int = 4
    cols: int = 12
    horizon: int = 23
    start: tuple[int, int] = (0, 0)
    goal: tuple[int, int] = (0, 11)
    cliff_reward: float = -100.0
    goal_reward: float = 100.0
    step_reward: float = -1.0

    def cliff_cells(self) -> list[tuple[int, int]]:
        r, c0 = self.start
        return [(r, c) for c in range(c0 + 1, self.goal[1])]

    def index(self, row: int, col: int) -> int:
        return row * self.cols + col

    def cell(self, s: int) -> tuple[int, int]:
        return divmod(int(s), self.cols)


def build_cliffworld(spec: CliffworldSpec | None = None) -> FiniteMdp:
    """Deterministic 4x12 grid; row 0 is the northern edge holding start, cliff and goal.

    Entering a cliff cell pays -100 and entering the goal pays +100; both are
    absorbing with zero reward afterwards. Every other move costs -1,
    including bumping into the edge, which leaves the agent in place.
    """
    spec = spec or CliffworldSpec()
    S, A = spec.rows * spec.cols, 4
    absorbing = {spec.index(*c) for c in spec.cliff_cells()} | {spec.index(*spec.goal)}
    cliff = {spec.index(*c) for c in spec.cliff_cells()}
    goal = spec.index(*spec.goal)

    transition = np.zeros((S, A, S))
    r = np.zeros((S, A))
    for s in range(S):
        row, col = spec.cell(s)
        for a, (dr, dc) in _MOVES.items():
            if s in absorbing:
                transition[s, a, s] = 1.0
                continue
            nr, nc = row + dr, col + dc
            if not (0 <= nr < spec.rows and 0 <= nc < spec.cols):
                nr, nc = row, col
            nxt = spec.index(nr, nc)
            transition[s, a, nxt] = 1.0
            if nxt in cliff:
                r[s, a] = spec.cliff_reward
            elif nxt == goal:
                r[s, a] = spec.goal_reward
            else:
                r[s, a] = spec.step_reward
    reward = np.broadcast_to(r, (spec.horizon + 1, S, A))
    return FiniteMdp(
        transition,
        reward,
        initial_state=spec.index(*spec.start),
        grid_shape=(spec.rows, spec.cols),
        name="cliffworld",
    )


ENVIRONMENTS = {"two-state": build_two_state, "cliffworld": build_cliffworld}


def build_env(name: str) -> FiniteMdp:
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


def random_mdp(rng: np.random.Generator, num_states: int = 2, num_actions: int = 2, horizon: int = 2,
               reward_scale: float = 1.0, sparsity: float = 0.0) -> FiniteMdp:
    """Random stochastic MDP with non-stationary rewards, for tests and checks.

    ``sparsity`` is the chance that a transition entry is zeroed (each row
    keeps at least one entry).
    """
    trans = rng.random((num_states, num_actions, num_states))
    if sparsity > 0:
        mask = rng.random(trans.shape) < sparsity
        keep = rng.integers(num_states, size=(num_states, num_actions))
        mask[np.arange(num_states)[:, None], np.arange(num_actions)[None, :], keep] = False
        trans[mask] = 0.0
    trans /= trans.sum(axis=2, keepdims=True)
    # renormalise once more so rows sum to one within rounding
    trans /= trans.sum(axis=2, keepdims=True)
    reward = reward_scale * rng.uniform(-1.0, 1.0, size=(horizon + 1, num_states, num_actions))
    return FiniteMdp(trans, reward, initial_state=0, name="random")
