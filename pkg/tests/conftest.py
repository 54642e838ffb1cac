import numpy as np
import pytest

from riskpvf.envs import build_cliffworld, build_two_state, random_mdp
from riskpvf.mdp import FiniteMdp, TabularPolicy


def bernoulli_one_step() -> FiniteMdp:
    """One step, two actions paying 1 and 0, a single state."""
    trans = np.ones((1, 2, 1))
    reward = np.array([[[1.0, 0.0]]])
    return FiniteMdp(trans, reward)


def deterministic_chain(horizon: int = 3) -> FiniteMdp:
    """Single action walking 0 -> 1 -> 2 ... with rewards 1, 2, 3, ..."""
    S = horizon + 1
    trans = np.zeros((S, 1, S))
    for s in range(S):
        trans[s, 0, min(s + 1, S - 1)] = 1.0
    reward = np.zeros((horizon + 1, S, 1))
    for t in range(horizon + 1):
        reward[horizon - t, t, 0] = t + 1.0
    return FiniteMdp(trans, reward)


def random_policy(mdp: FiniteMdp, rng, scale: float = 1.0) -> TabularPolicy:
    return TabularPolicy(scale * rng.standard_normal((mdp.num_states, mdp.num_actions, mdp.horizon + 1)))


@pytest.fixture
def two_state():
    return build_two_state()


@pytest.fixture(scope="session")
def cliffworld():
    return build_cliffworld()


@pytest.fixture
def tiny():
    """2-state, 2-action stochastic MDP with T=2 and a fixed non-uniform policy."""
    rng = np.random.default_rng(7)
    mdp = random_mdp(rng, 2, 2, 2)
    return mdp, TabularPolicy(0.7 * rng.standard_normal((2, 2, 3)))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Append ``"[PASS] ..."`` / ``"[FAIL] ..."`` lines shown in the terminal summary."""

    def record(label: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
