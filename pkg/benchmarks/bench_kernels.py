"""Compare the compiled and numpy sampling kernels on Cliffworld.

    python benchmarks/bench_kernels.py [--repeats 5]

Each row times one kernel call at a batch size typical of its use: a
single K-particle filter run per training update, and a 1000-rollout
evaluation batch.
"""

import argparse
import timeit

import numpy as np

from riskpvf import _fallback
from riskpvf.envs import build_cliffworld
from riskpvf.mdp import TabularPolicy

try:
    from riskpvf import _kernels
except ImportError:
    _kernels = None


def cases(mdp, rng):
    policy = TabularPolicy(rng.standard_normal((mdp.num_states, mdp.num_actions, mdp.horizon + 1)))
    pcdf = np.ascontiguousarray(np.cumsum(policy.table_for(mdp), axis=2))
    tcdf, reward, steps = mdp.transition_cdf, mdp.reward, mdp.horizon + 1
    for K in (4, 8):
        u = rng.random((1, steps, K, 3))
        yield f"filter  n=1    K={K}", "filter_batch", (pcdf, tcdf, reward, np.zeros(K, np.int64), 1.0, u)
    u = rng.random((1000, steps, 2))
    yield "rollout n=1000", "rollout_batch", (pcdf, tcdf, reward, np.zeros(1000, np.int64), u)
    u = rng.random((4, steps, 2))
    yield "rollout n=4", "rollout_batch", (pcdf, tcdf, reward, np.zeros(4, np.int64), u)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    mdp = build_cliffworld()
    backends = {"numpy": _fallback}
    if _kernels is not None:
        backends["cython"] = _kernels
    print(f"{'case':<18}" + "".join(f"{name:>14}" for name in backends) + ("     speedup" if len(backends) == 2 else ""))
    for label, fn, call_args in cases(mdp, np.random.default_rng(0)):
        best = {}
        for name, mod in backends.items():
            f = getattr(mod, fn)
            n = max(1, int(0.2 / max(timeit.timeit(lambda: f(*call_args), number=1), 1e-7)))
            best[name] = min(timeit.repeat(lambda: f(*call_args), number=n, repeat=args.repeats)) / n
        line = f"{label:<18}" + "".join(f"{best[n] * 1e6:>12.1f}us" for n in backends)
        if len(best) == 2:
            line += f"{best['numpy'] / best['cython']:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
