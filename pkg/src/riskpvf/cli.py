"""Command-line interface: ``riskpvf <command> [options]``.

Every command writes CSV to stdout, or to files under ``--out`` when given.
Exit status is 0 on success, 2 for argument or configuration errors and 3
when an exact computation exceeds its size guard.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import __version__
from .envs import ENVIRONMENTS, build_env, build_two_state
from .exact import risk_value_enumerated, risk_value_exact
from .harness import SweepGrid, TrainConfig, last_state_distribution, sweep, train
from .mdp import (
    AliasedBernoulliPolicy,
    CapacityError,
    TabularPolicy,
    dumps_mdp,
    loads_mdp,
    policy_from_dict,
    policy_to_dict,
)
from .pvf import run_filter_batch

EXIT_USAGE = 2
EXIT_CAPACITY = 3


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_text(fieldnames, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _emit(args, filename: str, text: str) -> None:
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, filename), "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_mdp(args):
    if getattr(args, "mdp", None):
        with open(args.mdp) as fh:
            return loads_mdp(fh.read())
    return build_env(args.env)


def _load_policy(args, mdp):
    if getattr(args, "policy", None):
        with open(args.policy) as fh:
            return policy_from_dict(json.load(fh))
    if getattr(args, "p", None) is not None:
        return AliasedBernoulliPolicy(args.p)
    return TabularPolicy.uniform(mdp)


def _add_problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", default="two-state", choices=sorted(ENVIRONMENTS))
    p.add_argument("--mdp", help="JSON MDP document (overrides --env)")
    p.add_argument("--policy", help="JSON policy document (default: uniform tabular)")
    p.add_argument("--p", type=float, help="aliased remain-probability policy")
    p.add_argument("--state", type=int, help="start state (default: the MDP's initial state)")


def cmd_exact_value(args) -> None:
    mdp = _load_mdp(args)
    policy = _load_policy(args, mdp)
    s0 = mdp.initial_state if args.state is None else args.state
    value = risk_value_enumerated if args.method == "enumeration" else risk_value_exact
    rows = [{"beta": b, "value": value(mdp, policy, s0, b)} for b in args.betas]
    _emit(args, "exact_value.csv", _csv_text(["beta", "value"], rows))


def cmd_pvf_estimate(args) -> None:
    mdp = _load_mdp(args)
    policy = _load_policy(args, mdp)
    s0 = mdp.initial_state if args.state is None else args.state
    rng = np.random.default_rng(args.seed)
    values = run_filter_batch(mdp, policy, np.full(args.K, s0), args.beta, args.runs, rng).values
    rows = [{"run_id": i, "K": args.K, "beta": args.beta, "value": float(v)} for i, v in enumerate(values)]
    stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    summary = _csv_text(["mean", "stderr"], [{"mean": float(values.mean()), "stderr": stderr}])
    runs = _csv_text(["run_id", "K", "beta", "value"], rows)
    if args.out:
        _emit(args, "pvf_runs.csv", runs)
        _emit(args, "pvf_summary.csv", summary)
    else:
        sys.stdout.write(runs + summary)


def cmd_gradcheck(args) -> None:
    from .checks import run_suite

    results = run_suite(n_samples=args.samples, seed=args.seed, K=args.K, beta=args.beta)
    text = _csv_text(["check", "max_rel_error", "max_z", "pass"], [r.row() for r in results])
    _emit(args, "gradcheck.csv", text)
    if not all(r.passed for r in results):
        raise SystemExit(1)


def cmd_env_dump(args) -> None:
    _emit(args, f"{args.name}.json", dumps_mdp(build_env(args.name)) + "\n")


def cmd_figure1(args) -> None:
    mdp = build_two_state()
    rows = []
    for b in args.betas:
        for p in np.linspace(0.0, 1.0, args.grid):
            rows.append({"p": float(p), "beta": b, "risk_value": risk_value_exact(mdp, AliasedBernoulliPolicy(p), 0, b)})
    _emit(args, "figure1.csv", _csv_text(["p", "beta", "risk_value"], rows))


def _grid_csv(grid: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in np.atleast_2d(grid):
        writer.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def cmd_train(args) -> None:
    config = TrainConfig.load(args.config)
    metrics = train(config, args.seed)
    text = _csv_text(["update", "avg_return", "solved", "grad_norm"], metrics.rows())
    summary = json.dumps(metrics.summary(), indent=2) + "\n"
    if args.out:
        _emit(args, "metrics.csv", text)
        _emit(args, "summary.json", summary)
        _emit(args, "policy.json", json.dumps(policy_to_dict(metrics.final_policy)))
        _emit(args, "last_state.csv", _grid_csv(metrics.last_state))
    else:
        sys.stdout.write(text)
        sys.stderr.write(summary)


def _load_sweep(path):
    with open(path) as fh:
        doc = json.load(fh)
    grid_doc = doc.pop("grid", {})
    estimators = doc.pop("estimators", ["pvf"])
    base = TrainConfig.from_dict(doc)
    grid = SweepGrid.from_dict(grid_doc, base)
    return grid, estimators, base


def cmd_sweep(args) -> None:
    grid, estimators, base = _load_sweep(args.config)
    seeds = base.seeds if args.seed_list is None else args.seed_list
    rows, aggregates = sweep(grid, base.env, estimators, seeds, base=base, threads=args.threads)
    runs = _csv_text(list(rows[0]), rows)
    agg = _csv_text(list(aggregates[0]), aggregates)
    if args.out:
        _emit(args, "runs.csv", runs)
        _emit(args, "aggregate.csv", agg)
    else:
        sys.stdout.write(agg)


def cmd_last_state(args) -> None:
    if args.config:
        config = TrainConfig.load(args.config)
        metrics = train(config, args.seed)
        grid = metrics.last_state
    else:
        mdp = _load_mdp(args)
        policy = _load_policy(args, mdp)
        grid = last_state_distribution(mdp, policy, args.rollouts, np.random.default_rng(args.seed))
    _emit(args, "last_state.csv", _grid_csv(grid))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="RNG seed (default 0)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="write outputs to this directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker processes for sweeps")

    parser = argparse.ArgumentParser(prog="riskpvf", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exact-value", parents=[common], help="exact risk-sensitive value per beta")
    _add_problem_args(p)
    p.add_argument("--betas", type=_floats, default=[-1.0, 0.0, 1.0, 2.0])
    p.add_argument("--method", choices=("recursion", "enumeration"), default="recursion",
                   help="backward recursion, or brute-force path enumeration (small MDPs only)")
    p.set_defaults(func=cmd_exact_value)

    p = sub.add_parser("pvf-estimate", parents=[common], help="Monte Carlo particle value function")
    _add_problem_args(p)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--runs", type=int, default=1000)
    p.set_defaults(func=cmd_pvf_estimate)

    p = sub.add_parser("gradcheck", parents=[common], help="gradient oracle suite")
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--beta", type=float, default=1.0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("env", parents=[common], help="environment utilities")
    env_sub = p.add_subparsers(dest="env_command", required=True)
    d = env_sub.add_parser("dump", parents=[common], help="print an environment as a JSON MDP document")
    d.add_argument("--name", required=True, choices=sorted(ENVIRONMENTS))
    d.set_defaults(func=cmd_env_dump)

    p = sub.add_parser("figure1", parents=[common], help="two-state risk value over p and beta")
    p.add_argument("--betas", type=_floats, default=[-1.0, 0.0, 1.0, 2.0])
    p.add_argument("--grid", type=int, default=101)
    p.set_defaults(func=cmd_figure1)

    p = sub.add_parser("train", parents=[common], help="train one run from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", parents=[common], help="grid sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", dest="seed_list", type=lambda t: [int(x) for x in t.split(",")], default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("last-state", parents=[common], help="final-state distribution grid")
    _add_problem_args(p)
    p.add_argument("--config", help="train from this config first")
    p.add_argument("--rollouts", type=int, default=1000)
    p.set_defaults(func=cmd_last_state)
    return parser


_LIST_FLAGS = ("--betas", "--seeds")


def _join_list_values(argv: list[str]) -> list[str]:
    """Allow ``--betas -1,0,1``: argparse would read ``-1,0,1`` as an option."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _LIST_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_join_list_values(argv))
    for name, default in (("seed", 0), ("out", None), ("threads", 1)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        args.func(args)
    except CapacityError as exc:
        print(f"riskpvf: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"riskpvf: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
