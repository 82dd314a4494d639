"""Command-line entry point: ``metanas train|evaluate|report|inspect``.

Exit codes: 0 on success, 1 for configuration errors, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .agents import IncompatibleCheckpoint
from .config import ConfigError, EnvironmentConfig, Mode, load_config
from .estimator import estimate
from .harness import TrialLog, count_multibranch, run_frozen_evaluation, run_trial, write_reports
from .nsc import InvalidArchitecture, ValidationError, build_graph, infer_shapes, parse_key, validate_state

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _train(args) -> int:
    config = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if changes:
        config = dataclasses.replace(config, **changes)
    if config.out_dir is None:
        raise ConfigError("no output directory: pass --out or set out_dir in [trial]")
    result = run_trial(config)
    last = result.log.stages[-1]
    eps = result.log.stage_episodes(len(result.log.stages) - 1)[-50:]
    best = max((e.best_reward for e in eps), default=0.0)
    print(f"{config.agent} seed={config.seed}: {len(result.log.steps)} steps, "
          f"{len(result.log.episodes)} episodes, {result.estimator_calls} estimator calls")
    print(f"last stage {last.env_id}: best reward over final 50 episodes {best:.4f}")
    print(f"log: {Path(config.out_dir) / 'trial.jsonl'}")
    if result.checkpoint:
        print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def _evaluate(args) -> int:
    envs = [e.strip() for e in args.envs.split(",") if e.strip()]
    if not envs:
        raise ConfigError("--envs needs at least one environment id")
    if args.steps < 1:
        raise ConfigError("--steps must be >= 1")
    if not Path(args.checkpoint).with_suffix(".json").exists():
        raise ConfigError(f"no checkpoint manifest next to {args.checkpoint}")
    result = run_frozen_evaluation(args.checkpoint, envs, args.steps, seed=args.seed)
    for i, env_id in enumerate(envs):
        eps = result.log.stage_episodes(i)
        mean_best = sum(e.best_reward for e in eps) / len(eps)
        print(f"{env_id}: {len(eps)} episodes, mean best reward {mean_best:.4f}")
        for rank, (state, reward, step) in enumerate(result.top[env_id], 1):
            print(f"  #{rank} reward={reward:.4f} step={step} nsc={state}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        result.log.save(args.out)
        print(f"log: {args.out}")
    return EXIT_OK


def _report(args) -> int:
    try:
        log_ = TrialLog.load(args.log)
    except OSError as exc:
        raise ConfigError(f"cannot read log: {exc}") from None
    if args.window < 1:
        raise ConfigError("--window must be >= 1")
    for path in write_reports(log_, args.out, args.window):
        print(path)
    if log_.mode == Mode.MULTI_BRANCH:
        mb = count_multibranch(log_, args.window)
        print(f"multi-branch episodes: {mb['multibranch']}, chain episodes: {mb['chain']}")
    return EXIT_OK


def _inspect(args) -> int:
    try:
        env_id, state = parse_key(args.state)
    except ValueError as exc:
        raise ConfigError(f"bad state key: {exc}") from None
    env_id = env_id or "omniglot"
    config = EnvironmentConfig(env_id=env_id, mode=state.mode, d=max(10, len(state)))
    try:
        validate_state(state, config)
    except ValidationError as exc:
        raise ConfigError(f"invalid NSC: {exc}") from None
    print(f"env: {env_id}  mode: {state.mode.value}  layers: {len(state.layers)}")
    if not state.layers:
        print("empty architecture; surrogate score 0")
        return EXIT_OK
    graph = build_graph(state)
    try:
        graph = infer_shapes(graph, config.input_shape, config.filters)
        shaped = True
    except InvalidArchitecture as exc:
        print(f"not buildable: {exc}")
        shaped = False
    for node in graph.nodes:
        inputs = ",".join(map(str, node.inputs)) or "-"
        auto = "  (auto merge)" if node.id == graph.auto_merge else ""
        print(f"  {node.id:>3} <- {inputs:<6} {node.label}{auto}")
    if shaped:
        print(f"surrogate score: {estimate(state, config).accuracy:.6f}")
    if args.dot:
        print(graph.to_dot())
    return EXIT_RUNTIME if not shaped else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metanas", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a multi-stage trial")
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (log, caches, checkpoint)")
    p.set_defaults(func=_train)

    p = sub.add_parser("evaluate", help="run a trained meta-A2C policy without updates")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--envs", required=True, help="comma-separated environment ids")
    p.add_argument("--steps", type=int, required=True, help="steps per environment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the evaluation log here")
    p.set_defaults(func=_evaluate)

    p = sub.add_parser("report", help="aggregate a trial log into CSV files")
    p.add_argument("--log", required=True)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--out", required=True, help="directory for the CSV files")
    p.set_defaults(func=_report)

    p = sub.add_parser("inspect", help="show the graph, shapes and surrogate score of a state key")
    p.add_argument("--state", required=True, help='e.g. "omniglot;1,3,0,0;2,2,1,0"')
    p.add_argument("--dot", action="store_true", help="also print Graphviz dot")
    p.set_defaults(func=_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; those are configuration errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IncompatibleCheckpoint) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
