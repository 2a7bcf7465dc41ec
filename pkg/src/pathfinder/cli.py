"""Command-line entry point: ``pathfinder run|oracle|sweep|plot-data``.

Exit codes: 0 success, 1 usage error, 2 scenario error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .env import AttackEnv, Verb
from .model import ScenarioError, load_scenario
from .oracle import DEFAULT_DEPTH_LIMIT, DEFAULT_MAX_STATES, SearchBudgetExceeded, shortest_attack_path

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("pathfinder")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def _override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    value: object = raw
    for cast in (int, float):
        try:
            value = cast(raw)
            break
        except ValueError:
            pass
    if raw.lower() in ("true", "false"):
        value = raw.lower() == "true"
    return key.strip().replace("-", "_"), value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pathfinder", description="Shortest hidden attack paths: oracle search and RL training.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="train an agent (or run the oracle) on one scenario, one run per seed")
    r.add_argument("--scenario", default="benchmark", help="scenario file, or benchmark / r3..r6")
    r.add_argument("--agent", choices=harness.AGENTS, default="iddpg")
    r.add_argument("--episodes", type=int, default=500)
    r.add_argument("--episode-limit", type=int, default=10000)
    r.add_argument("--seeds", type=_seeds, default=[0])
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--set", dest="overrides", type=_override, action="append", default=[], metavar="KEY=VALUE",
                   help="override an agent config field, e.g. --set gamma=0.95")
    r.add_argument("--workers", type=int, default=1)

    o = sub.add_parser("oracle", help="breadth-first shortest attack path")
    o.add_argument("--scenario", default="benchmark")
    o.add_argument("--depth-limit", type=int, default=DEFAULT_DEPTH_LIMIT)
    o.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES)
    o.add_argument("--exclude", default="", help="comma-separated verbs to drop from the action table")
    o.add_argument("--json", action="store_true", help="print the path record as JSON")

    s = sub.add_parser("sweep", help="mean successful attack steps across rule-set variants")
    s.add_argument("--base", default="benchmark", help="benchmark sweeps the bundled r3..r6; a file sweeps itself")
    s.add_argument("--scenarios", default=None, help="comma-separated list overriding the default set")
    s.add_argument("--agents", default="iddpg,ddpg,dqn,a2c")
    s.add_argument("--episodes", type=int, default=500)
    s.add_argument("--episode-limit", type=int, default=10000)
    s.add_argument("--seeds", type=_seeds, default=[0])
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--set", dest="overrides", type=_override, action="append", default=[], metavar="KEY=VALUE")

    d = sub.add_parser("plot-data", help="reward CSVs (raw and smoothed) from a metrics directory")
    d.add_argument("--metrics", type=Path, required=True)
    d.add_argument("--out", type=Path, default=None, help="defaults to METRICS/plot")
    d.add_argument("--window", type=int, default=10)
    return p


def _cmd_run(args) -> int:
    spec = harness.RunSpec(args.scenario, args.agent, args.episodes, args.episode_limit, args.seeds, args.out,
                           dict(args.overrides), args.workers)
    table = harness.run(spec)
    if args.agent == "oracle":
        print("unreachable" if table.oracle is None else f"oracle length {table.oracle_length}")
        return EXIT_OK
    print("agent\tseed\tsuccesses\tmin_steps\tmean_steps\tinfeasible")
    for row in table.rows():
        print(f"{row['agent']}\t{row['seed']}\t{row['attack_successfully_number']}\t{row['minimum_steps']}\t"
              f"{row['mean_success_steps']}\t{row['infeasible_executions']}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    _, path = harness.resolve_scenario(args.scenario)
    model = load_scenario(path)
    try:
        exclude = [Verb(v.strip()) for v in args.exclude.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    env = AttackEnv(model, exclude_verbs=exclude)
    result = shortest_attack_path(env, depth_limit=args.depth_limit, max_states=args.max_states)
    if result is None:
        print(json.dumps({"length": None, "steps": []}) if args.json else "unreachable")
    elif args.json:
        print(json.dumps(result.record(), indent=1))
    else:
        print(f"length {result.length}")
        print("\n".join(result.describe()))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    label, _ = harness.resolve_scenario(args.base)
    agents = [a.strip() for a in args.agents.split(",") if a.strip()]
    for a in agents:
        if a not in harness.TRAINERS:
            raise UsageError(f"unknown agent {a!r}")
    if args.scenarios is not None:
        scenarios = [x.strip() for x in args.scenarios.split(",") if x.strip()]
    else:
        scenarios = ["r3", "r4", "r5", "r6"] if label == "r3" else [args.base]
    base = harness.RunSpec(args.base, "oracle", args.episodes, args.episode_limit, args.seeds, None,
                           dict(args.overrides))
    rows = harness.sweep_rules(base, scenarios, agents, out=args.out)
    print("\t".join(["scenario", "oracle", *agents]))
    for row in rows:
        cells = ["-" if row.mean_steps[a] is None else f"{row.mean_steps[a]:.1f}" for a in agents]
        print("\t".join([row.scenario, str(row.oracle_length), *cells]))
    return EXIT_OK


def _cmd_plot_data(args) -> int:
    if not args.metrics.is_dir():
        raise UsageError(f"not a directory: {args.metrics}")
    table = harness.load_metrics(args.metrics)
    written = harness.emit_plot_data(table, args.out or args.metrics / "plot", window=args.window)
    for path in written:
        print(path)
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "oracle": _cmd_oracle, "sweep": _cmd_sweep, "plot-data": _cmd_plot_data}


def main(argv: list[str] | None = None) -> int:
    try:
        mode = harness.log_mode()
    except ValueError as exc:
        print(f"pathfinder: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if mode != "off":
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"pathfinder: scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except ValueError as exc:
        print(f"pathfinder: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SearchBudgetExceeded, OSError, RuntimeError) as exc:
        print(f"pathfinder: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
