"""Experiment orchestration: per-seed runs, rule-count sweeps, plot-ready CSV output."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import AgentConfig, TrainingResult, train_a2c, train_ddpg, train_dqn, train_iddpg
from .model import BENCHMARK_VARIANTS, CyberspaceModel, bundled_path, load_scenario
from .oracle import AttackPath, shortest_attack_path

log = logging.getLogger("pathfinder")

TRAINERS = {"iddpg": train_iddpg, "ddpg": train_ddpg, "dqn": train_dqn, "a2c": train_a2c}
AGENTS = (*TRAINERS, "oracle")
LOG_LEVELS = ("off", "info", "trace")


def log_mode() -> str:
    mode = os.environ.get("PATHFINDER_LOG", "off").strip().lower() or "off"
    if mode not in LOG_LEVELS:
        raise ValueError(f"PATHFINDER_LOG must be one of {', '.join(LOG_LEVELS)}, got {mode!r}")
    return mode


def resolve_scenario(name: str | Path) -> tuple[str, Path]:
    """Map "benchmark" or "r3".."r6" to the bundled files; anything else is a path."""
    text = str(name)
    if text == "benchmark":
        text = "r3"
    if len(text) == 2 and text[0] == "r" and text[1:].isdigit() and int(text[1:]) in BENCHMARK_VARIANTS:
        return text, bundled_path(BENCHMARK_VARIANTS[int(text[1:])])
    path = Path(text)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    return path.stem, path


@dataclass
class RunSpec:
    scenario: str | Path = "benchmark"
    agent: str = "iddpg"
    episodes: int = 500
    episode_limit: int = 10000
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str | Path | None = None
    overrides: dict = field(default_factory=dict)  # extra AgentConfig fields
    workers: int = 1

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ValueError(f"agent must be one of {', '.join(AGENTS)}, got {self.agent!r}")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.episode_limit < 1:
            raise ValueError("episode_limit must be >= 1")
        if self.agent != "oracle" and not self.seeds:
            raise ValueError("training agents need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        unknown = set(self.overrides) - {f.name for f in dataclasses.fields(AgentConfig)}
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(sorted(unknown))}")

    def config(self, seed: int) -> AgentConfig:
        kw = dict(self.overrides)
        kw.update(episodes=self.episodes, episode_limit=self.episode_limit, seed=seed)
        return AgentConfig(**kw)


@dataclass
class MetricsTable:
    scenario: str
    oracle: AttackPath | None = None
    results: list[TrainingResult] = field(default_factory=list)

    @property
    def oracle_length(self) -> int | None:
        return None if self.oracle is None else self.oracle.length

    def rows(self) -> list[dict]:
        return [{
            "agent": r.agent,
            "scenario": self.scenario,
            "seed": r.seed,
            "episodes": len(r.episode_rewards),
            "attack_successfully_number": r.attack_successfully_number,
            "minimum_steps": r.minimum_steps,
            "mean_success_steps": r.mean_success_steps,
            "infeasible_executions": r.infeasible_executions,
        } for r in self.results]

    def pooled_mean_steps(self, agent: str) -> float | None:
        """Sum of every successful attempt's length over the number of successes, pooled across seeds."""
        steps = [t for r in self.results if r.agent == agent for t in r.success_steps]
        return float(np.mean(steps)) if steps else None


def metrics_name(agent: str, seed: int) -> str:
    return f"{agent}_seed{seed}.json"


def _run_seed(model: CyberspaceModel, spec: RunSpec, seed: int, out: Path | None, trace: bool) -> TrainingResult:
    trace_fh = open(out / f"{spec.agent}_seed{seed}.trace.tsv", "w") if (trace and out) else None
    try:
        result = TRAINERS[spec.agent](model, spec.config(seed), trace=trace_fh, checkpoint_dir=out)
    finally:
        if trace_fh is not None:
            trace_fh.close()
    if result.checkpoint is not None:
        # store the name only, so metrics files do not depend on the output location
        result.checkpoint = Path(result.checkpoint).name
    if out is not None:
        (out / metrics_name(spec.agent, seed)).write_text(result.dumps() + "\n")
    return result


def _worker(args) -> TrainingResult:
    path, spec, seed, out, trace = args
    return _run_seed(load_scenario(path), spec, seed, out, trace)


def run(spec: RunSpec) -> MetricsTable:
    """Run the oracle or train one agent per seed; writes metrics files when ``spec.out`` is set."""
    label, path = resolve_scenario(spec.scenario)
    model = load_scenario(path)
    mode = log_mode()
    out = None if spec.out is None else Path(spec.out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    table = MetricsTable(label, oracle=shortest_attack_path(model))
    if spec.agent == "oracle":
        if out is not None:
            record = table.oracle.record() if table.oracle else {"length": None, "steps": []}
            (out / "oracle.json").write_text(json.dumps(record, indent=1) + "\n")
        return table
    trace = mode == "trace"
    jobs = [(path, spec, seed, out, trace) for seed in spec.seeds]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            table.results = list(pool.map(_worker, jobs))
    else:
        table.results = [_run_seed(model, spec, seed, out, trace) for _, _, seed, _, _ in jobs]
    if mode != "off":
        for row in table.rows():
            log.info("%s %s seed=%d successes=%d min_steps=%s", row["agent"], label, row["seed"],
                     row["attack_successfully_number"], row["minimum_steps"])
    return table


def load_metrics(directory: str | Path) -> MetricsTable:
    """Read every per-seed metrics file in ``directory`` (sorted by agent, then seed)."""
    directory = Path(directory)
    results = [TrainingResult.load(p) for p in directory.glob("*_seed*.json")]
    results.sort(key=lambda r: (r.agent, r.seed))
    return MetricsTable(directory.name, results=results)


# ---------------------------------------------------------------------------
# rule-count sweep

@dataclass
class SweepRow:
    scenario: str
    oracle_length: int | None
    mean_steps: dict[str, float | None]


def sweep_rules(base: RunSpec, scenarios: list[str] | None = None, agents: list[str] | None = None,
                out: str | Path | None = None) -> list[SweepRow]:
    """Mean successful attack steps per agent and rule-set variant, beside the oracle length."""
    scenarios = ["r3", "r4", "r5", "r6"] if scenarios is None else list(scenarios)
    agents = list(TRAINERS) if agents is None else list(agents)
    rows = []
    for name in scenarios:
        means: dict[str, float | None] = {}
        oracle_length = None
        for agent in agents:
            sub_out = None if out is None else Path(out) / f"{resolve_scenario(name)[0]}" / agent
            spec = dataclasses.replace(base, scenario=name, agent=agent, out=sub_out)
            table = run(spec)
            oracle_length = table.oracle_length
            means[agent] = table.pooled_mean_steps(agent)
        if not agents:
            oracle_length = run(dataclasses.replace(base, scenario=name, agent="oracle", out=None)).oracle_length
        rows.append(SweepRow(resolve_scenario(name)[0], oracle_length, means))
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_sweep_csv(rows, agents, Path(out) / "sweep.csv")
    return rows


def write_sweep_csv(rows: list[SweepRow], agents: list[str], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "oracle", *agents])
        for row in rows:
            w.writerow([row.scenario, row.oracle_length if row.oracle_length is not None else "",
                        *("" if row.mean_steps.get(a) is None else repr(row.mean_steps[a]) for a in agents)])


# ---------------------------------------------------------------------------
# plot data

def smooth(values: list[float] | np.ndarray, window: int = 10) -> np.ndarray:
    """Trailing moving average; the first entries average over what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(values, dtype=np.float64)
    if window == 1:
        return x.copy()
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(len(x))
    lo = np.maximum(idx - window + 1, 0)
    return (c[idx + 1] - c[lo]) / (idx + 1 - lo)


def write_reward_csv(path: Path, rewards: np.ndarray, smoothed: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "reward", "smoothed"])
        for i, (r, s) in enumerate(zip(rewards, smoothed)):
            w.writerow([i, repr(float(r)), repr(float(s))])


def read_reward_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([float(r["reward"]) for r in rows]), np.array([float(r["smoothed"]) for r in rows]))


def emit_plot_data(metrics: MetricsTable, out: str | Path, window: int = 10) -> list[Path]:
    """Per-seed reward CSVs plus, per agent, the mean across seeds."""
    if not metrics.results:
        raise ValueError("no metrics to plot")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    by_agent: dict[str, list[TrainingResult]] = {}
    for r in metrics.results:
        by_agent.setdefault(r.agent, []).append(r)
        rewards = np.asarray(r.episode_rewards, dtype=np.float64)
        path = out / f"{r.agent}_seed{r.seed}_reward.csv"
        write_reward_csv(path, rewards, smooth(rewards, window))
        written.append(path)
    for agent, results in by_agent.items():
        lengths = {len(r.episode_rewards) for r in results}
        if len(lengths) != 1:
            raise ValueError(f"{agent}: seeds have different episode counts {sorted(lengths)}")
        mean = np.mean([r.episode_rewards for r in results], axis=0) if lengths != {0} else np.zeros(0)
        path = out / f"{agent}_mean_reward.csv"
        write_reward_csv(path, mean, smooth(mean, window))
        written.append(path)
    return written


__all__ = [
    "AGENTS", "MetricsTable", "RunSpec", "SweepRow", "TRAINERS", "emit_plot_data", "load_metrics", "log_mode",
    "metrics_name", "read_reward_csv", "resolve_scenario", "run", "smooth", "sweep_rules", "write_sweep_csv",
]
