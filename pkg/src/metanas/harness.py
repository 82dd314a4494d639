"""Trial orchestration, trial logs and the metrics derived from them."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actions import n_actions
from .agents import DqnAgent, MetaA2CAgent, RandomAgent
from .config import EnvironmentConfig, Mode, TrialConfig
from .environment import NasEnvironment, RewardCache
from .estimator import SurrogateEstimator
from .nsc import ArchitectureState, build_graph, canonical_key, parse_key

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ log types

@dataclass(frozen=True)
class StepRecord:
    stage: int
    env_id: str
    global_step: int
    episode: int
    c_t: int
    action: int
    reward: float
    done: bool
    reason: str | None
    entropy: float
    cache_hit: bool | None
    state: str  # NSC rows after the action, "t,ks,p1,p2;..."


@dataclass(frozen=True)
class EpisodeSummary:
    stage: int
    env_id: str
    episode: int
    start_step: int
    length: int
    accumulated_reward: float
    best_reward: float
    best_so_far: float
    final_state: str
    reason: str | None
    complete: bool


@dataclass(frozen=True)
class StageInfo:
    env_id: str
    t_max: int
    start_step: int
    first_prev_action: int | None = None


@dataclass
class TrialLog:
    meta: dict = field(default_factory=dict)
    stages: list[StageInfo] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    episodes: list[EpisodeSummary] = field(default_factory=list)
    partial: bool = False

    @property
    def mode(self) -> Mode:
        return Mode(self.meta.get("mode", Mode.CHAIN.value))

    def stage_episodes(self, stage: int) -> list[EpisodeSummary]:
        return [e for e in self.episodes if e.stage == stage]

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "meta", **self.meta}, sort_keys=True)]
        lines += [json.dumps({"type": "stage", **dataclasses.asdict(s)}, sort_keys=True) for s in self.stages]
        lines += [_step_line(s) for s in self.steps]
        lines += [json.dumps({"type": "episode", **dataclasses.asdict(e)}, sort_keys=True) for e in self.episodes]
        lines.append(json.dumps({"type": "end"}))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "TrialLog":
        out = cls(partial=True)
        stored_episodes = []
        for raw in text.splitlines():
            if not raw.strip():
                continue
            rec = json.loads(raw)
            kind = rec.pop("type")
            if kind == "meta":
                out.meta = rec
            elif kind == "stage":
                out.stages.append(StageInfo(**rec))
            elif kind == "step":
                out.steps.append(StepRecord(**rec))
            elif kind == "episode":
                stored_episodes.append(EpisodeSummary(**rec))
            elif kind == "end":
                out.partial = False
        derived = summarize_episodes(out.steps)
        if stored_episodes and stored_episodes != derived:
            raise ValueError("episode summaries do not match the step records")
        out.episodes = derived
        return out

    @classmethod
    def load(cls, path: str | Path) -> "TrialLog":
        return cls.from_jsonl(Path(path).read_text())


def _step_line(s: StepRecord) -> str:
    return json.dumps({"type": "step", **dataclasses.asdict(s)}, sort_keys=True)


def summarize_episodes(steps: list[StepRecord]) -> list[EpisodeSummary]:
    """Group step records into episodes; the last one of a stage may be incomplete."""
    out: list[EpisodeSummary] = []
    current: list[StepRecord] = []
    best_so_far: dict[int, float] = {}

    def close(recs: list[StepRecord]):
        first, last = recs[0], recs[-1]
        rewards = [r.reward for r in recs]
        best = max(rewards)
        prev = best_so_far.get(first.stage, 0.0)
        best_so_far[first.stage] = max(prev, best)
        out.append(EpisodeSummary(
            stage=first.stage, env_id=first.env_id, episode=first.episode, start_step=first.global_step,
            length=len(recs), accumulated_reward=float(sum(rewards)), best_reward=best,
            best_so_far=best_so_far[first.stage], final_state=last.state, reason=last.reason,
            complete=last.done,
        ))

    for rec in steps:
        if current and (rec.episode != current[-1].episode or rec.stage != current[-1].stage):
            close(current)
            current = []
        current.append(rec)
        if rec.done:
            close(current)
            current = []
    if current:
        close(current)
    return out


def state_rows(state: ArchitectureState) -> str:
    return canonical_key(state, "").lstrip(";")


def parse_rows(text: str, mode: Mode | None = None) -> ArchitectureState:
    return parse_key(";" + text, mode)[1]


# ------------------------------------------------------------------ running

@dataclass
class TrialResult:
    log: TrialLog
    agent: object
    checkpoint: Path | None
    estimator_calls: int
    stage_params: list[str] = field(default_factory=list)  # param digest at each stage start
    caches: dict = field(default_factory=dict)


def _open_cache(env_id: str, cache_dir: Path | None) -> RewardCache:
    return RewardCache(cache_dir / f"{env_id}.tsv" if cache_dir is not None else None)


def _stage_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n)]


def _make_agent(config: TrialConfig, env_cfg: EnvironmentConfig, t_max: int, seed: int):
    if config.agent == "meta_a2c":
        return MetaA2CAgent(env_cfg, config.a2c, seed=seed)
    if config.agent == "dqn":
        return DqnAgent(env_cfg, config.dqn, t_max=t_max, seed=seed)
    return RandomAgent(env_cfg, seed=seed)


def run_stage(agent, env: NasEnvironment, t_max: int, stage: int, start_step: int, log_: TrialLog,
              first_episode: int, sink=None) -> int:
    """Run the agent-environment loop for ``t_max`` steps; return the next episode index.

    The environment is reset after every terminating step.  ``sink`` gets
    each serialized step line as it happens.
    """
    env_id = env.config.env_id
    env.reset()
    episode = first_episode
    obs, c = env.observe(), 0
    for t in range(t_max):
        action, ent = agent.act(obs, c)
        out = env.step(action)
        if out.done:
            env.reset()
        next_obs, next_c = env.observe(), env.episode_step
        agent.observe(action, out.reward, out.done, next_obs, next_c)
        rec = StepRecord(
            stage=stage, env_id=env_id, global_step=start_step + t, episode=episode, c_t=out.episode_step,
            action=int(action), reward=out.reward, done=out.done,
            reason=out.termination_reason.value if out.termination_reason else None,
            entropy=float(ent), cache_hit=out.cache_hit, state=state_rows(out.state),
        )
        log_.steps.append(rec)
        if sink is not None:
            sink.write(_step_line(rec) + "\n")
            sink.flush()
        if out.done:
            episode += 1
        obs, c = next_obs, next_c
    agent.end_trial(obs, c)
    # an unfinished trailing episode still gets its own index
    return episode + (1 if log_.steps and not log_.steps[-1].done else 0)


def run_trial(config: TrialConfig, estimator=None) -> TrialResult:
    """Run every stage of ``config`` in order and collect a TrialLog.

    A meta-A2C agent keeps its parameters across stages when
    ``transfer_policy`` is set and always starts each stage with a zeroed
    recurrent state.  DQN and random search start fresh on every stage.
    """
    out_dir = Path(config.out_dir) if config.out_dir else None
    cache_dir = Path(config.cache_dir) if config.cache_dir else (out_dir / "cache" if out_dir else None)
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    estimator = estimator if estimator is not None else SurrogateEstimator()
    seeds = _stage_seeds(config.seed, len(config.stages))

    log_ = TrialLog(meta=_meta(config))
    sink = open(out_dir / "trial.jsonl", "w") if out_dir else None
    if sink:
        sink.write(json.dumps({"type": "meta", **log_.meta}, sort_keys=True) + "\n")

    agent = None
    caches: dict[str, RewardCache] = {}
    stage_params = []
    step = episode = 0
    try:
        for i, (env_id, t_max) in enumerate(config.stages):
            env_cfg = config.env.for_env(env_id, config.env.difficulty if env_id == config.env.env_id else None)
            if agent is None or not (config.agent == "meta_a2c" and config.transfer_policy):
                agent = _make_agent(config, env_cfg, t_max, seeds[i])
            agent.start_trial()
            stage_params.append(agent.store.digest() if agent.store is not None else "")
            stage = StageInfo(env_id, t_max, step, getattr(agent, "prev_action", None))
            log_.stages.append(stage)
            if sink:
                sink.write(json.dumps({"type": "stage", **dataclasses.asdict(stage)}, sort_keys=True) + "\n")
            if env_id not in caches:
                caches[env_id] = _open_cache(env_id, cache_dir)
            env = NasEnvironment(env_cfg, estimator, caches[env_id])
            log.info("stage %d: %s for %d steps (%s)", i, env_id, t_max, config.agent)
            episode = run_stage(agent, env, t_max, i, step, log_, episode, sink)
            step += t_max
    finally:
        for c in caches.values():
            c.close()
        if sink:
            sink.close()

    log_.episodes = summarize_episodes(log_.steps)
    checkpoint = None
    if out_dir:
        log_.save(out_dir / "trial.jsonl")
        if agent is not None and agent.store is not None:
            checkpoint = save_checkpoint(agent, out_dir / "checkpoint", config, step)
    return TrialResult(log_, agent, checkpoint, getattr(estimator, "calls", -1), stage_params, caches)


def _meta(config: TrialConfig) -> dict:
    env = dataclasses.asdict(config.env)
    env["mode"] = config.env.mode.value
    env.pop("space")
    return {
        "agent": config.agent,
        "mode": config.env.mode.value,
        "seed": config.seed,
        "transfer_policy": config.transfer_policy,
        "stages": [list(s) for s in config.stages],
        "n_actions": n_actions(config.env.mode),
        "env": env,
        "a2c": dataclasses.asdict(config.a2c),
        "dqn": dataclasses.asdict(config.dqn),
    }


def save_checkpoint(agent, path: Path, config: TrialConfig | None, global_step: int) -> Path:
    """Parameters to ``path.npz`` and a manifest to ``path.json``."""
    extra = {"global_step": global_step}
    if config is not None:
        extra.update(seed=config.seed, stages=[list(s) for s in config.stages])
    if agent.kind == "meta_a2c":
        return agent.save(path, extra)
    path = Path(path)
    npz = path.with_suffix(".npz")
    agent.store.save(npz)
    env = agent.env_config
    manifest = {
        "agent": agent.kind, "mode": env.mode.value, "d": env.d, "k": env.k, "tau": env.tau,
        "n_actions": agent.n_actions, "n_in": agent.n_in, "dqn": dataclasses.asdict(agent.config),
        "params_sha256": agent.store.digest(), **extra,
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return npz


@dataclass
class EvaluationResult:
    log: TrialLog
    top: dict[str, list[tuple[str, float, int]]]  # env -> [(state rows, reward, step)]
    digest_before: str
    digest_after: str


def run_frozen_evaluation(checkpoint: str | Path, env_ids, t_max: int, *, seed: int = 0,
                          env_template: EnvironmentConfig | None = None, cache_dir: str | Path | None = None,
                          estimator=None) -> EvaluationResult:
    """Replay a trained meta-A2C policy without updates on each environment.

    The recurrent state is reset per environment; the two best distinct
    architectures per environment are extracted.
    """
    agent, manifest = MetaA2CAgent.load(checkpoint, env_template, seed=seed)
    agent.learning = False
    env_template = agent.env_config
    digest_before = agent.store.digest()
    estimator = estimator if estimator is not None else SurrogateEstimator()
    cache_path = Path(cache_dir) if cache_dir else None

    log_ = TrialLog(meta={"agent": "meta_a2c_frozen", "mode": env_template.mode.value, "seed": seed,
                          "checkpoint": str(checkpoint), "stages": [[e, t_max] for e in env_ids],
                          "n_actions": agent.n_actions})
    step = episode = 0
    for i, env_id in enumerate(env_ids):
        env_cfg = env_template.for_env(env_id)
        agent.start_trial()
        log_.stages.append(StageInfo(env_id, t_max, step, agent.prev_action))
        cache = _open_cache(env_id, cache_path)
        try:
            episode = run_stage(agent, NasEnvironment(env_cfg, estimator, cache), t_max, i, step, log_, episode)
        finally:
            cache.close()
        step += t_max
    log_.episodes = summarize_episodes(log_.steps)
    top = {env_id: top_architectures(log_, i) for i, env_id in enumerate(env_ids)}
    return EvaluationResult(log_, top, digest_before, agent.store.digest())


def top_architectures(log_: TrialLog, stage: int, n: int = 2) -> list[tuple[str, float, int]]:
    """Best ``n`` distinct states of a stage by reward; ties go to the earliest step."""
    best: dict[str, tuple[float, int]] = {}
    for rec in log_.steps:
        if rec.stage != stage:
            continue
        prev = best.get(rec.state)
        if prev is None or rec.reward > prev[0]:
            best[rec.state] = (rec.reward, rec.global_step)
    ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[1][1]))
    return [(s, r, t) for s, (r, t) in ranked[:n]]


# ------------------------------------------------------------------ metrics

@dataclass(frozen=True)
class WindowStat:
    start: int
    count: int
    mean: float
    std: float
    partial: bool


def windowed(values, window: int = 50) -> list[WindowStat]:
    """Mean and population std over consecutive windows; a short tail window is kept and flagged."""
    values = np.asarray(values, dtype=np.float64)
    out = []
    for start in range(0, len(values), window):
        chunk = values[start:start + window]
        out.append(WindowStat(start, len(chunk), float(chunk.mean()), float(chunk.std()), len(chunk) < window))
    return out


EPISODE_METRICS = ("best_reward", "accumulated_reward", "episode_length")


def aggregate_metrics(log_: TrialLog, window: int = 50, entropy_window: int | None = None) -> dict:
    """Per-window statistics of the episode metrics and of the step entropy."""
    eps = log_.episodes
    series = {
        "best_reward": windowed([e.best_reward for e in eps], window),
        "accumulated_reward": windowed([e.accumulated_reward for e in eps], window),
        "episode_length": windowed([e.length for e in eps], window),
        "entropy": windowed([s.entropy for s in log_.steps], entropy_window or window),
    }
    return series


def action_proportions(log_: TrialLog, by_stage: bool = True) -> dict[str, np.ndarray]:
    """Frequency of each action id; every action of the mode gets a row, even if unused."""
    n = int(log_.meta.get("n_actions", n_actions(log_.mode)))
    groups: dict[str, list[int]] = {}
    for rec in log_.steps:
        key = f"{rec.stage}:{rec.env_id}" if by_stage else "all"
        groups.setdefault(key, []).append(rec.action)
    out = {}
    for key, acts in groups.items():
        counts = np.bincount(np.asarray(acts, dtype=np.int64), minlength=n).astype(np.float64)
        out[key] = counts / counts.sum()
    return out


def count_multibranch(log_: TrialLog, window: int = 50) -> dict:
    flags = []
    for e in log_.episodes:
        state = parse_rows(e.final_state, log_.mode)
        if state.layers:
            graph = build_graph(state)
            merges = [n for n in graph.nodes if n.op in ("add", "concat") and n.id != graph.auto_merge]
            flags.append(1 if merges else 0)
        else:
            flags.append(0)
    n_multi = int(sum(flags))
    n_chain = len(flags) - n_multi
    return {
        "flags": flags,
        "windows": windowed(flags, window),
        "multibranch": n_multi,
        "chain": n_chain,
        "ratio": (n_multi / n_chain) if n_chain else float("inf") if n_multi else 0.0,
    }


def write_reports(log_: TrialLog, out_dir: str | Path, window: int = 50) -> list[Path]:
    """Write metrics.csv, entropy.csv, actions.csv and multibranch.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    series = aggregate_metrics(log_, window)
    path = out_dir / "metrics.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "window_start_episode", "count", "mean", "std", "partial"])
        for metric in EPISODE_METRICS:
            for s in series[metric]:
                w.writerow([metric, s.start, s.count, repr(s.mean), repr(s.std), int(s.partial)])
    written.append(path)

    path = out_dir / "entropy.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start_step", "count", "mean", "std", "partial"])
        for s in series["entropy"]:
            w.writerow([s.start, s.count, repr(s.mean), repr(s.std), int(s.partial)])
    written.append(path)

    path = out_dir / "actions.csv"
    props = action_proportions(log_, by_stage=True)
    n = int(log_.meta.get("n_actions", n_actions(log_.mode)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "action", "proportion"])
        for key, p in props.items():
            for a in range(n):
                w.writerow([key, f"A{a}", repr(float(p[a]))])
    written.append(path)

    if log_.mode == Mode.MULTI_BRANCH:
        mb = count_multibranch(log_, window)
        path = out_dir / "multibranch.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window_start_episode", "count", "mean", "std", "partial"])
            for s in mb["windows"]:
                w.writerow([s.start, s.count, repr(s.mean), repr(s.std), int(s.partial)])
            w.writerow([])
            w.writerow(["multibranch_episodes", mb["multibranch"]])
            w.writerow(["chain_episodes", mb["chain"]])
        written.append(path)
    return written
