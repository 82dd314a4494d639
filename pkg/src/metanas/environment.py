"""The architecture-design MDP: state, pointers, termination, rewards and the reward cache."""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from .actions import Action, Event, Pointers, apply_action, n_actions
from .config import EnvironmentConfig
from .estimator import EstimatorResult, SurrogateEstimator
from .nsc import (
    ArchitectureState,
    InvalidArchitecture,
    build_network,
    canonical_key,
    encode_state,
)


class TerminationReason(str, Enum):
    POINTER_OOB = "pointer_oob"
    TERMINAL = "terminal"
    MAX_DEPTH = "max_depth"
    EPISODE_TOO_LONG = "episode_too_long"
    INVALID_ARCHITECTURE = "invalid_architecture"


@dataclass(frozen=True)
class StepOutcome:
    state: ArchitectureState
    reward: float
    done: bool
    termination_reason: TerminationReason | None
    episode_step: int
    episode_index: int
    cache_hit: bool | None  # None when no accuracy lookup happened
    event: Event


class RewardCache:
    """Map from canonical key to accuracy, mirrored to a tab-separated file.

    Each insert appends ``<key>\\t<accuracy>`` and flushes, so a crashed
    trial leaves a usable cache behind.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._data: dict[str, float] = {}
        self._fh = None
        if self.path is not None and self.path.exists():
            with open(self.path) as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.rstrip("\n")
                    if not line:
                        continue
                    key, sep, value = line.rpartition("\t")
                    if not sep:
                        raise ValueError(f"{self.path}:{lineno}: expected '<key>\\t<accuracy>'")
                    self._data[key] = float(value)

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    def get(self, key: str) -> float | None:
        return self._data.get(key)

    def items(self):
        return self._data.items()

    def insert(self, key: str, accuracy: float) -> None:
        if key in self._data:
            return
        self._data[key] = accuracy
        if self.path is not None:
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(self.path, "a")
            self._fh.write(f"{key}\t{accuracy!r}\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def merge_from(self, other: "RewardCache") -> int:
        """Insert every entry of ``other`` that is missing here; return how many."""
        added = 0
        for key, acc in other.items():
            if key not in self._data:
                self.insert(key, acc)
                added += 1
        return added


Estimator = Callable[[ArchitectureState, EnvironmentConfig], EstimatorResult]


def cached_accuracy(
    cache: RewardCache, state: ArchitectureState, config: EnvironmentConfig, estimator: Estimator
) -> tuple[float, bool]:
    """Return ``(accuracy, cache_hit)``, calling ``estimator`` only on a miss.

    Estimator failures surface as InvalidArchitecture and are not cached.
    """
    key = canonical_key(state, config.env_id)
    hit = cache.get(key)
    if hit is not None:
        return hit, True
    result = estimator(state, config)
    cache.insert(key, result.accuracy)
    return result.accuracy, False


def check_termination(
    event: Event, state: ArchitectureState, episode_steps: int, config: EnvironmentConfig
) -> TerminationReason | None:
    """First matching rule, checked in order: pointer OOB, terminal, depth, length, validity.

    ``episode_steps`` counts the actions taken in the episode including the
    current one; the episode stops once it reaches ``tau``.
    """
    if event == Event.POINTER_OUT_OF_BOUNDS:
        return TerminationReason.POINTER_OOB
    if event == Event.TERMINAL_REACHED:
        return TerminationReason.TERMINAL
    if len(state) >= config.d or event == Event.DEPTH_EXCEEDED:
        return TerminationReason.MAX_DEPTH
    if episode_steps >= config.tau:
        return TerminationReason.EPISODE_TOO_LONG
    if not _valid(state, config):
        return TerminationReason.INVALID_ARCHITECTURE
    return None


def _valid(state: ArchitectureState, config: EnvironmentConfig) -> bool:
    if not state.layers:
        return True
    try:
        build_network(state, config)
    except InvalidArchitecture:
        return False
    return True


class NasEnvironment:
    """Single-owner MDP instance.  ``step`` does not auto-reset."""

    def __init__(
        self,
        config: EnvironmentConfig,
        estimator: Estimator | None = None,
        cache: RewardCache | None = None,
    ):
        self.config = config
        self.estimator = estimator if estimator is not None else SurrogateEstimator()
        self.cache = cache if cache is not None else RewardCache()
        self.n_actions = n_actions(config.mode)
        self.state = ArchitectureState(mode=config.mode)
        self.pointers = Pointers(0, 0)
        self.episode_step = 0
        self.episode_index = -1
        self.reset()

    def reset(self) -> ArchitectureState:
        self.state = ArchitectureState(mode=self.config.mode)
        self.pointers = Pointers(0, 0)
        self.episode_step = 0
        self.episode_index += 1
        return self.state

    def observe(self) -> np.ndarray:
        return encode_state(self.state, self.config)

    def step(self, action: int) -> StepOutcome:
        action = Action(action)
        state, pointers, event = apply_action(self.state, self.pointers, action, self.config)
        self.state, self.pointers = state, pointers
        self.episode_step += 1

        reason = check_termination(event, state, self.episode_step, self.config)
        valid = reason is None or (
            reason != TerminationReason.INVALID_ARCHITECTURE and _valid(state, self.config)
        )

        reward, hit = 0.0, None
        if event != Event.POINTER_OUT_OF_BOUNDS and valid:
            try:
                acc, hit = cached_accuracy(self.cache, state, self.config, self.estimator)
            except InvalidArchitecture:
                acc = 0.0
                if reason is None:
                    reason = TerminationReason.INVALID_ARCHITECTURE
            reward = self.config.sigma * acc if event == Event.SHIFTED else acc

        return StepOutcome(
            state=state,
            reward=float(reward),
            done=reason is not None,
            termination_reason=reason,
            episode_step=self.episode_step,
            episode_index=self.episode_index,
            cache_hit=hit,
            event=event,
        )
