"""Search strategies: the recurrent meta-A2C agent, a DQN baseline and random search.

All agents share one small protocol used by the trial loop:

* ``start_trial()`` -- called at the start of every stage (trial);
* ``act(encoded_state, episode_step) -> (action, entropy)``;
* ``observe(action, reward, done, next_encoded, next_episode_step)``;
* ``end_trial(next_encoded, next_episode_step)`` -- flush pending learning.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .actions import n_actions
from .config import A2cConfig, DqnConfig, EnvironmentConfig, Mode
from .nn import (
    MLP,
    ParameterStore,
    RecurrentActorCritic,
    RecurrentState,
    ShapeMismatch,
    categorical_sample,
    entropy,
    log_softmax,
    softmax,
)
from .nsc import encoding_width


class EmptySegment(ValueError):
    pass


class BufferUnderfull(RuntimeError):
    pass


class IncompatibleCheckpoint(ValueError):
    pass


def policy_input_size(config: EnvironmentConfig) -> int:
    return config.d * encoding_width(config) + n_actions(config.mode) + 2


def policy_input(encoded: np.ndarray, prev_action: int, prev_reward: float, episode_step: int,
                 n_act: int) -> np.ndarray:
    """Concatenate flattened state, one-hot previous action, previous reward and episode step."""
    onehot = np.zeros(n_act)
    onehot[prev_action] = 1.0
    return np.concatenate([encoded.ravel(), onehot, [float(prev_reward), float(episode_step)]])


def discounted_returns(rewards, dones, bootstrap: float, gamma: float) -> np.ndarray:
    """``R_t = r_t + gamma * R_{t+1}``, cut at episode ends, seeded with ``bootstrap``."""
    out = np.zeros(len(rewards))
    running = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        if dones[t]:
            running = 0.0
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def a2c_objective(net: RecurrentActorCritic, state: RecurrentState, inputs, actions, returns,
                  advantages, eta: float, value_loss_weight: float):
    """Forward a segment and return the loss with its gradients w.r.t. logits and values.

    The loss is the negated objective, averaged over the segment::

        -log pi(a_t | s_t) * A_t - eta * H(pi(s_t)) + w * (R_t - V(s_t))^2

    ``advantages`` are constants (no gradient flows through them).
    Returns ``(loss, tape, dlogits, dvalues, diagnostics)``.
    """
    if len(inputs) == 0:
        raise EmptySegment("cannot build an objective from an empty segment")
    n = len(inputs)
    tape, dlogits, dvalues = [], [], []
    loss = pol = ent = val = 0.0
    for x, a, R, A in zip(inputs, actions, returns, advantages):
        logits, value, state, cache = net.step(x, state)
        logp = log_softmax(logits)
        p = np.exp(logp)
        H = float(-np.sum(p * logp))
        err = R - value
        loss += -logp[a] * A - eta * H + value_loss_weight * err * err
        pol += -logp[a] * A
        ent += H
        val += err * err
        onehot = np.zeros_like(p)
        onehot[a] = 1.0
        dl = A * (p - onehot) + eta * p * (logp + H)
        tape.append(cache)
        dlogits.append(dl / n)
        dvalues.append(-2.0 * value_loss_weight * err / n)
    diag = {"loss": loss / n, "policy_loss": pol / n, "entropy": ent / n, "value_loss": val / n}
    return loss / n, tape, dlogits, dvalues, diag


class MetaA2CAgent:
    """Recurrent actor-critic whose input carries the previous action, reward and episode step.

    The LSTM state is zeroed by :meth:`start_trial` only, so the policy sees
    history across episode boundaries within a trial.
    """

    kind = "meta_a2c"

    def __init__(self, env_config: EnvironmentConfig, config: A2cConfig = A2cConfig(), seed: int = 0,
                 store: ParameterStore | None = None):
        self.env_config = env_config
        self.config = config
        self.n_actions = n_actions(env_config.mode)
        self.n_in = policy_input_size(env_config)
        self.j = config.horizon(env_config.mode)
        self.rng = np.random.default_rng(seed)
        self.net = RecurrentActorCritic(self.n_in, self.n_actions, config.lstm_units, self.rng, store)
        self.learning = True
        self.start_trial()

    @property
    def store(self) -> ParameterStore:
        return self.net.store

    def start_trial(self) -> None:
        self.rstate = self.net.initial_state()
        self.seg_start = self.rstate.copy()
        self.prev_action = int(self.rng.integers(self.n_actions))
        self.prev_reward = 0.0
        self.segment: list[tuple] = []
        self._pending = None
        self.last_logits = None

    def make_input(self, encoded: np.ndarray, episode_step: int) -> np.ndarray:
        return policy_input(encoded, self.prev_action, self.prev_reward, episode_step, self.n_actions)

    def act(self, encoded: np.ndarray, episode_step: int) -> tuple[int, float]:
        x = self.make_input(encoded, episode_step)
        logits, value, nxt, _ = self.net.step(x, self.rstate)
        p = softmax(logits)
        a = categorical_sample(p, self.rng)
        self._pending = (x, a, value)
        self.rstate = nxt
        self.last_logits = logits
        return a, entropy(p)

    def observe(self, action: int, reward: float, done: bool, next_encoded: np.ndarray,
                next_episode_step: int) -> dict | None:
        x, a, value = self._pending
        if a != action:
            raise ValueError("observe() must follow act() with the same action")
        self._pending = None
        self.prev_action, self.prev_reward = int(action), float(reward)
        if not self.learning:
            return None
        self.segment.append((x, a, float(reward), bool(done), value))
        if len(self.segment) >= self.j:
            return self.update(next_encoded, next_episode_step)
        return None

    def end_trial(self, next_encoded: np.ndarray, next_episode_step: int) -> dict | None:
        if self.learning and self.segment:
            return self.update(next_encoded, next_episode_step)
        return None

    def update(self, next_encoded: np.ndarray, next_episode_step: int) -> dict:
        """One A2C step on the collected segment, bootstrapping from the next input."""
        if not self.segment:
            raise EmptySegment("no transitions collected")
        cfg = self.config
        xs, acts, rews, dones, values = zip(*self.segment)
        bootstrap = 0.0
        if not dones[-1]:
            x_next = self.make_input(next_encoded, next_episode_step)
            _, bootstrap, _, _ = self.net.step(x_next, self.rstate)
        returns = discounted_returns(rews, dones, bootstrap, cfg.gamma)
        advantages = returns - np.asarray(values)
        _, tape, dlogits, dvalues, diag = a2c_objective(
            self.net, self.seg_start, xs, acts, returns, advantages, cfg.eta, cfg.value_loss_weight
        )
        self.store.zero_grad()
        self.net.backward(tape, dlogits, dvalues)
        diag["grad_norm"] = self.store.clip_grad_norm(cfg.grad_clip)
        self.store.adam_update(cfg.alpha)
        # the recurrent state is carried forward as data, not re-derived
        self.seg_start = self.rstate.copy()
        self.segment = []
        return diag

    # ------------------------------------------------------------ checkpoints

    def save(self, path: str | Path, extra: dict | None = None) -> Path:
        """Write ``<path>.npz`` (parameters) and ``<path>.json`` (manifest)."""
        path = Path(path)
        npz = path.with_suffix(".npz")
        self.store.save(npz)
        manifest = {
            "agent": self.kind,
            "mode": self.env_config.mode.value,
            "d": self.env_config.d,
            "k": self.env_config.k,
            "tau": self.env_config.tau,
            "n_actions": self.n_actions,
            "n_in": self.n_in,
            "a2c": asdict(self.config),
            "params_sha256": self.store.digest(),
        }
        if extra:
            manifest.update(extra)
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return npz

    @classmethod
    def load(cls, path: str | Path, env_config: EnvironmentConfig | None = None, seed: int = 0):
        path = Path(path)
        manifest = json.loads(path.with_suffix(".json").read_text())
        if manifest.get("agent") != cls.kind:
            raise IncompatibleCheckpoint(f"checkpoint holds a {manifest.get('agent')!r} agent")
        if env_config is None:
            env_config = EnvironmentConfig(d=manifest["d"], k=manifest["k"], tau=manifest["tau"],
                                           mode=Mode(manifest["mode"]))
        if env_config.mode.value != manifest["mode"] or n_actions(env_config.mode) != manifest["n_actions"]:
            raise IncompatibleCheckpoint(
                f"checkpoint has {manifest['n_actions']} actions in {manifest['mode']} mode, "
                f"environment has {n_actions(env_config.mode)} in {env_config.mode.value} mode"
            )
        if policy_input_size(env_config) != manifest["n_in"]:
            raise IncompatibleCheckpoint("checkpoint input size does not match the environment encoding")
        store = ParameterStore.load(path.with_suffix(".npz"))
        config = A2cConfig(**manifest["a2c"])
        try:
            return cls(env_config, config, seed=seed, store=store), manifest
        except ShapeMismatch as exc:
            raise IncompatibleCheckpoint(str(exc)) from None


class ReplayBuffer:
    """FIFO experience replay with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, state, action, reward, next_state, done) -> None:
        self._items.append((state, int(action), float(reward), next_state, bool(done)))

    def sample(self, batch_size: int, rng: np.random.Generator):
        if len(self._items) < batch_size:
            raise BufferUnderfull(f"{len(self._items)} transitions stored, {batch_size} needed")
        idx = rng.integers(len(self._items), size=batch_size)
        batch = [self._items[i] for i in idx]
        s, a, r, s2, d = zip(*batch)
        return np.stack(s), np.array(a), np.array(r), np.stack(s2), np.array(d, dtype=np.float64)


def linear_epsilon(t: int, t_max: int, start: float = 1.0, end: float = 0.1) -> float:
    frac = min(max(t, 0), t_max) / t_max
    return start * (1.0 - frac) + end * frac


def dqn_targets(rewards, next_q_max, dones, gamma: float) -> np.ndarray:
    return np.asarray(rewards) + gamma * np.asarray(next_q_max) * (1.0 - np.asarray(dones))


class DqnAgent:
    """epsilon-greedy DQN over the encoded state, with replay and a target network.

    A fresh agent is built for every environment; the exploration schedule
    runs linearly over that environment's ``t_max`` steps.
    """

    kind = "dqn"

    def __init__(self, env_config: EnvironmentConfig, config: DqnConfig = DqnConfig(), t_max: int = 1000,
                 seed: int = 0):
        self.env_config = env_config
        self.config = config
        self.t_max = t_max
        self.n_actions = n_actions(env_config.mode)
        self.n_in = env_config.d * encoding_width(env_config)
        self.rng = np.random.default_rng(seed)
        self.q = MLP(self.n_in, self.n_actions, config.hidden_units, self.rng)
        self.target = MLP.from_store(self.q.store.copy())
        capacity = config.buffer_size if config.buffer_size is not None else t_max // 2
        if capacity < config.batch_size:
            raise ValueError(f"replay capacity {capacity} is smaller than the batch size {config.batch_size}")
        self.buffer = ReplayBuffer(capacity)
        self.t = 0
        self.learning = True

    @property
    def store(self) -> ParameterStore:
        return self.q.store

    def start_trial(self) -> None:
        pass

    def epsilon(self, t: int | None = None) -> float:
        t = self.t if t is None else t
        return linear_epsilon(t, self.t_max, self.config.eps_start, self.config.eps_end)

    def q_values(self, encoded: np.ndarray, net: MLP | None = None) -> np.ndarray:
        q, _ = (net or self.q).forward(np.asarray(encoded).reshape(-1, self.n_in))
        return q

    def greedy(self, q: np.ndarray) -> int:
        # argmax returns the lowest index among ties
        return int(np.argmax(q))

    def act(self, encoded: np.ndarray, episode_step: int = 0, epsilon: float | None = None) -> tuple[int, float]:
        eps = self.epsilon() if epsilon is None else epsilon
        self._last_state = np.asarray(encoded).ravel()
        best = self.greedy(self.q_values(encoded)[0])
        if self.rng.random() < eps:
            a = int(self.rng.integers(self.n_actions))
        else:
            a = best
        p = np.full(self.n_actions, eps / self.n_actions)
        p[best] += 1.0 - eps
        return a, entropy(p)

    def observe(self, action, reward, done, next_encoded, next_episode_step=0) -> dict | None:
        self.buffer.push(self._last_state, action, reward, np.asarray(next_encoded).ravel(), done)
        self.t += 1
        diag = None
        if self.learning and len(self.buffer) >= self.config.batch_size:
            diag = self.update()
        if self.t % self.config.target_sync_interval == 0:
            self.target = MLP.from_store(self.q.store.copy())
        return diag

    def end_trial(self, next_encoded=None, next_episode_step=0) -> None:
        return None

    def update(self) -> dict:
        s, a, r, s2, d = self.buffer.sample(self.config.batch_size, self.rng)
        next_q = self.q_values(s2, self.target).max(axis=1)
        y = dqn_targets(r, next_q, d, self.config.gamma)
        q, cache = self.q.forward(s)
        rows = np.arange(len(a))
        err = q[rows, a] - y
        dq = np.zeros_like(q)
        dq[rows, a] = 2.0 * err / len(a)
        self.store.zero_grad()
        self.q.backward(cache, dq)
        self.store.adam_update(self.config.alpha)
        return {"loss": float(np.mean(err * err))}


class RandomAgent:
    """Uniform random search over the mode's action set."""

    kind = "random"

    def __init__(self, env_config: EnvironmentConfig, seed: int = 0):
        self.n_actions = n_actions(env_config.mode)
        self.rng = np.random.default_rng(seed)
        self.store = None
        self.learning = False

    def start_trial(self) -> None:
        pass

    def act(self, encoded=None, episode_step: int = 0) -> tuple[int, float]:
        return int(self.rng.integers(self.n_actions)), float(np.log(self.n_actions))

    def observe(self, *args, **kwargs) -> None:
        return None

    def end_trial(self, *args) -> None:
        return None


def random_act(rng: np.random.Generator, mode: Mode) -> int:
    return int(rng.integers(n_actions(mode)))
