"""Performance estimation: a deterministic surrogate and an external-trainer protocol.

The surrogate maps an architecture to a pseudo accuracy in ``[0, 1]``::

    acc = difficulty * (0.5 * (1 - exp(-n_conv / 2))
                        + 0.3 * (1 - exp(-n_pool / 2))
                        + 0.2 * kernel_diversity / 3) + 0.02 * u

where ``u`` in ``[-1, 1)`` comes from a 64-bit FNV-1a hash of the canonical
key and the seed.  The constants are design choices that reward depth and
operator diversity with diminishing returns; they are not measurements.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

from .config import EnvironmentConfig, Mode
from .nsc import (
    ArchitectureState,
    InvalidArchitecture,
    NscVector,
    build_network,
    canonical_key,
)

NOISE_SCALE = 0.02
W_CONV, W_POOL, W_DIVERSITY = 0.5, 0.3, 0.2

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class Source(str, Enum):
    SURROGATE = "surrogate"
    EXTERNAL = "external"
    CACHE = "cache"


@dataclass(frozen=True)
class ArchitectureFeatures:
    n_conv: int = 0
    n_pool: int = 0
    kernel_diversity: int = 0
    n_merge: int = 0
    depth: int = 0
    final_spatial: int = 0


@dataclass(frozen=True)
class EstimatorResult:
    accuracy: float
    source: Source = Source.SURROGATE

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise AccuracyOutOfRange(f"accuracy {self.accuracy} outside [0, 1]")


class MalformedResponse(ValueError):
    pass


class AccuracyOutOfRange(ValueError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def noise_unit(key: str, seed: int) -> float:
    """Deterministic value in [-1, 1) derived from the key and seed."""
    return fnv1a_64(f"{key}#{seed}".encode("utf-8")) / 2.0**63 - 1.0


def surrogate_features(state: ArchitectureState, config: EnvironmentConfig) -> ArchitectureFeatures:
    if not state.layers:
        return ArchitectureFeatures()
    graph = build_network(state, config)
    convs = [n.param for n in graph.nodes if n.op == "pcc"]
    return ArchitectureFeatures(
        n_conv=len(convs),
        n_pool=graph.count("maxpool") + graph.count("avgpool"),
        kernel_diversity=len(set(convs)),
        n_merge=graph.count("add") + graph.count("concat"),
        depth=len(state.layers),
        final_spatial=graph.shape(graph.output)[0],
    )


def noise_free_score(features: ArchitectureFeatures, difficulty: float) -> float:
    return difficulty * (
        W_CONV * (1.0 - math.exp(-features.n_conv / 2.0))
        + W_POOL * (1.0 - math.exp(-features.n_pool / 2.0))
        + W_DIVERSITY * (features.kernel_diversity / 3.0)
    )


def estimate(state: ArchitectureState, config: EnvironmentConfig) -> EstimatorResult:
    """Surrogate accuracy of ``state`` in the environment described by ``config``.

    Raises InvalidArchitecture when shape inference fails.  An architecture
    with no layers scores exactly 0.
    """
    features = surrogate_features(state, config)
    if features.depth == 0:
        return EstimatorResult(0.0)
    u = noise_unit(canonical_key(state, config.env_id), config.seed)
    acc = noise_free_score(features, config.difficulty) + NOISE_SCALE * u
    return EstimatorResult(min(1.0, max(0.0, acc)))


class SurrogateEstimator:
    """Callable wrapper around :func:`estimate` that counts invocations."""

    def __init__(self):
        self.calls = 0

    def __call__(self, state: ArchitectureState, config: EnvironmentConfig) -> EstimatorResult:
        self.calls += 1
        return estimate(state, config)


# --------------------------------------------------------------------------
# external trainer protocol

@dataclass(frozen=True)
class TrainingSpec:
    """Early-stop training recipe an external trainer is asked to follow."""

    dense_units: int = 1024
    dense_activation: str = "relu"
    dropout: float = 0.4
    output_activation: str = "softmax"
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 0.001
    lr_decay_factor: float = 0.2
    lr_decay_every: int = 5
    epochs: int = 12
    batch_size: int = 128
    filters: int = 32

    @classmethod
    def for_mode(cls, mode: Mode) -> "TrainingSpec":
        # multi-branch networks need more memory
        return cls(batch_size=64) if Mode(mode) == Mode.MULTI_BRANCH else cls()


@dataclass(frozen=True)
class EvalRequest:
    nsc: tuple[tuple[int, int, int, int, int], ...]
    input_shape: tuple[int, int, int]
    dataset_id: str
    training: TrainingSpec = field(default_factory=TrainingSpec)


def encode_eval_request(
    state: ArchitectureState,
    dataset_id: str,
    training_spec: TrainingSpec | None = None,
    input_shape: tuple[int, int, int] = (84, 84, 3),
) -> bytes:
    spec = training_spec or TrainingSpec.for_mode(state.mode)
    msg = {
        "dataset": dataset_id,
        "nsc": [list(v.as_tuple()) for v in state.vectors],
        "input_shape": list(input_shape),
        "prediction_module": {
            "dense_units": spec.dense_units,
            "dense_activation": spec.dense_activation,
            "dropout": spec.dropout,
            "output_activation": spec.output_activation,
            "filters": spec.filters,
        },
        "train": {
            "optimizer": {
                "name": spec.optimizer,
                "beta1": spec.beta1,
                "beta2": spec.beta2,
                "epsilon": spec.epsilon,
                "learning_rate": spec.learning_rate,
                "lr_decay_factor": spec.lr_decay_factor,
                "lr_decay_every": spec.lr_decay_every,
            },
            "epochs": spec.epochs,
            "batch_size": spec.batch_size,
        },
    }
    return json.dumps(msg, indent=2, sort_keys=True).encode("utf-8")


def decode_eval_request(data: bytes) -> EvalRequest:
    try:
        msg = json.loads(data.decode("utf-8"))
        pm, tr = msg["prediction_module"], msg["train"]
        opt = tr["optimizer"]
        spec = TrainingSpec(
            dense_units=pm["dense_units"],
            dense_activation=pm["dense_activation"],
            dropout=pm["dropout"],
            output_activation=pm["output_activation"],
            filters=pm["filters"],
            optimizer=opt["name"],
            beta1=opt["beta1"],
            beta2=opt["beta2"],
            epsilon=opt["epsilon"],
            learning_rate=opt["learning_rate"],
            lr_decay_factor=opt["lr_decay_factor"],
            lr_decay_every=opt["lr_decay_every"],
            epochs=tr["epochs"],
            batch_size=tr["batch_size"],
        )
        nsc = tuple(tuple(int(x) for x in row) for row in msg["nsc"])
        return EvalRequest(nsc, tuple(msg["input_shape"]), msg["dataset"], spec)
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise MalformedResponse(f"bad evaluation request: {exc}") from None


def request_state(req: EvalRequest, mode: Mode = Mode.MULTI_BRANCH) -> ArchitectureState:
    return ArchitectureState(tuple(NscVector(*row) for row in req.nsc), mode)


def encode_eval_response(accuracy: float | None = None, error: str | None = None) -> bytes:
    result = {"error": error} if error is not None else {"accuracy": accuracy}
    return json.dumps({"result": result}, sort_keys=True).encode("utf-8")


def decode_eval_response(data: bytes) -> EstimatorResult:
    """Parse a trainer response; errors reported by the trainer become InvalidArchitecture."""
    try:
        result = json.loads(data.decode("utf-8"))["result"]
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise MalformedResponse(f"bad evaluation response: {exc}") from None
    if not isinstance(result, dict):
        raise MalformedResponse("'result' must be an object")
    if result.get("error") is not None:
        raise InvalidArchitecture(str(result["error"]))
    acc = result.get("accuracy")
    if isinstance(acc, bool) or not isinstance(acc, (int, float)):
        raise MalformedResponse(f"accuracy must be a number, got {acc!r}")
    if not 0.0 <= acc <= 1.0:
        raise AccuracyOutOfRange(f"accuracy {acc} outside [0, 1]")
    return EstimatorResult(float(acc), Source.EXTERNAL)
