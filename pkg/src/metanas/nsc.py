"""Network Structure Code (NSC) vectors, state encoding and graph building.

An architecture is an ordered list of NSC vectors ``(index, type, kernel,
pred1, pred2)``.  This module validates those lists, turns them into the
one-hot matrices fed to the agents, and builds the computational graph with
per-node output shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .config import EnvironmentConfig, Mode, NscSpace


class LayerType(IntEnum):
    EMPTY = 0
    CONV = 1
    MAXPOOL = 2
    AVGPOOL = 3
    ADD = 5
    CONCAT = 6
    TERMINAL = 7


POOLING = (LayerType.MAXPOOL, LayerType.AVGPOOL)
MERGES = (LayerType.ADD, LayerType.CONCAT)

# one-hot width of the type field: types 0..7, type 4 never set
N_TYPES = 8


class ValidationError(ValueError):
    """An NSC vector or list violates the space definition."""

    field_name = None


class BadType(ValidationError):
    field_name = "layer_type"


class BadKernel(ValidationError):
    field_name = "kernel_size"


class BadPredecessor(ValidationError):
    field_name = "predecessor"


class BadTerminalPlacement(ValidationError):
    field_name = "layer_type"


class InvalidArchitecture(ValueError):
    """The architecture cannot be built into a network."""


class EmptyArchitecture(InvalidArchitecture):
    pass


class ShapeUnderflow(InvalidArchitecture):
    pass


@dataclass(frozen=True)
class NscVector:
    index: int
    type: int
    kernel: int = 0
    pred1: int = 0
    pred2: int = 0

    @classmethod
    def from_list(cls, values) -> "NscVector":
        if len(values) != 5:
            raise ValueError(f"an NSC vector has 5 fields, got {len(values)}")
        return cls(*(int(v) for v in values))

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (int(self.index), int(self.type), int(self.kernel), int(self.pred1), int(self.pred2))

    @property
    def is_terminal(self) -> bool:
        return self.type == LayerType.TERMINAL


@dataclass(frozen=True)
class ArchitectureState:
    vectors: tuple[NscVector, ...] = ()
    mode: Mode = Mode.MULTI_BRANCH

    @classmethod
    def from_lists(cls, rows, mode: Mode = Mode.MULTI_BRANCH) -> "ArchitectureState":
        """Build a state from ``[index, type, kernel, pred1, pred2]`` rows.

        All-zero rows (the empty vector used as padding) are dropped.
        """
        vecs = tuple(NscVector.from_list(r) for r in rows if any(int(v) for v in r))
        return cls(vecs, Mode(mode))

    def __len__(self) -> int:
        return len(self.vectors)

    def append(self, vec: NscVector) -> "ArchitectureState":
        return replace(self, vectors=self.vectors + (vec,))

    @property
    def layers(self) -> tuple[NscVector, ...]:
        """Vectors that contribute to the network (Terminal excluded)."""
        return tuple(v for v in self.vectors if not v.is_terminal)

    @property
    def terminated(self) -> bool:
        return bool(self.vectors) and self.vectors[-1].is_terminal

    def as_lists(self) -> list[list[int]]:
        return [list(v.as_tuple()) for v in self.vectors]


def validate_nsc(vec: NscVector, position: int, config: EnvironmentConfig) -> None:
    """Check one vector at 1-based ``position``; raise a ValidationError subclass."""
    space: NscSpace = config.space
    if vec.index != position or not 1 <= position <= config.d:
        raise BadPredecessor(f"layer index {vec.index} does not match position {position} (d={config.d})")
    if vec.type not in space.types or vec.type == LayerType.EMPTY or vec.type not in LayerType._value2member_map_:
        raise BadType(f"layer type {vec.type} is not in the NSC space")
    t = LayerType(vec.type)

    if t == LayerType.CONV:
        if vec.kernel not in space.conv_kernels:
            raise BadKernel(f"convolution kernel {vec.kernel} not in {space.conv_kernels}")
    elif t in POOLING:
        if vec.kernel not in space.pool_sizes:
            raise BadKernel(f"pool size {vec.kernel} not in {space.pool_sizes}")
    elif vec.kernel != 0:
        raise BadKernel(f"{t.name} takes no kernel size, got {vec.kernel}")

    if t == LayerType.TERMINAL:
        if vec.pred1 or vec.pred2:
            raise BadPredecessor("Terminal takes no predecessors")
        return
    for p in (vec.pred1, vec.pred2):
        if not 0 <= p < vec.index:
            raise BadPredecessor(f"predecessor {p} out of range for layer {vec.index}")
    if t not in MERGES and vec.pred2 != 0:
        raise BadPredecessor(f"{t.name} takes a single predecessor")
    if config.mode == Mode.CHAIN:
        if t in MERGES:
            raise BadType("merge layers are not available for chain-structured networks")
        if vec.pred1 != vec.index - 1:
            raise BadPredecessor(f"chain layer {vec.index} must follow layer {vec.index - 1}")


def validate_state(state: ArchitectureState, config: EnvironmentConfig) -> None:
    if len(state) > config.d:
        raise BadPredecessor(f"{len(state)} vectors exceed the maximum depth {config.d}")
    last = len(state.vectors)
    for pos, vec in enumerate(state.vectors, start=1):
        if vec.is_terminal and pos != last:
            raise BadTerminalPlacement(f"Terminal at position {pos} is not the last vector")
        validate_nsc(vec, pos, config)


def encoding_width(config: EnvironmentConfig) -> int:
    d, k = config.d, config.k
    return 2 * d + k + 11 if config.mode == Mode.MULTI_BRANCH else d + k + 10


def encode_state(state: ArchitectureState, config: EnvironmentConfig) -> np.ndarray:
    """One-hot encode a state into a ``d x width`` float matrix.

    Row layout: type (8) | kernel (k+1) | pred1 (d+1) | pred2 (d+1, multi-branch
    only).  Unused rows hold the empty vector and sit *above* the layers, so
    the last row is always the newest layer.
    """
    d, k = config.d, config.k
    multi = config.mode == Mode.MULTI_BRANCH
    out = np.zeros((d, encoding_width(config)))
    pad = d - len(state)
    if pad < 0:
        raise BadPredecessor(f"{len(state)} vectors exceed the maximum depth {d}")
    rows = [(0, 0, 0, 0)] * pad + [(v.type, v.kernel, v.pred1, v.pred2) for v in state.vectors]
    off_kernel = N_TYPES
    off_p1 = off_kernel + k + 1
    off_p2 = off_p1 + d + 1
    for r, (t, ks, p1, p2) in enumerate(rows):
        out[r, t] = 1.0
        out[r, off_kernel + ks] = 1.0
        out[r, off_p1 + p1] = 1.0
        if multi:
            out[r, off_p2 + p2] = 1.0
    return out


def canonical_key(state: ArchitectureState, env_id: str) -> str:
    """``env_id;t,ks,p1,p2;...`` -- the layer index is implicit in the order."""
    parts = [env_id] + [f"{v.type},{v.kernel},{v.pred1},{v.pred2}" for v in state.vectors]
    return ";".join(parts)


def parse_key(key: str, mode: Mode | None = None) -> tuple[str, ArchitectureState]:
    """Invert :func:`canonical_key`.  ``mode=None`` picks chain when the list allows it."""
    env_id, *rows = key.split(";")
    vecs = []
    for i, row in enumerate(r for r in rows if r.strip()):
        t, ks, p1, p2 = (int(x) for x in row.split(","))
        vecs.append(NscVector(i + 1, t, ks, p1, p2))
    if mode is None:
        chain = all(v.is_terminal or (v.type not in MERGES and v.pred1 == v.index - 1) for v in vecs)
        mode = Mode.CHAIN if chain else Mode.MULTI_BRANCH
    return env_id, ArchitectureState(tuple(vecs), mode)


# --------------------------------------------------------------------------
# graph building

@dataclass(frozen=True)
class Node:
    id: int
    op: str  # input | pcc | maxpool | avgpool | add | concat
    param: int = 0
    inputs: tuple[int, ...] = ()
    layer: int | None = None  # NSC index; None for the input and auto-merge nodes
    shape: tuple[int, int, int] | None = None

    @property
    def label(self) -> str:
        names = {"input": "Input", "pcc": "Convolution", "maxpool": "MaxPooling",
                 "avgpool": "AvgPooling", "add": "Addition", "concat": "Concatenation"}
        text = names[self.op]
        if self.op == "pcc":
            text += f" k={self.param}"
        elif self.op in ("maxpool", "avgpool"):
            text += f" p={self.param}"
        if self.shape is not None:
            text += f" ({self.shape[0]}x{self.shape[1]}x{self.shape[2]})"
        return text


@dataclass(frozen=True)
class NetworkGraph:
    nodes: tuple[Node, ...]
    output: int
    auto_merge: int | None = None
    _index: dict = field(default=None, init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {n.id: n for n in self.nodes})

    def node(self, node_id: int) -> Node:
        return self._index[node_id]

    def shape(self, node_id: int) -> tuple[int, int, int]:
        return self._index[node_id].shape

    def consumers(self, node_id: int) -> list[int]:
        return [n.id for n in self.nodes if node_id in n.inputs]

    def leaves(self) -> list[int]:
        used = {i for n in self.nodes for i in n.inputs}
        return [n.id for n in self.nodes if n.id not in used]

    def count(self, op: str) -> int:
        return sum(1 for n in self.nodes if n.op == op)

    def to_dot(self) -> str:
        lines = ["digraph network {", "  rankdir=TB;"]
        for n in self.nodes:
            style = ", style=dashed" if n.id == self.auto_merge else ""
            lines.append(f'  n{n.id} [label="{n.label}"{style}];')
        for n in self.nodes:
            for src in n.inputs:
                lines.append(f"  n{src} -> n{n.id};")
        lines.append("}")
        return "\n".join(lines) + "\n"


_OPS = {
    LayerType.CONV: "pcc",
    LayerType.MAXPOOL: "maxpool",
    LayerType.AVGPOOL: "avgpool",
    LayerType.ADD: "add",
    LayerType.CONCAT: "concat",
}


def build_graph(state: ArchitectureState, config: EnvironmentConfig | None = None) -> NetworkGraph:
    """Turn an NSC list into a DAG; extra leaves are joined by one Concat node.

    Node ids equal the NSC layer index (0 is the network input).  The
    Terminal vector, if present, is ignored.
    """
    layers = state.layers
    if not layers:
        raise EmptyArchitecture("architecture has no layers")
    nodes = [Node(0, "input")]
    for v in layers:
        t = LayerType(v.type)
        inputs = (v.pred1, v.pred2) if t in MERGES else (v.pred1,)
        nodes.append(Node(v.index, _OPS[t], v.kernel, inputs, v.index))
    graph = NetworkGraph(tuple(nodes), output=nodes[-1].id)
    leaves = graph.leaves()
    if len(leaves) == 1:
        return replace(graph, output=leaves[0])
    merge_id = max(n.id for n in nodes) + 1
    merge = Node(merge_id, "concat", 0, tuple(leaves), None)
    return NetworkGraph(tuple(nodes) + (merge,), output=merge_id, auto_merge=merge_id)


def infer_shapes(
    graph: NetworkGraph, input_shape: tuple[int, int, int] = (84, 84, 3), filters: int = 32
) -> NetworkGraph:
    """Annotate every node with its ``(height, width, channels)`` output.

    Convolutions are unpadded (``in - k + 1``) with ``filters`` channels;
    pooling is ``floor(in / p)``.  Merges zero-pad to the largest spatial
    size; Addition takes the max channel count, Concatenation the sum.
    """
    shapes: dict[int, tuple[int, int, int]] = {}
    out = []
    for n in graph.nodes:
        if n.op == "input":
            shape = tuple(int(v) for v in input_shape)
        else:
            ins = [shapes[i] for i in n.inputs]
            h, w, c = ins[0]
            if n.op == "pcc":
                shape = (h - n.param + 1, w - n.param + 1, filters)
            elif n.op in ("maxpool", "avgpool"):
                if n.param > h or n.param > w:
                    raise ShapeUnderflow(f"pool {n.param} larger than {h}x{w} map at node {n.id}")
                shape = (h // n.param, w // n.param, c)
            else:
                h = max(s[0] for s in ins)
                w = max(s[1] for s in ins)
                if n.op == "add":
                    shape = (h, w, max(s[2] for s in ins))
                else:
                    shape = (h, w, sum(s[2] for s in ins))
        if min(shape) < 1:
            raise ShapeUnderflow(f"node {n.id} ({n.op}) would have shape {shape}")
        shapes[n.id] = shape
        out.append(replace(n, shape=shape))
    return replace(graph, nodes=tuple(out))


def build_network(state: ArchitectureState, config: EnvironmentConfig) -> NetworkGraph:
    """Build and shape-annotate in one call."""
    return infer_shapes(build_graph(state, config), config.input_shape, config.filters)


def is_buildable(state: ArchitectureState, config: EnvironmentConfig) -> bool:
    try:
        build_network(state, config)
    except InvalidArchitecture:
        return False
    return True
