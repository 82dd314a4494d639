"""The discrete action space and the pure state transition it induces."""

from __future__ import annotations

from enum import Enum, IntEnum
from typing import NamedTuple

from .config import EnvironmentConfig, Mode
from .nsc import ArchitectureState, LayerType, NscVector


class Action(IntEnum):
    CONV1 = 0
    CONV3 = 1
    CONV5 = 2
    MAXPOOL2 = 3
    MAXPOOL3 = 4
    AVGPOOL2 = 5
    AVGPOOL3 = 6
    TERMINAL = 7
    ADD = 8
    CONCAT = 9
    P1_UP = 10
    P1_DOWN = 11
    P2_UP = 12
    P2_DOWN = 13

    @property
    def label(self) -> str:
        return f"A{int(self)}"

    @property
    def is_shift(self) -> bool:
        return self >= Action.P1_UP


# action -> (layer type, kernel / pool size)
_APPENDS = {
    Action.CONV1: (LayerType.CONV, 1),
    Action.CONV3: (LayerType.CONV, 3),
    Action.CONV5: (LayerType.CONV, 5),
    Action.MAXPOOL2: (LayerType.MAXPOOL, 2),
    Action.MAXPOOL3: (LayerType.MAXPOOL, 3),
    Action.AVGPOOL2: (LayerType.AVGPOOL, 2),
    Action.AVGPOOL3: (LayerType.AVGPOOL, 3),
}

_SHIFTS = {
    Action.P1_UP: (1, 0),
    Action.P1_DOWN: (-1, 0),
    Action.P2_UP: (0, 1),
    Action.P2_DOWN: (0, -1),
}


class Event(str, Enum):
    APPENDED = "appended"
    TERMINAL_REACHED = "terminal"
    SHIFTED = "shifted"
    POINTER_OUT_OF_BOUNDS = "pointer_oob"
    DEPTH_EXCEEDED = "depth_exceeded"


class Pointers(NamedTuple):
    p1: int = 0
    p2: int = 0


def enumerate_actions(mode: Mode) -> list[Action]:
    n = 8 if Mode(mode) == Mode.CHAIN else 14
    return [Action(i) for i in range(n)]


def n_actions(mode: Mode) -> int:
    return 8 if Mode(mode) == Mode.CHAIN else 14


def apply_action(
    state: ArchitectureState, pointers: Pointers, action: int, config: EnvironmentConfig
) -> tuple[ArchitectureState, Pointers, Event]:
    """Apply one action without mutating the inputs.

    Appends use ``p1`` as predecessor (the previous layer in chain mode) and
    then move ``p1`` onto the new layer.  A shift that would take a pointer
    outside ``[0, len(state)]`` leaves everything unchanged and reports
    ``POINTER_OUT_OF_BOUNDS``.
    """
    action = Action(action)
    if action >= n_actions(config.mode):
        raise ValueError(f"{action.label} is not available in {config.mode.value} mode")

    if action.is_shift:
        d1, d2 = _SHIFTS[action]
        moved = Pointers(pointers.p1 + d1, pointers.p2 + d2)
        if not (0 <= moved.p1 <= len(state) and 0 <= moved.p2 <= len(state)):
            return state, pointers, Event.POINTER_OUT_OF_BOUNDS
        return state, moved, Event.SHIFTED

    if len(state) >= config.d:
        return state, pointers, Event.DEPTH_EXCEEDED

    index = len(state) + 1
    if action == Action.TERMINAL:
        return state.append(NscVector(index, LayerType.TERMINAL)), pointers, Event.TERMINAL_REACHED

    pred1 = index - 1 if config.mode == Mode.CHAIN else pointers.p1
    if action in (Action.ADD, Action.CONCAT):
        t = LayerType.ADD if action == Action.ADD else LayerType.CONCAT
        vec = NscVector(index, t, 0, pred1, pointers.p2)
    else:
        t, size = _APPENDS[action]
        vec = NscVector(index, t, size, pred1, 0)
    return state.append(vec), Pointers(index, pointers.p2), Event.APPENDED
