"""Deterministic 8x8 tabletop gridworld rendered at 64x64.

Every object is an 8x8-pixel flat sprite whose shape and color depend only on
its class, so two instances of the same class are pixel-identical — revisited
scenes alias on purpose.  The gripper occupies one cell, can hold at most one
object, and renders as a hollow ring on top of the scene.  Held objects and
objects inside a container are not rendered at all.

Dynamics are intentionally spare: four clamped moves, ``PICK`` (topmost
pickable at the gripper cell), ``PLACE`` (into a container or onto a
surface/bare cell) and ``NOOP``.  Invalid picks/places leave the state
unchanged and are flagged in the step annotations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping

import numpy as np

from .goals import Predicate

GRID = 8
CELL = 8
IMG = GRID * CELL

#: suffix resolving ``(In x basket_1_contain_region)`` to basket_1's interior
CONTAIN_SUFFIX = "_contain_region"

SMALL_CLASSES = ("bowl", "bottle", "cheese")
SURFACE_CLASSES = ("plate", "basket")
PICKABLE_CLASSES = SMALL_CLASSES + ("basket",)
ALL_CLASSES = SMALL_CLASSES + SURFACE_CLASSES + ("region",)


class Action(IntEnum):
    MOVE_N = 0
    MOVE_S = 1
    MOVE_E = 2
    MOVE_W = 3
    PICK = 4
    PLACE = 5
    NOOP = 6


_MOVE_DELTA = {
    Action.MOVE_N: (0, -1),
    Action.MOVE_S: (0, 1),
    Action.MOVE_E: (1, 0),
    Action.MOVE_W: (-1, 0),
}


@dataclass(frozen=True)
class ObjectState:
    cls: str
    cell: tuple[int, int]
    contained_in: str | None = None


@dataclass(frozen=True)
class EnvState:
    """Immutable world snapshot; ``objects`` maps id -> :class:`ObjectState`.

    Treat the mapping as read-only: transitions build fresh dicts.
    """

    gripper: tuple[int, int]
    held: str | None
    objects: Mapping[str, ObjectState]
    seed: int = 0
    grid_size: int = GRID


@dataclass(frozen=True)
class StepInfo:
    invalid_action: bool


def _uncontained_at(state: EnvState, cell: tuple[int, int], classes: tuple[str, ...]):
    out = []
    for oid in sorted(state.objects):
        obj = state.objects[oid]
        if (
            obj.cls in classes
            and obj.cell == cell
            and obj.contained_in is None
            and oid != state.held
        ):
            out.append(oid)
    return out


def _moved(objects: Mapping[str, ObjectState], moving: str, cell: tuple[int, int]):
    """Re-home ``moving`` (and anything contained in it) to ``cell``."""
    new = dict(objects)
    new[moving] = ObjectState(new[moving].cls, cell, new[moving].contained_in)
    for oid, obj in new.items():
        if obj.contained_in == moving:
            new[oid] = ObjectState(obj.cls, cell, moving)
    return new


def apply_action(state: EnvState, action: Action) -> tuple[EnvState, StepInfo]:
    """Pure transition; returns the next state and an invalid-action flag."""
    action = Action(action)
    if action == Action.NOOP:
        return state, StepInfo(False)

    if action in _MOVE_DELTA:
        dx, dy = _MOVE_DELTA[action]
        x = min(max(state.gripper[0] + dx, 0), state.grid_size - 1)
        y = min(max(state.gripper[1] + dy, 0), state.grid_size - 1)
        cell = (x, y)
        objects = state.objects
        if state.held is not None:
            objects = _moved(objects, state.held, cell)
        return EnvState(cell, state.held, objects, state.seed, state.grid_size), StepInfo(False)

    if action == Action.PICK:
        if state.held is not None:
            return state, StepInfo(True)
        smalls = _uncontained_at(state, state.gripper, SMALL_CLASSES)
        baskets = _uncontained_at(state, state.gripper, ("basket",))
        target = smalls[0] if smalls else (baskets[0] if baskets else None)
        if target is None:
            return state, StepInfo(True)
        objects = dict(state.objects)
        picked = objects[target]
        objects[target] = ObjectState(picked.cls, state.gripper, None)
        return EnvState(state.gripper, target, objects, state.seed, state.grid_size), StepInfo(False)

    # PLACE
    if state.held is None:
        return state, StepInfo(True)
    held_cls = state.objects[state.held].cls
    smalls = _uncontained_at(state, state.gripper, SMALL_CLASSES)
    baskets = _uncontained_at(state, state.gripper, ("basket",))
    plates = _uncontained_at(state, state.gripper, ("plate",))
    if smalls:
        return state, StepInfo(True)  # cell already occupied
    if baskets:
        if held_cls == "basket":
            return state, StepInfo(True)  # no basket on/in basket
        objects = dict(state.objects)
        objects[state.held] = ObjectState(held_cls, state.gripper, baskets[0])
        return EnvState(state.gripper, None, objects, state.seed, state.grid_size), StepInfo(False)
    if plates and held_cls == "basket":
        return state, StepInfo(True)  # surfaces never share a cell
    objects = _moved(state.objects, state.held, state.gripper)
    return EnvState(state.gripper, None, objects, state.seed, state.grid_size), StepInfo(False)


# ---------------------------------------------------------------------------
# rendering

_BACKGROUND = np.array([0.92, 0.92, 0.90], dtype=np.float32)

_COLORS = {
    "region": np.array([0.80, 0.78, 0.74], dtype=np.float32),
    "plate": np.array([0.70, 0.72, 0.78], dtype=np.float32),
    "basket": np.array([0.55, 0.36, 0.16], dtype=np.float32),
    "bowl": np.array([0.08, 0.08, 0.12], dtype=np.float32),
    "bottle": np.array([0.18, 0.58, 0.30], dtype=np.float32),
    "cheese": np.array([0.95, 0.80, 0.18], dtype=np.float32),
    "gripper": np.array([0.86, 0.10, 0.10], dtype=np.float32),
}


def _sprite(cls: str) -> np.ndarray:
    m = np.zeros((CELL, CELL), dtype=bool)
    if cls in ("plate", "basket", "region"):
        m[:, :] = True
    elif cls == "bowl":
        m[1:7, 1:7] = True
    elif cls == "bottle":
        m[:, 2:6] = True
    elif cls == "cheese":
        m[2:6, 1:7] = True
    elif cls == "gripper":
        m[:, :] = True
        m[1:7, 1:7] = False  # hollow ring
    else:
        raise ValueError(f"no sprite for class {cls!r}")
    return m


_SPRITES = {cls: _sprite(cls) for cls in list(ALL_CLASSES) + ["gripper"]}

_DRAW_ORDER = ("region", "plate", "basket", "bowl", "bottle", "cheese")


def _visible_ids(state: EnvState) -> list[str]:
    """Drawn instances bottom-to-top; held/contained objects are hidden."""
    out = []
    for cls in _DRAW_ORDER:
        for oid in sorted(state.objects):
            obj = state.objects[oid]
            if obj.cls == cls and oid != state.held and obj.contained_in is None:
                out.append(oid)
    return out


def render_with_owner(state: EnvState) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Render the frame plus a per-pixel owner index into the instance list.

    The instance list is every object id followed by ``"gripper"``; pixels
    owned by nobody (-1) are background.
    """
    ids = sorted(state.objects) + ["gripper"]
    index = {oid: i for i, oid in enumerate(ids)}
    frame = np.tile(_BACKGROUND, (IMG, IMG, 1)).astype(np.float32)
    owner = np.full((IMG, IMG), -1, dtype=np.int32)
    for oid in _visible_ids(state):
        obj = state.objects[oid]
        x, y = obj.cell
        sp = _SPRITES[obj.cls]
        block = (slice(y * CELL, (y + 1) * CELL), slice(x * CELL, (x + 1) * CELL))
        frame[block][sp] = _COLORS[obj.cls]
        owner[block][sp] = index[oid]
    gx, gy = state.gripper
    sp = _SPRITES["gripper"]
    block = (slice(gy * CELL, (gy + 1) * CELL), slice(gx * CELL, (gx + 1) * CELL))
    frame[block][sp] = _COLORS["gripper"]
    owner[block][sp] = index["gripper"]
    return frame, owner, ids


def render(state: EnvState) -> np.ndarray:
    """64x64x3 float32 frame in [0, 1]."""
    return render_with_owner(state)[0]


def instance_masks(state: EnvState) -> dict[str, np.ndarray]:
    """Binary masks partitioning the rendered foreground (topmost pixel owns);
    hidden instances get all-false masks."""
    _, owner, ids = render_with_owner(state)
    return {oid: owner == i for i, oid in enumerate(ids)}


@dataclass(frozen=True)
class Annotations:
    instance_ids: tuple[str, ...]
    masks: dict[str, np.ndarray] = field(repr=False)
    gripper: tuple[int, int]
    held: str | None
    invalid_action: bool


def step(state: EnvState, action: Action) -> tuple[EnvState, np.ndarray, Annotations]:
    """Transition plus the rendered next frame and its annotations."""
    nxt, info = apply_action(state, action)
    frame, owner, ids = render_with_owner(nxt)
    masks = {oid: owner == i for i, oid in enumerate(ids)}
    ann = Annotations(tuple(ids), masks, nxt.gripper, nxt.held, info.invalid_action)
    return nxt, frame, ann


# ---------------------------------------------------------------------------
# predicate grounding


def resolve_container(target: str, state: EnvState) -> str:
    if target.endswith(CONTAIN_SUFFIX):
        target = target[: -len(CONTAIN_SUFFIX)]
    if target not in state.objects:
        raise KeyError(f"unknown container {target!r}")
    return target


def evaluate_predicate(pred: Predicate, state: EnvState) -> bool:
    """Ground a goal predicate in a world state.

    ``on``: same cell, subject neither held nor contained.  ``in``: subject's
    container is the target (``*_contain_region`` resolves to its basket).
    ``lifted``: subject is the held object.
    """
    if pred.subject not in state.objects:
        raise KeyError(f"unknown object {pred.subject!r}")
    if pred.name == "lifted":
        return state.held == pred.subject
    subj = state.objects[pred.subject]
    if pred.name == "in":
        return subj.contained_in == resolve_container(pred.target, state)
    if pred.target not in state.objects:
        raise KeyError(f"unknown object {pred.target!r}")
    tgt = state.objects[pred.target]
    return (
        subj.cell == tgt.cell
        and pred.subject != state.held
        and subj.contained_in is None
    )
