"""Task registry: ten scripted tabletop tasks over the gridworld.

Each task couples a goal file (``task_goals/*.goal``), a natural-language
instruction, a seeded layout sampler and a default temporal dilation factor.
T1-T6 additionally ship a ``lifted`` goal variant that grades each pick
explicitly; the default variant grades placements only.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from . import goals
from .world import GRID, EnvState, ObjectState

CENTER_CELL = (3, 3)
CENTER_ID = "kitchen_table_the_center"

__all__ = ["TaskSpec", "get_task", "task_ids", "TASK_IDS"]


def _free_cells(rng: np.random.Generator, n: int, taken: set[tuple[int, int]] | None = None):
    """Sample n distinct cells uniformly, avoiding ``taken``."""
    taken = set(taken or ())
    cells: list[tuple[int, int]] = []
    while len(cells) < n:
        c = (int(rng.integers(GRID)), int(rng.integers(GRID)))
        if c not in taken:
            taken.add(c)
            cells.append(c)
    return cells


def _gripper(rng: np.random.Generator) -> tuple[int, int]:
    return (int(rng.integers(GRID)), int(rng.integers(GRID)))


def _layout_bowl_on_plate(rng, bottle=False):
    (plate,) = _free_cells(rng, 1)
    if bottle:
        (item,) = _free_cells(rng, 1, {plate})
        objs = {"bottle_1": ObjectState("bottle", item), "plate_1": ObjectState("plate", plate)}
    else:
        objs = {"akita_black_bowl_1": ObjectState("bowl", plate), "plate_1": ObjectState("plate", plate)}
    return objs


def _layout_swap(rng, n_bowls: int):
    cells = _free_cells(rng, n_bowls + 1)
    objs = {}
    for i in range(n_bowls + 1):
        objs[f"plate_{i + 1}"] = ObjectState("plate", cells[i])
    for i in range(n_bowls):
        objs[f"akita_black_bowl_{i + 1}"] = ObjectState("bowl", cells[i])
    return objs


def _layout_baskets(rng):
    while True:
        b1, b2, cheese = _free_cells(rng, 3, {CENTER_CELL})
        d1 = abs(b1[0] - cheese[0]) + abs(b1[1] - cheese[1])
        d2 = abs(b2[0] - cheese[0]) + abs(b2[1] - cheese[1])
        if d1 != d2:  # keep "nearest basket" unambiguous
            break
    return {
        "basket_1": ObjectState("basket", b1),
        "basket_2": ObjectState("basket", b2),
        "cream_cheese_1": ObjectState("cheese", cheese),
        CENTER_ID: ObjectState("region", CENTER_CELL),
    }


_LAYOUTS = {
    "bowl_on_plate": lambda rng: _layout_bowl_on_plate(rng),
    "bottle_near_plate": lambda rng: _layout_bowl_on_plate(rng, bottle=True),
    "swap_2": lambda rng: _layout_swap(rng, 2),
    "swap_3": lambda rng: _layout_swap(rng, 3),
    "baskets": _layout_baskets,
}


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    instruction: str
    memory_dims: tuple[str, ...]
    layout: str
    default_dilation: int
    variants: tuple[str, ...] = ("default",)

    def goal(self, variant: str = "default") -> goals.GoalExpr:
        self._check_variant(variant)
        return _load_goal(self.task_id, variant)

    def goal_text(self, variant: str = "default") -> str:
        self._check_variant(variant)
        return _goal_text(self.task_id, variant)

    def _check_variant(self, variant: str) -> None:
        if variant not in self.variants:
            raise ValueError(
                f"task {self.task_id} has no {variant!r} goal variant"
                f" (available: {', '.join(self.variants)})"
            )

    def sample_layout(self, seed: int) -> EnvState:
        """Seeded initial state: fixed scene composition, randomized poses."""
        rng = np.random.default_rng(seed)
        objects = _LAYOUTS[self.layout](rng)
        return EnvState(_gripper(rng), None, objects, seed=seed)


def _goal_file(task_id: str, variant: str) -> str:
    stem = task_id.lower()
    if variant == "lifted":
        stem += "_lifted"
    elif variant != "default":
        raise ValueError(f"unknown goal variant {variant!r}")
    return f"{stem}.goal"


@lru_cache(maxsize=None)
def _goal_text(task_id: str, variant: str) -> str:
    name = _goal_file(task_id, variant)
    return resources.files("memgrid.task_goals").joinpath(name).read_text()


@lru_cache(maxsize=None)
def _load_goal(task_id: str, variant: str) -> goals.GoalExpr:
    return goals.parse_goal(_goal_text(task_id, variant))


_BOTH = ("default", "lifted")

TASKS: dict[str, TaskSpec] = {
    t.task_id: t
    for t in [
        TaskSpec("T1", "pick up the bowl and place it back on the plate",
                 ("action-recall",), "bowl_on_plate", 16, _BOTH),
        TaskSpec("T2", "lift the bottle and put it down on the plate",
                 ("action-recall",), "bottle_near_plate", 16, _BOTH),
        TaskSpec("T3", "pick up the bowl and place it back on the plate, 3 times",
                 ("action-recall", "state-count"), "bowl_on_plate", 8, _BOTH),
        TaskSpec("T4", "pick up the bottle and put it down on the plate, 3 times",
                 ("action-recall", "state-count"), "bottle_near_plate", 8, _BOTH),
        TaskSpec("T5", "pick up the bowl and place it back on the plate, 5 times",
                 ("action-recall", "state-count"), "bowl_on_plate", 8, _BOTH),
        TaskSpec("T6", "pick up the bowl and place it back on the plate, 7 times",
                 ("action-recall", "state-count"), "bowl_on_plate", 8, _BOTH),
        TaskSpec("T7", "swap the two bowls, using the empty plate",
                 ("action-recall", "relational-order"), "swap_2", 8),
        TaskSpec("T8", "rotate the three bowls one plate over, using the empty plate",
                 ("action-recall", "relational-order"), "swap_3", 4),
        TaskSpec("T9", "put the cheese in the nearest basket, then move that basket to the center",
                 ("action-recall", "occlusion"), "baskets", 8),
        TaskSpec("T10", "put the cheese in the nearest basket, then move the empty basket to the center",
                 ("action-recall", "occlusion"), "baskets", 8),
    ]
}

TASK_IDS = tuple(TASKS)


def task_ids() -> tuple[str, ...]:
    return TASK_IDS


def get_task(task_id: str) -> TaskSpec:
    try:
        return TASKS[task_id.upper()]
    except KeyError:
        raise KeyError(f"unknown task {task_id!r}; expected one of {', '.join(TASKS)}") from None
