"""Scripted demonstrator for the shipped tasks.

The expert plans greedily for the leading alive branch's next pending
subgoal: navigate (east/west before south/north), pick, navigate, place.
When the pending subgoal's condition *already holds* it must be re-triggered
through a fresh rising edge, so the expert lifts the object and walks an
out-and-back detour twice before placing it back::

    PICK, away, back, away, back, PLACE

The doubled detour is deliberate: it makes "leave the cell" twice as frequent
as "place" on the revisited holding state, so a memoryless per-frame clone of
this data shuttles instead of completing — the demonstrations themselves
carry the memory requirement.

Because the detour revisits pixel-identical states with different actions,
the expert keeps a private action queue between calls; a memoryless function
of (state, progress) could not emit such trajectories.  :func:`expert_action`
offers the queue-free view for one-off queries.
"""

from __future__ import annotations

import numpy as np

from . import goals, world
from .goals import EvalProgress, GoalExpr, Predicate
from .tasks import TaskSpec
from .world import Action, EnvState

__all__ = [
    "ScriptedExpert",
    "ExpertError",
    "expert_action",
    "expert_rollout",
    "leading_branch",
    "Rollout",
]


class ExpertError(RuntimeError):
    """The expert has no plan for the requested situation."""


def _manhattan(a: tuple[int, int], b: tuple[int, int]) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _nav(src: tuple[int, int], dst: tuple[int, int]) -> list[Action]:
    """Column moves, then row moves; deterministic for imitation targets."""
    out: list[Action] = []
    dx, dy = dst[0] - src[0], dst[1] - src[1]
    out += [Action.MOVE_E if dx > 0 else Action.MOVE_W] * abs(dx)
    out += [Action.MOVE_S if dy > 0 else Action.MOVE_N] * abs(dy)
    return out


def _detour(cell: tuple[int, int], grid: int) -> tuple[Action, Action]:
    """First in-bounds away/back move pair from ``cell``."""
    options = (
        (Action.MOVE_E, Action.MOVE_W, cell[0] + 1 < grid),
        (Action.MOVE_W, Action.MOVE_E, cell[0] - 1 >= 0),
        (Action.MOVE_S, Action.MOVE_N, cell[1] + 1 < grid),
        (Action.MOVE_N, Action.MOVE_S, cell[1] - 1 >= 0),
    )
    for away, back, ok in options:
        if ok:
            return away, back
    raise ExpertError("grid too small for a detour")


def _pred_target_cell(pred: Predicate, state: EnvState) -> tuple[int, int]:
    tid = pred.target
    if pred.name == "in":
        tid = world.resolve_container(tid, state)
    return state.objects[tid].cell


def _branch_cost(branches, b: int, state: EnvState, progress: EvalProgress) -> tuple[int, int]:
    sg = branches[b][progress.satisfied[b]]
    pred = sg[0]
    subj = state.objects[pred.subject].cell
    cost = _manhattan(state.gripper, subj)
    if pred.name != "lifted":
        cost += _manhattan(subj, _pred_target_cell(pred, state))
    return cost, b


def leading_branch(branches, state: EnvState, progress: EvalProgress) -> int:
    """Most advanced alive branch; ties go to the cheapest pending subgoal
    (gripper-to-subject-to-target distance), e.g. the *nearest* basket.

    Shared between the expert and dataset annotation so the subgoal stream a
    policy is conditioned on matches the branch the demonstrations pursue.
    """
    alive = [b for b, a in enumerate(progress.alive) if a]
    if not alive:
        raise ExpertError("all goal branches are dead")
    best = max(progress.satisfied[b] for b in alive)
    tied = [b for b in alive if progress.satisfied[b] == best]
    done = [b for b in tied if progress.satisfied[b] >= len(branches[b])]
    if done:
        return done[0]
    return min(tied, key=lambda b: _branch_cost(branches, b, state, progress))


class ScriptedExpert:
    """Greedy planner over a goal's branches; holds an internal action queue."""

    def __init__(self, goal: GoalExpr):
        self.goal = goal
        self.branches = goals.goal_branches(goal)
        self.queue: list[Action] = []

    def reset(self) -> None:
        self.queue.clear()

    def act(self, state: EnvState, progress: EvalProgress) -> Action:
        if progress.completed:
            return Action.NOOP
        if not self.queue:
            self.queue = self._plan(state, progress)
        return self.queue.pop(0)

    # -- planning ----------------------------------------------------------

    def _target_cell(self, pred: Predicate, state: EnvState) -> tuple[int, int]:
        return _pred_target_cell(pred, state)

    def _plan(self, state: EnvState, progress: EvalProgress) -> list[Action]:
        b = leading_branch(self.branches, state, progress)
        sg = self.branches[b][progress.satisfied[b]]
        pending = [p for p in sg if not world.evaluate_predicate(p, state)]
        if pending:
            return self._achieve(pending[0], state)
        return self._retrigger(sg[0], state)

    def _achieve(self, pred: Predicate, state: EnvState) -> list[Action]:
        subj = state.objects[pred.subject]
        if pred.name == "lifted":
            if state.held == pred.subject:
                raise ExpertError(f"{pred.subject} already lifted")
            return _nav(state.gripper, subj.cell) + [Action.PICK]
        target = self._target_cell(pred, state)
        if state.held == pred.subject:
            return _nav(state.gripper, target) + [Action.PLACE]
        if state.held is not None:
            raise ExpertError(f"hands full with {state.held!r}")
        if subj.contained_in is not None:
            raise ExpertError(f"{pred.subject} is inside {subj.contained_in}")
        plan = _nav(state.gripper, subj.cell) + [Action.PICK]
        plan += _nav(subj.cell, target) + [Action.PLACE]
        return plan

    def _retrigger(self, pred: Predicate, state: EnvState) -> list[Action]:
        """Force a fresh rising edge on an already-true subgoal."""
        if pred.name != "on":
            raise ExpertError(f"cannot re-trigger {pred.name!r} subgoals")
        cell = state.objects[pred.subject].cell
        away, back = _detour(cell, state.grid_size)
        plan = _nav(state.gripper, cell) + [Action.PICK]
        plan += [away, back, away, back, Action.PLACE]
        return plan


def expert_action(state: EnvState, goal: GoalExpr, progress: EvalProgress) -> Action:
    """Queue-free single-step query; detour phases need a persistent
    :class:`ScriptedExpert`, so only use this off the replanning boundary."""
    return ScriptedExpert(goal).act(state, progress)


class Rollout:
    """In-memory expert trajectory (pre-dilation)."""

    def __init__(self, task: TaskSpec, variant: str, seed: int):
        self.task = task
        self.variant = variant
        self.seed = seed
        self.states: list[EnvState] = []
        self.frames: list[np.ndarray] = []
        self.annotations: list[world.Annotations] = []
        self.actions: list[Action] = []
        self.invalid: list[bool] = []
        self.progress_trace: list[EvalProgress] = []
        self.goal: GoalExpr | None = None

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def final_progress(self) -> EvalProgress:
        return self.progress_trace[-1]


def expert_rollout(
    task: TaskSpec,
    seed: int,
    variant: str = "default",
    max_steps: int = 2000,
    render: bool = True,
) -> Rollout:
    """Run the scripted expert to completion plus one trailing NOOP.

    The recorded progress trace is primed with the reset state, so goal
    conditions already true at reset must be re-triggered before they count.
    """
    goal = task.goal(variant)
    state = task.sample_layout(seed)
    progress = goals.initial_progress(goal, state)
    expert = ScriptedExpert(goal)

    roll = Rollout(task, variant, seed)
    roll.goal = goal
    roll.states.append(state)
    roll.progress_trace.append(progress)
    if render:
        frame, _, ann = _render_ann(state)
        roll.frames.append(frame)
        roll.annotations.append(ann)

    for _ in range(max_steps):
        done = progress.completed
        action = expert.act(state, progress)
        state, info = world.apply_action(state, action)
        progress = goals.eval_step(progress, goal, state)
        roll.actions.append(action)
        roll.invalid.append(info.invalid_action)
        roll.states.append(state)
        roll.progress_trace.append(progress)
        if render:
            frame, _, ann = _render_ann(state)
            roll.frames.append(frame)
            roll.annotations.append(ann)
        if done:  # the single post-completion NOOP was just recorded
            return roll
    raise ExpertError(f"{task.task_id} seed={seed} not completed in {max_steps} steps")


def _render_ann(state: EnvState):
    frame, owner, ids = world.render_with_owner(state)
    masks = {oid: owner == i for i, oid in enumerate(ids)}
    ann = world.Annotations(tuple(ids), masks, state.gripper, state.held, False)
    return frame, owner, ann
