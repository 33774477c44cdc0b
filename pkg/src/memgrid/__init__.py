"""memgrid: an object-memory gridworld benchmark and a slot-recurrent policy.

The environment half (``world``, ``tasks``, ``expert``, ``data``, ``audit``,
``goals``) is plain numpy and has no torch dependency; the model half
(``slots``, ``ssm``, ``policy``, ``training``) is torch on CPU.
"""

from .goals import (
    EvalProgress,
    GoalExpr,
    Predicate,
    eval_step,
    format_goal,
    initial_progress,
    parse_goal,
    subgoal_completion,
)
from .tasks import TaskSpec, get_task, task_ids
from .world import Action, EnvState, ObjectState, render, step

__version__ = "0.1.0"

__all__ = [
    "Action",
    "EnvState",
    "EvalProgress",
    "GoalExpr",
    "ObjectState",
    "Predicate",
    "TaskSpec",
    "eval_step",
    "format_goal",
    "get_task",
    "initial_progress",
    "parse_goal",
    "render",
    "step",
    "subgoal_completion",
    "task_ids",
    "__version__",
]
