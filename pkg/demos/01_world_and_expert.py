"""A first walk through the gridworld: tasks, goals, and the scripted expert.

The world is an 8x8 grid of 8x8-pixel sprites: a gripper, bowls, plates,
bottles, baskets, cheese.  Ten pick-and-place tasks (T1..T10) each define a
goal expression -- sequences, conjunctions, and Or-branches over On/In/Lifted
predicates -- plus a layout sampler and a scripted expert that completes the
goal while deliberately revisiting ambiguous states.

This script runs the expert on two tasks, prints the goal structure and the
progress trace, and saves a filmstrip of rendered frames.

Run:  python3 demos/01_world_and_expert.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np
from PIL import Image

from memgrid.expert import expert_rollout
from memgrid.goals import format_goal, subgoal_completion
from memgrid.tasks import TASK_IDS, get_task
from memgrid.world import Action

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/01_world")
out_dir.mkdir(parents=True, exist_ok=True)

print(f"available tasks: {', '.join(TASK_IDS)}\n")

for task_id in ("T1", "T3"):
    task = get_task(task_id)
    goal = task.goal()
    print(f"=== {task_id}: {task.instruction}")
    print(f"memory demands: {', '.join(task.memory_dims)}")
    print(f"goal: {format_goal(goal)}")

    roll = expert_rollout(task, seed=0)
    actions = [Action(a).name for a in roll.actions]
    print(f"expert finished in {roll.length} actions: {' '.join(actions)}")

    # the progress trace shows subgoal credit accruing step by step
    marks = [subgoal_completion(p, goal) for p in roll.progress_trace]
    print("completion per step:", " ".join(f"{m:.2f}" for m in marks))
    final = roll.final_progress
    print(f"completed={final.completed} failed={final.failed}\n")

    # filmstrip: every frame side by side with a 2px divider
    frames = [(f * 255).round().astype(np.uint8) for f in roll.frames]
    divider = np.full((frames[0].shape[0], 2, 3), 255, dtype=np.uint8)
    strip = frames[0]
    for f in frames[1:]:
        strip = np.concatenate([strip, divider, f], axis=1)
    path = out_dir / f"{task_id}_filmstrip.png"
    Image.fromarray(strip).save(path)
    print(f"filmstrip saved to {path}\n")
