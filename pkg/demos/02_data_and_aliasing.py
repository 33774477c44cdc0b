"""Episode datasets and the observation-aliasing audit.

The repeated pick-and-place tasks produce demonstrations in which the very
same pixels demand different actions: on the third visit to "gripper over the
plate, holding the bowl" the expert places, on earlier visits it departs.  No
policy that reads a single frame can get both right -- that is the memory
problem this package studies.

This script generates a small dataset for the 3x repetition task, runs the
aliasing audit over it, and saves the smoking gun: two byte-identical frames
whose recorded expert actions differ.

Run:  python3 demos/02_data_and_aliasing.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np
from PIL import Image

from memgrid.audit import aliasing_report_text, find_aliased_pairs, frame_distance
from memgrid.data import generate_dataset, load_index, read_episode
from memgrid.world import Action

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/02_aliasing")
out_dir.mkdir(parents=True, exist_ok=True)
data_dir = out_dir / "t3_data"

index = generate_dataset("t3", data_dir, n_train=5, n_val=1, seed=0, dilation=1)
print(f"wrote dataset with index {index}")

episodes = [read_episode(p) for p in load_index(data_dir)["train"]]
ep = episodes[0]
print(f"episode fields: frames {ep.frames.shape} {ep.frames.dtype}, "
      f"actions {ep.actions.shape}, masks {ep.masks.shape}")
print(f"goal text: {ep.goal_text}")
print(f"per-object next-subgoal view spans {ep.next_subgoal.shape} "
      f"over keys {list(ep.subgoal_keys)}\n")

report = find_aliased_pairs(episodes, eps=1e-3)
print(aliasing_report_text(report, "t3 demo dataset"))

(e1, t1), (e2, t2) = report.example
a1, a2 = Action(episodes[e1].actions[t1]), Action(episodes[e2].actions[t2])
f1, f2 = episodes[e1].frames[t1], episodes[e2].frames[t2]
print(f"example pair: episode {e1} step {t1} ({a1.name}) vs "
      f"episode {e2} step {t2} ({a2.name})")
print(f"pixel distance between the two frames: {frame_distance(f1, f2)}")
print(f"byte-identical: {f1.tobytes() == f2.tobytes()}")

divider = np.full((f1.shape[0], 2, 3), 255, dtype=np.uint8)
pair = np.concatenate([f1, divider, f2], axis=1)
path = out_dir / "aliased_pair.png"
Image.fromarray(pair).save(path)
print(f"\nthe two frames, side by side (identical pixels!): {path}")
