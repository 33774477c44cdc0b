"""The headline experiment: memory policy vs memoryless control on T3.

T3 asks for the same bowl to be picked and placed on the same plate three
times.  The demonstrations revisit byte-identical observations that demand
different actions (see demo 02), so a frame-reactive policy is structurally
capped: it can learn the majority action at each aliased state but can never
complete the full repetition reliably.  The slot-memory policy carries
per-slot recurrent state across the whole episode and can count visits.

This script runs the reference desk recipe (single CPU core, roughly two
hours total) end to end:

  1. generate the T3 dataset (300 train / 20 val episodes, no frame dilation)
  2. train the slot-memory policy and the frame-reactive control with the
     same budget, batch layout, and learning-rate schedule
  3. evaluate both with 20 greedy rollouts on held-out layouts
  4. feed one verified-aliased frame pair to both policies: the control's
     action distributions must match bit for bit, the memory policy's differ

Checkpoints and the evaluation report land in artifacts/t3_desk/ (the
acceptance tests re-evaluate those exact files).  Pass --quick for a
ten-minute smoke version that writes nothing.

Run:  python3 demos/05_train_and_evaluate.py [--quick]
"""

import sys
import time
from pathlib import Path

import torch

from memgrid.audit import find_aliased_pairs
from memgrid.data import generate_dataset, load_index, read_episode
from memgrid.policy import ReactivePolicy, SlotMemoryPolicy
from memgrid.training import (
    DESK_T3_BASELINE,
    DESK_T3_FULL,
    DESK_T3_MODEL,
    eval_report_text,
    evaluate_policy,
    train,
)

QUICK = "--quick" in sys.argv
repo = Path(__file__).resolve().parent.parent
out_dir = repo / "demo_out" / "05_experiment"
art_dir = repo / "artifacts" / "t3_desk"
out_dir.mkdir(parents=True, exist_ok=True)

data_dir = out_dir / "t3_data"
if not (data_dir / "index.txt").exists():
    print("generating T3 dataset (300 train / 20 val)...")
    generate_dataset("t3", data_dir, n_train=300, n_val=20, seed=0, dilation=1)

full_cfg, base_cfg = DESK_T3_FULL, DESK_T3_BASELINE
if QUICK:
    from dataclasses import replace

    full_cfg = replace(full_cfg, steps=300, warmup_steps=30)
    base_cfg = replace(base_cfg, steps=300, warmup_steps=30)
    print("quick mode: 300 steps each; numbers will be far from converged\n")

print(f"model: {DESK_T3_MODEL}")
print(f"memory-policy schedule: {full_cfg}")
print(f"control schedule:       {base_cfg}\n")

t0 = time.time()
torch.manual_seed(0)
full = SlotMemoryPolicy(DESK_T3_MODEL)
train(full, data_dir, out_dir / "full.pt", full_cfg, log=print)
print(f"memory policy trained in {time.time() - t0:.0f}s\n")

t0 = time.time()
torch.manual_seed(0)
base = ReactivePolicy(DESK_T3_MODEL)
train(base, data_dir, out_dir / "baseline.pt", base_cfg, log=print)
print(f"control trained in {time.time() - t0:.0f}s\n")

print("evaluating, 20 greedy rollouts each on held-out layouts...")
ev_full = evaluate_policy(full, "t3", n=20, seed=1)
ev_base = evaluate_policy(base, "t3", n=20, seed=1)
report = (
    eval_report_text([ev_full], "slot-memory policy")
    + eval_report_text([ev_base], "frame-reactive control")
)
print(report)
gap = ev_full.mean_completion - ev_base.mean_completion
print(f"mean subgoal-completion gap: {gap:+.3f}\n")

# the aliasing demonstration: identical pixels, one policy blind, one not
episodes = [read_episode(p) for p in load_index(data_dir)["train"][:10]]
pair = find_aliased_pairs(episodes, eps=1e-3).example
(e1, t1), (e2, t2) = pair
task_idx = torch.tensor([base.task_index["T3"]])
fa = torch.from_numpy(episodes[e1].frames_float()[t1]).permute(2, 0, 1)
fb = torch.from_numpy(episodes[e2].frames_float()[t2]).permute(2, 0, 1)
with torch.no_grad():
    same = torch.equal(base(fa[None], task_idx), base(fb[None], task_idx))
print(f"control's distributions on the aliased pair are bit-identical: {same}")


def memory_dist(ep, t):
    frames = torch.from_numpy(ep.frames_float()[: t + 1]).permute(0, 3, 1, 2)[None]
    with torch.no_grad():
        out = full.encode_sequence(frames, deterministic_init=True)
        g = torch.zeros(1, t + 1, full.cfg.num_slots, dtype=torch.long)
        lp = full.action_log_probs(out["slots"], out["y"], out["features"], g, task_idx)
    return lp[0, -1]


differ = not torch.allclose(memory_dist(episodes[e1], t1), memory_dist(episodes[e2], t2))
print(f"memory policy's distributions on the same pair differ:          {differ}")

if not QUICK:
    art_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "full.pt").replace(art_dir / "full.pt")
    (out_dir / "baseline.pt").replace(art_dir / "baseline.pt")
    (art_dir / "report.txt").write_text(
        report + f"mean subgoal-completion gap: {gap:+.3f}\n"
    )
    print(f"\ncheckpoints and report written to {art_dir}")
