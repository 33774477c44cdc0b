"""Episode container and dataset generation.

One episode is one self-describing binary file: a 4-byte magic ``MGEP``, a
little-endian uint32 header length, a JSON header (schema version, task id,
goal text, seed, dilation, array manifest) and the raw C-order little-endian
array payload.  Frames are stored uint8, masks bit-packed.  A plain-text
``index.txt`` beside the episodes lists ``<split>\\t<filename>`` lines.

Temporal dilation ``d`` expands every recorded step into ``d-1`` frame-hold
NOOPs followed by the real action, so a dilated sequence is still a valid
trajectory of the environment (``d*T`` actions, ``d*T + 1`` frames).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import goals, world
from .expert import expert_rollout, leading_branch
from .goals import EvalProgress, GoalExpr
from .tasks import TaskSpec, get_task
from .world import Action, EnvState

SCHEMA_VERSION = 1
MAGIC = b"MGEP"

__all__ = [
    "Episode",
    "write_episode",
    "read_episode",
    "episode_from_rollout",
    "generate_dataset",
    "load_index",
    "goal_subgoal_keys",
    "object_subgoal_view",
]


def goal_subgoal_keys(goal: GoalExpr) -> list[goals.Subgoal]:
    """Distinct subgoals across branches, in first-appearance order."""
    seen: dict[goals.Subgoal, None] = {}
    for branch in goals.goal_branches(goal):
        for sg in branch:
            seen.setdefault(sg)
    return list(seen)


def _involves(sg: goals.Subgoal, oid: str, state: EnvState) -> bool:
    for p in sg:
        if p.subject == oid:
            return True
        if p.target is not None:
            tid = p.target
            if p.name == "in":
                tid = world.resolve_container(tid, state)
            if tid == oid:
                return True
    return False


def object_subgoal_view(
    goal: GoalExpr, state: EnvState, progress: EvalProgress, instance_ids
) -> tuple[np.ndarray, np.ndarray]:
    """Per-object (next pending subgoal index, satisfied-involving count).

    Indices point into :func:`goal_subgoal_keys`; -1 means no pending subgoal
    involves the object.  Both views follow the leading alive branch.
    """
    branches = goals.goal_branches(goal)
    keys = goal_subgoal_keys(goal)
    key_index = {sg: i for i, sg in enumerate(keys)}
    nxt = np.full(len(instance_ids), -1, dtype=np.int16)
    cnt = np.zeros(len(instance_ids), dtype=np.int16)
    b = leading_branch(branches, state, progress)
    done, todo = branches[b][: progress.satisfied[b]], branches[b][progress.satisfied[b]:]
    for i, oid in enumerate(instance_ids):
        if oid == "gripper" or oid not in state.objects:
            continue
        cnt[i] = sum(_involves(sg, oid, state) for sg in done)
        if not progress.completed:
            for sg in todo:
                if _involves(sg, oid, state):
                    nxt[i] = key_index[sg]
                    break
    return nxt, cnt


@dataclass
class Episode:
    """Decoded episode: T actions, T+1 frames and per-frame annotations."""

    task_id: str
    variant: str
    seed: int
    dilation: int
    goal_text: str
    instruction: str
    instance_ids: list[str]
    subgoal_keys: list[str]
    expert_length: int
    frames: np.ndarray  # (T+1, 64, 64, 3) uint8
    actions: np.ndarray  # (T,) uint8
    invalid: np.ndarray  # (T,) bool
    masks: np.ndarray = field(repr=False)  # (T+1, n_inst, 64, 64) bool
    branch_satisfied: np.ndarray  # (T+1, n_branches) int16
    branch_alive: np.ndarray  # (T+1, n_branches) bool
    completed: np.ndarray  # (T+1,) bool
    failed: np.ndarray  # (T+1,) bool
    next_subgoal: np.ndarray  # (T+1, n_inst) int16
    involve_count: np.ndarray  # (T+1, n_inst) int16

    @property
    def length(self) -> int:
        return int(self.actions.shape[0])

    def goal(self) -> GoalExpr:
        return goals.parse_goal(self.goal_text)

    def frames_float(self) -> np.ndarray:
        return self.frames.astype(np.float32) / 255.0


def episode_from_rollout(roll, dilation: int = 1) -> Episode:
    """Pack an expert rollout, applying frame-hold dilation."""
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    task: TaskSpec = roll.task
    goal = roll.goal
    ids = list(roll.annotations[0].instance_ids)
    keys = goal_subgoal_keys(goal)

    def ann_row(t: int):
        st, pr = roll.states[t], roll.progress_trace[t]
        nxt, cnt = object_subgoal_view(goal, st, pr, ids)
        return (
            np.asarray(pr.satisfied, dtype=np.int16),
            np.asarray(pr.alive, dtype=bool),
            pr.completed,
            pr.failed,
            nxt,
            cnt,
        )

    T = roll.length
    reps = [dilation] * T  # each source step expands to `dilation` recorded steps
    frames = [np.ascontiguousarray((roll.frames[0] * 255).round().astype(np.uint8))]
    masks = [_stack_masks(roll.annotations[0], ids)]
    rows = [ann_row(0)]
    actions: list[int] = []
    invalid: list[bool] = []
    for t in range(T):
        for k in range(reps[t]):
            last = k == reps[t] - 1
            actions.append(int(roll.actions[t]) if last else int(Action.NOOP))
            invalid.append(bool(roll.invalid[t]) if last else False)
            src = t + 1 if last else t
            frames.append(np.ascontiguousarray((roll.frames[src] * 255).round().astype(np.uint8)))
            masks.append(_stack_masks(roll.annotations[src], ids))
            rows.append(ann_row(src))
    sat = np.stack([r[0] for r in rows])
    alive = np.stack([r[1] for r in rows])
    return Episode(
        task_id=task.task_id,
        variant=roll.variant,
        seed=roll.seed,
        dilation=dilation,
        goal_text=goals.format_goal(goal),
        instruction=task.instruction,
        instance_ids=ids,
        subgoal_keys=[goals.format_subgoal(sg) for sg in keys],
        expert_length=T,
        frames=np.stack(frames),
        actions=np.asarray(actions, dtype=np.uint8),
        invalid=np.asarray(invalid, dtype=bool),
        masks=np.stack(masks),
        branch_satisfied=sat,
        branch_alive=alive,
        completed=np.asarray([r[2] for r in rows], dtype=bool),
        failed=np.asarray([r[3] for r in rows], dtype=bool),
        next_subgoal=np.stack([r[4] for r in rows]),
        involve_count=np.stack([r[5] for r in rows]),
    )


def _stack_masks(ann: world.Annotations, ids) -> np.ndarray:
    return np.stack([ann.masks[oid] for oid in ids])


# ---------------------------------------------------------------------------
# serialization

_ARRAYS = (
    "frames",
    "actions",
    "invalid",
    "masks",
    "branch_satisfied",
    "branch_alive",
    "completed",
    "failed",
    "next_subgoal",
    "involve_count",
)


def write_episode(ep: Episode, path: str | Path) -> None:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    for name in _ARRAYS:
        arr = getattr(ep, name)
        if name == "masks":
            arr = np.packbits(arr.astype(np.uint8), axis=-1)
        arrays[name] = np.ascontiguousarray(arr)
    header = {
        "schema": SCHEMA_VERSION,
        "task": ep.task_id,
        "variant": ep.variant,
        "seed": ep.seed,
        "dilation": ep.dilation,
        "goal": ep.goal_text,
        "instruction": ep.instruction,
        "instance_ids": ep.instance_ids,
        "subgoal_keys": ep.subgoal_keys,
        "expert_length": ep.expert_length,
        "mask_shape": list(ep.masks.shape),
        "arrays": [
            {"name": n, "dtype": str(a.dtype), "shape": list(a.shape)} for n, a in arrays.items()
        ],
    }
    blob = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in _ARRAYS:
            f.write(arrays[name].tobytes())


def read_episode(path: str | Path) -> Episode:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not an episode file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        if header["schema"] != SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported schema {header['schema']}")
        fields: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            arr = np.fromfile(f, dtype=np.dtype(spec["dtype"]), count=int(np.prod(spec["shape"])))
            fields[spec["name"]] = arr.reshape(spec["shape"])
    mask_shape = tuple(header["mask_shape"])
    masks = np.unpackbits(fields["masks"], axis=-1, count=mask_shape[-1]).astype(bool)
    return Episode(
        task_id=header["task"],
        variant=header["variant"],
        seed=header["seed"],
        dilation=header["dilation"],
        goal_text=header["goal"],
        instruction=header["instruction"],
        instance_ids=list(header["instance_ids"]),
        subgoal_keys=list(header["subgoal_keys"]),
        expert_length=header["expert_length"],
        frames=fields["frames"],
        actions=fields["actions"],
        invalid=fields["invalid"].astype(bool),
        masks=masks.reshape(mask_shape),
        branch_satisfied=fields["branch_satisfied"],
        branch_alive=fields["branch_alive"].astype(bool),
        completed=fields["completed"].astype(bool),
        failed=fields["failed"].astype(bool),
        next_subgoal=fields["next_subgoal"],
        involve_count=fields["involve_count"],
    )


# ---------------------------------------------------------------------------
# dataset generation

_VAL_SEED_OFFSET = 1_000_000


def generate_dataset(
    task_id: str,
    out_dir: str | Path,
    n_train: int = 100,
    n_val: int = 20,
    seed: int = 0,
    dilation: int | None = None,
    variant: str = "default",
) -> Path:
    """Write expert episodes and an index file; returns the index path.

    Train episodes use seeds ``seed..seed+n_train-1``; validation seeds are
    offset by 1e6 so the two pools never overlap.
    """
    task = get_task(task_id)
    if dilation is None:
        dilation = task.default_dilation
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for split, count, base in (("train", n_train, seed), ("val", n_val, seed + _VAL_SEED_OFFSET)):
        for i in range(count):
            roll = expert_rollout(task, base + i, variant)
            ep = episode_from_rollout(roll, dilation)
            name = f"{task.task_id.lower()}_{split}_{i:04d}.mgep"
            write_episode(ep, out_dir / name)
            lines.append(f"{split}\t{name}")
    index = out_dir / "index.txt"
    index.write_text("\n".join(lines) + "\n")
    return index


def load_index(data_dir: str | Path) -> dict[str, list[Path]]:
    """Read ``index.txt``; returns split -> episode paths."""
    data_dir = Path(data_dir)
    splits: dict[str, list[Path]] = {}
    for line in (data_dir / "index.txt").read_text().splitlines():
        if not line.strip():
            continue
        split, name = line.split("\t")
        splits.setdefault(split, []).append(data_dir / name)
    return splits
