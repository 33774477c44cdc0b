"""Imitation training on stored episodes, checkpointing, and rollout
evaluation for both the recurrent slot policy and the memoryless control.

Training runs truncated backpropagation through time: each batch row is a
*stream* that walks its episodes in consecutive chunks of ``chunk_len``
actions, carrying detached slot state and SSM hidden state across chunk
boundaries within an episode and drawing fresh init slots when a new episode
begins.  Short tail chunks are padded and masked.

The total objective is a weighted sum of action negative log-likelihood,
windowed slot reconstruction, temporal slot contrastive loss, and
next-step slot prediction.  The control model trains on the NLL term alone,
frame by frame.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from . import world
from .data import Episode, goal_subgoal_keys, load_index, object_subgoal_view, read_episode
from .expert import expert_rollout
from .goals import eval_step, format_subgoal, initial_progress, subgoal_completion
from .policy import (
    ModelConfig,
    ReactivePolicy,
    SlotMemoryPolicy,
    assign_subgoal_indices,
    pool_mask,
)
from .slots import contrastive_loss
from .ssm import next_slot_loss, window_recon_loss
from .tasks import get_task

__all__ = [
    "TrainConfig",
    "TrainResult",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "TaskEval",
    "evaluate_policy",
    "eval_report_text",
    "DESK_T3_MODEL",
    "DESK_T3_FULL",
    "DESK_T3_BASELINE",
]

CHECKPOINT_FORMAT_VERSION = 1
_NO_PRIORITY = 32767


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "slot-memory"  # or "reactive"
    steps: int = 2000
    batch_size: int = 8
    chunk_len: int = 32
    lr: float = 3e-4
    warmup_steps: int = 0
    grad_clip: float = 1.0
    seed: int = 0
    weight_action: float = 1.0
    weight_window: float = 0.5
    weight_contrastive: float = 0.1
    weight_next: float = 0.5
    delta_max: int = 4
    log_every: int = 100


@dataclass
class TrainResult:
    checkpoint: Path
    losses: list[dict[str, float]]
    steps: int  # cumulative counter, includes steps from a resumed checkpoint
    seconds: float


# Reference desk-scale recipe for the memory-vs-memoryless comparison on the
# aliased pick-and-place task (single CPU core, ~2 h total).  The training
# demo produces the committed checkpoints with it and the acceptance tests
# evaluate against it, so it lives here rather than in either script.
DESK_T3_MODEL = ModelConfig(
    d_enc=64, d_slot=64, num_slots=8, hidden=64, rank=4,
    past=8, future=8, predictor_width=128, num_relations=8,
)
DESK_T3_FULL = TrainConfig(
    kind="slot-memory", steps=4000, batch_size=16, chunk_len=24,
    lr=1e-3, warmup_steps=200, seed=0,
)
DESK_T3_BASELINE = TrainConfig(
    kind="reactive", steps=4000, batch_size=16, chunk_len=24,
    lr=1e-3, warmup_steps=200, seed=0,
)


@dataclass
class _Prepared:
    frames: Tensor  # (T, 3, H, W) float32
    actions: Tensor  # (T,) long
    cell_masks: Tensor  # (T, n, M) float32
    next_global: Tensor  # (T, n) long, -1 = none
    priority: Tensor  # (T, n) long
    task_idx: int


def _prepare_episode(ep: Episode, model: SlotMemoryPolicy | ReactivePolicy) -> _Prepared:
    T = ep.length
    frames = torch.from_numpy(ep.frames_float()[:T]).permute(0, 3, 1, 2).contiguous()
    actions = torch.from_numpy(ep.actions.astype(np.int64))
    masks = torch.from_numpy(ep.masks[:T])  # (T, n, H, W) bool
    empty = ~masks.any(-1).any(-1)
    cells = pool_mask(masks)
    grip = cells[:, ep.instance_ids.index("gripper"), :][:, None, :]
    cells = torch.where(empty[..., None], grip.expand_as(cells), cells)
    local = torch.from_numpy(ep.next_subgoal[:T].astype(np.int64))
    if isinstance(model, SlotMemoryPolicy):
        lut = torch.tensor(
            [model.subgoal_index[k] for k in ep.subgoal_keys], dtype=torch.long
        )
        next_global = torch.where(local >= 0, lut[local.clamp(min=0)], torch.tensor(-1))
    else:
        next_global = torch.full_like(local, -1)
    priority = torch.where(local >= 0, local, torch.tensor(_NO_PRIORITY))
    return _Prepared(
        frames, actions, cells, next_global, priority, model.task_index[ep.task_id]
    )


@dataclass
class _Stream:
    paths: list[Path]
    rng: random.Random
    order: list[int] = field(default_factory=list)
    ep: _Prepared | None = None
    pos: int = 0

    def next_chunk(self, chunk_len: int, cache: dict, model) -> tuple[_Prepared, int, int, bool]:
        """Return (episode, start, length, fresh) advancing the stream."""
        fresh = False
        if self.ep is None or self.pos >= self.ep.frames.shape[0]:
            if not self.order:
                self.order = list(range(len(self.paths)))
                self.rng.shuffle(self.order)
            path = self.paths[self.order.pop()]
            if path not in cache:
                cache[path] = _prepare_episode(read_episode(path), model)
            self.ep = cache[path]
            self.pos = 0
            fresh = True
        start = self.pos
        length = min(chunk_len, self.ep.frames.shape[0] - start)
        self.pos += length
        return self.ep, start, length, fresh


def _assemble_batch(
    streams: list[_Stream], chunk_len: int, cache: dict, model
) -> dict[str, Tensor]:
    rows = [s.next_chunk(chunk_len, cache, model) for s in streams]
    B, T = len(rows), chunk_len
    n_max = max(ep.cell_masks.shape[1] for ep, *_ in rows)
    M = rows[0][0].cell_masks.shape[2]
    frames = torch.zeros(B, T, *rows[0][0].frames.shape[1:])
    actions = torch.zeros(B, T, dtype=torch.long)
    valid = torch.zeros(B, T, dtype=torch.bool)
    fresh = torch.zeros(B, dtype=torch.bool)
    task_idx = torch.zeros(B, dtype=torch.long)
    cell_masks = torch.zeros(B, T, n_max, M)
    next_global = torch.full((B, T, n_max), -1, dtype=torch.long)
    priority = torch.full((B, T, n_max), _NO_PRIORITY, dtype=torch.long)
    for b, (ep, start, length, is_fresh) in enumerate(rows):
        sl = slice(start, start + length)
        frames[b, :length] = ep.frames[sl]
        if length < T:  # pad with the last frame; loss-masked anyway
            frames[b, length:] = ep.frames[start + length - 1]
        actions[b, :length] = ep.actions[sl]
        valid[b, :length] = True
        fresh[b] = is_fresh
        task_idx[b] = ep.task_idx
        n = ep.cell_masks.shape[1]
        cell_masks[b, :length, :n] = ep.cell_masks[sl]
        next_global[b, :length, :n] = ep.next_global[sl]
        priority[b, :length, :n] = ep.priority[sl]
    return {
        "frames": frames,
        "actions": actions,
        "valid": valid,
        "fresh": fresh,
        "task_idx": task_idx,
        "cell_masks": cell_masks,
        "next_global": next_global,
        "priority": priority,
    }


def _batch_subgoal_indices(
    attn: Tensor, batch: dict[str, Tensor], num_slots: int
) -> Tensor:
    B, T = batch["valid"].shape
    out = torch.zeros(B, T, num_slots, dtype=torch.long)
    for b in range(B):
        for t in range(T):
            if not batch["valid"][b, t]:
                continue
            if (batch["next_global"][b, t] >= 0).any():
                out[b, t] = assign_subgoal_indices(
                    attn[b, t],
                    batch["cell_masks"][b, t],
                    batch["next_global"][b, t],
                    batch["priority"][b, t],
                )
    return out


def _masked_nll(log_probs: Tensor, actions: Tensor, valid: Tensor) -> Tensor:
    picked = log_probs.gather(-1, actions[..., None]).squeeze(-1)
    return -(picked * valid.float()).sum() / valid.float().sum().clamp(min=1)


def train(
    model: SlotMemoryPolicy | ReactivePolicy,
    data_dir: str | Path,
    out_path: str | Path,
    cfg: TrainConfig | None = None,
    log=None,
    resume: str | Path | None = None,
) -> TrainResult:
    """Fit ``model`` on the train split under ``data_dir`` and write a
    checkpoint to ``out_path``.  Returns the loss trace.

    ``resume`` loads weights from an earlier checkpoint first; the saved step
    counter then continues from that checkpoint's count.
    """
    cfg = cfg or TrainConfig(kind="reactive" if isinstance(model, ReactivePolicy) else "slot-memory")
    prior_steps = 0
    if resume is not None:
        loaded, payload = load_checkpoint(resume)
        if type(loaded) is not type(model):
            raise ValueError("resume checkpoint holds a different policy kind")
        model.load_state_dict(loaded.state_dict())
        prior_steps = int(payload.get("trained_steps", 0))
    torch.manual_seed(cfg.seed)
    paths = load_index(data_dir).get("train", [])
    if not paths:
        raise ValueError(f"no training episodes indexed under {data_dir}")
    streams = [
        _Stream(paths, random.Random(cfg.seed * 7919 + i)) for i in range(cfg.batch_size)
    ]
    cache: dict = {}
    init_gen = torch.Generator().manual_seed(cfg.seed + 1)
    recurrent = isinstance(model, SlotMemoryPolicy)
    carry: tuple[Tensor, Tensor] | None = None
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    def lr_factor(step: int) -> float:
        if cfg.warmup_steps and step < cfg.warmup_steps:
            return (step + 1) / cfg.warmup_steps
        span = max(cfg.steps - cfg.warmup_steps, 1)
        frac = (step - cfg.warmup_steps) / span
        return 0.5 * (1.0 + math.cos(math.pi * min(max(frac, 0.0), 1.0)))

    sched = torch.optim.lr_scheduler.LambdaLR(opt, lr_factor)
    losses: list[dict[str, float]] = []
    started = time.time()
    model.train()
    for step in range(cfg.steps):
        batch = _assemble_batch(streams, cfg.chunk_len, cache, model)
        if recurrent:
            out = model.encode_sequence(
                batch["frames"], carry=carry, fresh=batch["fresh"], generator=init_gen
            )
            g_idx = _batch_subgoal_indices(out["attn"], batch, model.cfg.num_slots)
            log_probs = model.action_log_probs(
                out["slots"], out["y"], out["features"], g_idx, batch["task_idx"]
            )
            nll = _masked_nll(log_probs, batch["actions"], batch["valid"])
            pred = model.predict_windows(out["y"], out["slots"])
            win = window_recon_loss(
                pred, out["slots"], model.cfg.past, model.cfg.future, batch["valid"]
            )
            lengths = batch["valid"].sum(dim=1)
            tracks = [
                out["slots"][b, : int(n)] for b, n in enumerate(lengths) if int(n) >= 2
            ]
            con = (
                contrastive_loss(tracks, delta_max=cfg.delta_max)
                if tracks
                else torch.zeros(())
            )
            nxt = next_slot_loss(out["y"], out["slots"], batch["valid"])
            total = (
                cfg.weight_action * nll
                + cfg.weight_window * win
                + cfg.weight_contrastive * con
                + cfg.weight_next * nxt
            )
            record = {
                "total": float(total.detach()),
                "action": float(nll.detach()),
                "window": float(win.detach()),
                "contrastive": float(con.detach()),
                "next": float(nxt.detach()),
            }
        else:
            B, T = batch["valid"].shape
            flat_frames = batch["frames"].reshape(B * T, *batch["frames"].shape[2:])
            task_rep = batch["task_idx"][:, None].expand(B, T).reshape(B * T)
            log_probs = model(flat_frames, task_rep).view(B, T, -1)
            nll = _masked_nll(log_probs, batch["actions"], batch["valid"])
            total = cfg.weight_action * nll
            record = {"total": float(total.detach()), "action": float(nll.detach())}
        opt.zero_grad()
        total.backward()
        norm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        if torch.isfinite(norm):  # a rare bad batch must not poison the weights
            opt.step()
        sched.step()
        if recurrent:
            # Detached carryover; rows whose episode ended get re-initialized
            # inside encode_sequence via next batch's fresh flags.
            slots_c, hidden_c = out["carry"]
            carry = (slots_c.detach(), hidden_c.detach())
        losses.append(record)
        if log and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log(f"step {step:5d}  " + "  ".join(f"{k} {v:.4f}" for k, v in record.items()))
    out_path = Path(out_path)
    save_checkpoint(out_path, model, cfg, trained_steps=prior_steps + cfg.steps)
    return TrainResult(out_path, losses, prior_steps + cfg.steps, time.time() - started)


_SEGMENT_PREFIXES = {
    "encoder": ("encoder.", "attention."),
    "ssm": ("ssm.", "window."),
    "head": ("fusion.", "relation.", "decoder."),
    "embeddings": ("slot_init.", "subgoal_embed.", "task_embed."),
}


def _segment_of(name: str) -> str:
    for seg, prefixes in _SEGMENT_PREFIXES.items():
        if name.startswith(prefixes):
            return seg
    raise KeyError(f"parameter {name!r} fits no checkpoint segment")


def save_checkpoint(
    path: str | Path,
    model: SlotMemoryPolicy | ReactivePolicy,
    train_cfg: TrainConfig | None = None,
    trained_steps: int = 0,
) -> None:
    """Single-file checkpoint with named segments (encoder/ssm/head/embeddings)."""
    segments: dict[str, dict[str, Tensor]] = {k: {} for k in _SEGMENT_PREFIXES}
    for name, tensor in model.state_dict().items():
        segments[_segment_of(name)][name] = tensor
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "reactive" if isinstance(model, ReactivePolicy) else "slot-memory",
        "model_config": asdict(model.cfg),
        "train_config": asdict(train_cfg) if train_cfg else None,
        "trained_steps": trained_steps,
        "segments": segments,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[SlotMemoryPolicy | ReactivePolicy, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version!r}")
    raw = dict(payload["model_config"])
    raw["subgoal_vocab"] = tuple(raw["subgoal_vocab"])
    raw["task_vocab"] = tuple(raw["task_vocab"])
    cfg = ModelConfig(**raw)
    model = ReactivePolicy(cfg) if payload["kind"] == "reactive" else SlotMemoryPolicy(cfg)
    state: dict[str, Tensor] = {}
    for seg in payload["segments"].values():
        state.update(seg)
    model.load_state_dict(state)
    model.eval()
    return model, payload


@dataclass
class TaskEval:
    task_id: str
    variant: str
    n: int
    successes: int
    completions: list[float]
    steps: list[int]
    overrep_failures: int
    step_cap: int

    @property
    def success_rate(self) -> float:
        return self.successes / self.n if self.n else 0.0

    @property
    def mean_completion(self) -> float:
        return sum(self.completions) / self.n if self.n else 0.0


def _rollout_subgoal_indices(model: SlotMemoryPolicy, goal, state, progress, attn) -> Tensor:
    mask_map = world.instance_masks(state)
    ids = sorted(state.objects) + ["gripper"]
    masks = torch.from_numpy(np.stack([mask_map[i] for i in ids]))
    next_local, _ = object_subgoal_view(goal, state, progress, ids)
    empty = ~masks.any(-1).any(-1)
    cells = pool_mask(masks)
    grip = cells[ids.index("gripper")][None]
    cells = torch.where(empty[:, None], grip.expand_as(cells), cells)
    keys = [format_subgoal(sg) for sg in goal_subgoal_keys(goal)]
    lut = torch.tensor([model.subgoal_index[k] for k in keys], dtype=torch.long)
    local = torch.from_numpy(next_local.astype(np.int64))
    next_global = torch.where(local >= 0, lut[local.clamp(min=0)], torch.tensor(-1))
    priority = torch.where(local >= 0, local, torch.tensor(_NO_PRIORITY))
    return assign_subgoal_indices(attn, cells, next_global, priority)


@torch.no_grad()
def evaluate_policy(
    model: SlotMemoryPolicy | ReactivePolicy,
    task_id: str,
    n: int = 20,
    seed: int = 0,
    variant: str = "default",
    step_cap: int | None = None,
) -> TaskEval:
    """Run ``n`` greedy rollouts.  The step cap defaults to 4x the mean
    scripted-demonstration length over the same layouts."""
    task = get_task(task_id)
    task_id = task.task_id  # normalized casing
    goal = task.goal(variant)
    eval_seeds = [seed * 100003 + i for i in range(n)]
    if step_cap is None:
        expert_lens = [
            len(expert_rollout(task, s, variant=variant, render=False).actions)
            for s in eval_seeds
        ]
        step_cap = max(1, int(4 * sum(expert_lens) / max(len(expert_lens), 1)))
    recurrent = isinstance(model, SlotMemoryPolicy)
    task_idx = torch.tensor([model.task_index[task_id]], dtype=torch.long)
    model.eval()
    successes, completions, steps_taken, overrep = 0, [], [], 0
    for s in eval_seeds:
        state = task.sample_layout(s)
        progress = initial_progress(goal, state)
        carry = None
        gen = torch.Generator().manual_seed(s)
        t = 0
        while t < step_cap and not progress.completed and not progress.failed:
            frame = torch.from_numpy(world.render(state)).permute(2, 0, 1)
            if recurrent:
                out = model.encode_sequence(
                    frame[None, None], carry=carry, generator=gen
                )
                g = _rollout_subgoal_indices(model, goal, state, progress, out["attn"][0, 0])
                logp = model.action_log_probs(
                    out["slots"], out["y"], out["features"], g[None, None], task_idx
                )[0, 0]
                carry = tuple(c.detach() for c in out["carry"])
            else:
                logp = model(frame[None], task_idx)[0]
            action = world.Action(int(torch.argmax(logp)))
            state, _ = world.apply_action(state, action)
            progress = eval_step(progress, goal, state)
            t += 1
        if progress.completed and not progress.failed:
            successes += 1
        if progress.failed:
            overrep += 1
        completions.append(subgoal_completion(progress, goal))
        steps_taken.append(t)
    return TaskEval(
        task_id, variant, n, successes, completions, steps_taken, overrep, step_cap
    )


def eval_report_text(results: list[TaskEval], title: str = "evaluation") -> str:
    lines = [f"# {title}"]
    lines.append("task\tvariant\tn\tsuccess_rate\tmean_completion\tmean_steps\toverrep_failures\tstep_cap")
    for r in results:
        mean_steps = sum(r.steps) / r.n if r.n else 0.0
        lines.append(
            f"{r.task_id}\t{r.variant}\t{r.n}\t{r.success_rate:.3f}"
            f"\t{r.mean_completion:.3f}\t{mean_steps:.1f}\t{r.overrep_failures}\t{r.step_cap}"
        )
    return "\n".join(lines) + "\n"
