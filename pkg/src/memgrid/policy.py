"""Goal-conditioned action heads over slot streams.

Two policies share one head architecture:

* ``SlotMemoryPolicy`` — frame encoder -> dual-normalized slot attention with
  temporal carryover -> per-slot selective SSM -> fused slot tokens
  (slot, readout, per-slot subgoal embedding) -> relation encoder -> token
  decoder -> 7 action log-probs.
* ``ReactivePolicy`` — the memoryless control: identical encoder and head,
  deterministic slot init refined from scratch every frame, zero readouts,
  a single learned null subgoal row, and no recurrent state anywhere.  Its
  action distribution is a pure function of the current frame, which is the
  property the aliasing experiments lean on.

The relation encoder turns L learned queries into relation tokens by
cross-attending first over the fused slot tokens and then over the frame's
feature vectors.  The decoder self-attends over [relations, slots,
instruction] without positional encodings (the instruction token carries a
type embedding) and reads the action logits off the instruction position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from . import data as data_mod
from . import tasks as tasks_mod
from .goals import format_subgoal
from .slots import FrameEncoder, SlotAttention, SlotConfig, SlotInit
from .ssm import SlotSSM, SsmConfig, WindowPredictor

__all__ = [
    "ModelConfig",
    "build_subgoal_vocab",
    "SlotFusion",
    "RelationEncoder",
    "ActionDecoder",
    "SlotMemoryPolicy",
    "ReactivePolicy",
    "pool_mask",
    "assign_subgoal_indices",
]

NUM_ACTIONS = 7
NONE_SUBGOAL = "<none>"


def build_subgoal_vocab(task_ids: tuple[str, ...] | None = None) -> tuple[str, ...]:
    """Global subgoal vocabulary: the null row plus every distinct subgoal
    key across the given tasks (all registered tasks by default), in first
    appearance order."""
    out = [NONE_SUBGOAL]
    seen = {NONE_SUBGOAL}
    for tid in task_ids if task_ids is not None else tasks_mod.task_ids():
        task = tasks_mod.get_task(tid)
        for variant in task.variants:
            for sg in data_mod.goal_subgoal_keys(task.goal(variant)):
                key = format_subgoal(sg)
                if key not in seen:
                    seen.add(key)
                    out.append(key)
    return tuple(out)


@dataclass(frozen=True)
class ModelConfig:
    d_enc: int = 64
    d_slot: int = 64
    num_slots: int = 16
    iters_first: int = 3
    iters_later: int = 1
    num_heads: int = 1
    hidden: int = 64
    rank: int = 4
    past: int = 16
    future: int = 16
    predictor_width: int = 128
    num_relations: int = 16
    decoder_layers: int = 2
    ffn_mult: int = 2
    subgoal_vocab: tuple[str, ...] = field(default_factory=build_subgoal_vocab)
    task_vocab: tuple[str, ...] = field(default_factory=lambda: tuple(tasks_mod.task_ids()))

    def slot_config(self) -> SlotConfig:
        return SlotConfig(
            d_enc=self.d_enc,
            d_slot=self.d_slot,
            num_slots=self.num_slots,
            iters_first=self.iters_first,
            iters_later=self.iters_later,
            num_heads=self.num_heads,
        )

    def ssm_config(self) -> SsmConfig:
        return SsmConfig(
            d_slot=self.d_slot,
            hidden=self.hidden,
            rank=self.rank,
            past=self.past,
            future=self.future,
            predictor_width=self.predictor_width,
        )


class SingleHeadAttention(nn.Module):
    """Plain scaled dot-product attention with an output projection."""

    def __init__(self, d_q: int, d_kv: int, d: int):
        super().__init__()
        self.to_q = nn.Linear(d_q, d, bias=False)
        self.to_k = nn.Linear(d_kv, d, bias=False)
        self.to_v = nn.Linear(d_kv, d, bias=False)
        self.out = nn.Linear(d, d)
        self.scale = d ** -0.5

    def forward(self, q_in: Tensor, kv: Tensor) -> tuple[Tensor, Tensor]:
        q, k, v = self.to_q(q_in), self.to_k(kv), self.to_v(kv)
        weights = torch.softmax(q @ k.transpose(-1, -2) * self.scale, dim=-1)
        return self.out(weights @ v), weights


class SlotFusion(nn.Module):
    """MLP merging (slot, readout, subgoal embedding) into one token per slot."""

    def __init__(self, d_slot: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(3 * d_slot, d_slot), nn.ReLU(), nn.Linear(d_slot, d_slot)
        )

    def forward(self, slots: Tensor, readout: Tensor, subgoal: Tensor) -> Tensor:
        return self.net(torch.cat([slots, readout, subgoal], dim=-1))


class RelationEncoder(nn.Module):
    """L learned queries -> cross-attention over slot tokens -> cross-attention
    over frame features, each with a residual and layer norm."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_slot
        self.queries = nn.Parameter(torch.randn(cfg.num_relations, d) / math.sqrt(d))
        self.attn_slots = SingleHeadAttention(d, d, d)
        self.attn_feats = SingleHeadAttention(d, cfg.d_enc, d)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)

    def forward(self, slot_tokens: Tensor, features: Tensor) -> Tensor:
        q = self.queries.expand(slot_tokens.shape[0], -1, -1)
        x, self.last_slot_weights = self.attn_slots(q, slot_tokens)
        x = self.norm1(q + x)
        y, self.last_feat_weights = self.attn_feats(x, features)
        return self.norm2(x + y)


class DecoderBlock(nn.Module):
    def __init__(self, d: int, ffn_mult: int):
        super().__init__()
        self.attn = SingleHeadAttention(d, d, d)
        self.norm1 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(
            nn.Linear(d, ffn_mult * d), nn.ReLU(), nn.Linear(ffn_mult * d, d)
        )
        self.norm2 = nn.LayerNorm(d)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x, x)[0])
        return self.norm2(x + self.ffn(x))


class ActionDecoder(nn.Module):
    """Self-attention over [relation, slot, instruction] tokens; the logits
    are read off the instruction position.  No positional encodings — only
    the instruction token is marked, by a learned type embedding."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_slot
        self.instruction_type = nn.Parameter(torch.zeros(d))
        self.blocks = nn.ModuleList(
            DecoderBlock(d, cfg.ffn_mult) for _ in range(cfg.decoder_layers)
        )
        self.head = nn.Linear(d, NUM_ACTIONS)

    def forward(self, relations: Tensor, slot_tokens: Tensor, instruction: Tensor) -> Tensor:
        l_tok = (instruction + self.instruction_type)[:, None]
        x = torch.cat([relations, slot_tokens, l_tok], dim=1)
        for block in self.blocks:
            x = block(x)
        return F.log_softmax(self.head(x[:, -1]), dim=-1)


class _HeadMixin:
    """Shared fused-tokens -> log-probs path for both policies."""

    def _head(self, slots: Tensor, readout: Tensor, subgoal_emb: Tensor,
              features: Tensor, task_idx: Tensor) -> Tensor:
        tokens = self.fusion(slots, readout, subgoal_emb)
        relations = self.relation(tokens, features)
        return self.decoder(relations, tokens, self.task_embed(task_idx))


class SlotMemoryPolicy(nn.Module, _HeadMixin):
    """Recurrent slot policy: carryover slot attention + per-slot SSM + head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        scfg = cfg.slot_config()
        self.encoder = FrameEncoder(scfg)
        self.attention = SlotAttention(scfg)
        self.slot_init = SlotInit(scfg)
        self.ssm = SlotSSM(cfg.ssm_config())
        self.window = WindowPredictor(cfg.ssm_config())
        self.fusion = SlotFusion(cfg.d_slot)
        self.relation = RelationEncoder(cfg)
        self.decoder = ActionDecoder(cfg)
        self.subgoal_embed = nn.Embedding(len(cfg.subgoal_vocab), cfg.d_slot)
        self.task_embed = nn.Embedding(len(cfg.task_vocab), cfg.d_slot)
        self.subgoal_index = {k: i for i, k in enumerate(cfg.subgoal_vocab)}
        self.task_index = {k: i for i, k in enumerate(cfg.task_vocab)}

    def encode_sequence(
        self,
        frames: Tensor,
        carry: tuple[Tensor, Tensor] | None = None,
        fresh: Tensor | None = None,
        generator: torch.Generator | None = None,
        deterministic_init: bool = False,
    ) -> dict[str, Tensor]:
        """Run encoder + slot attention + SSM over (B,T,3,H,W) frames.

        ``carry`` is (slots (B,K,D), hidden (B,K,H)) from the previous chunk;
        ``fresh`` (B,) marks rows whose episode starts at t=0 of this chunk
        (those draw init slots and use the from-scratch iteration count).
        With ``carry=None`` every row is fresh.
        """
        B, T = frames.shape[:2]
        K = self.cfg.num_slots
        if carry is None:
            carry_slots = self.slot_init(B, K, generator=generator,
                                         deterministic=deterministic_init)
            carry_hidden = frames.new_zeros(B, K, self.cfg.hidden)
            fresh = torch.ones(B, dtype=torch.bool)
        else:
            carry_slots, carry_hidden = carry
            if fresh is None:
                fresh = torch.zeros(B, dtype=torch.bool)
            if fresh.any():
                draw = self.slot_init(B, K, generator=generator,
                                      deterministic=deterministic_init)
                carry_slots = torch.where(fresh[:, None, None], draw, carry_slots)
                carry_hidden = torch.where(
                    fresh[:, None, None], torch.zeros_like(carry_hidden), carry_hidden
                )
        slots_t = carry_slots
        all_slots, all_attn, all_feats = [], [], []
        for t in range(T):
            feats = self.encoder(frames[:, t])
            if t == 0 and fresh.any() and not fresh.all():
                idx_f, idx_c = fresh.nonzero(as_tuple=True)[0], (~fresh).nonzero(as_tuple=True)[0]
                sf, af = self.attention(feats[idx_f], slots_t[idx_f], self.cfg.iters_first)
                sc, ac = self.attention(feats[idx_c], slots_t[idx_c], self.cfg.iters_later)
                slots_t = torch.empty_like(slots_t)
                attn_t = feats.new_empty(B, K, feats.shape[1])
                slots_t = slots_t.index_copy(0, idx_f, sf).index_copy(0, idx_c, sc)
                attn_t = attn_t.index_copy(0, idx_f, af).index_copy(0, idx_c, ac)
            else:
                iters = self.cfg.iters_first if (t == 0 and fresh.all()) else self.cfg.iters_later
                slots_t, attn_t = self.attention(feats, slots_t, iters)
            all_slots.append(slots_t)
            all_attn.append(attn_t)
            all_feats.append(feats)
        slots = torch.stack(all_slots, dim=1)
        y, h_last = self.ssm(slots, carry_hidden)
        return {
            "slots": slots,
            "attn": torch.stack(all_attn, dim=1),
            "features": torch.stack(all_feats, dim=1),
            "y": y,
            "carry": (slots[:, -1], h_last),
        }

    def action_log_probs(
        self, slots: Tensor, y: Tensor, features: Tensor, g_idx: Tensor, task_idx: Tensor
    ) -> Tensor:
        """Head pass over a (B,T,...) encoded sequence -> (B,T,7) log-probs.

        ``g_idx`` (B,T,K) indexes the subgoal vocabulary per slot;
        ``task_idx`` is (B,).
        """
        B, T, K, D = slots.shape
        flat = lambda x: x.reshape(B * T, *x.shape[2:])
        g_emb = self.subgoal_embed(flat(g_idx))
        task_rep = task_idx[:, None].expand(B, T).reshape(B * T)
        logp = self._head(flat(slots), flat(y), g_emb, flat(features), task_rep)
        return logp.view(B, T, -1)

    def predict_windows(self, y: Tensor, slots: Tensor) -> Tensor:
        return self.window(y, slots)

    @torch.no_grad()
    def act(
        self,
        frame: Tensor,
        task_idx: int,
        carry: tuple[Tensor, Tensor] | None,
        g_idx: Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> tuple[Tensor, tuple[Tensor, Tensor], dict[str, Tensor]]:
        """Single-frame step for rollouts.  Returns (log_probs (7,), carry, aux).

        When ``g_idx`` is None the caller gets ``aux['attn']`` from a first
        pass and may re-enter with the assigned indices; here the head simply
        runs with the null subgoal everywhere.
        """
        out = self.encode_sequence(frame[None, None], carry=carry, generator=generator)
        if g_idx is None:
            g_idx = torch.zeros(1, 1, self.cfg.num_slots, dtype=torch.long)
        logp = self.action_log_probs(
            out["slots"], out["y"], out["features"], g_idx,
            torch.tensor([task_idx], dtype=torch.long),
        )
        aux = {"attn": out["attn"][0, 0], "slots": out["slots"][0, 0]}
        return logp[0, 0], out["carry"], aux


class ReactivePolicy(nn.Module, _HeadMixin):
    """Memoryless control: per-frame slots from a deterministic init, no SSM
    readout (zeros), one learned null subgoal row, same fusion/relation/decoder
    stack.  The output distribution depends on the current frame and task id
    only."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        scfg = cfg.slot_config()
        self.encoder = FrameEncoder(scfg)
        self.attention = SlotAttention(scfg)
        self.slot_init = SlotInit(scfg)
        self.fusion = SlotFusion(cfg.d_slot)
        self.relation = RelationEncoder(cfg)
        self.decoder = ActionDecoder(cfg)
        self.subgoal_embed = nn.Embedding(1, cfg.d_slot)
        self.task_embed = nn.Embedding(len(cfg.task_vocab), cfg.d_slot)
        self.task_index = {k: i for i, k in enumerate(cfg.task_vocab)}

    def forward(self, frames: Tensor, task_idx: Tensor) -> Tensor:
        """(B,3,H,W), (B,) -> (B,7) log-probs, frame-wise deterministic."""
        B = frames.shape[0]
        K = self.cfg.num_slots
        feats = self.encoder(frames)
        init = self.slot_init(B, K, deterministic=True)
        slots, self.last_attn = self.attention(feats, init, self.cfg.iters_first)
        g_emb = self.subgoal_embed(torch.zeros(B, K, dtype=torch.long))
        return self._head(slots, torch.zeros_like(slots), g_emb, feats, task_idx)


def pool_mask(mask: Tensor, cell: int = 8) -> Tensor:
    """Mean-pool a (..., H, W) pixel mask to flat per-cell coverage (..., M)."""
    *lead, H, W = mask.shape
    m = mask.reshape(*lead, H // cell, cell, W // cell, cell)
    return m.float().mean(dim=(-3, -1)).reshape(*lead, (H // cell) * (W // cell))


def assign_subgoal_indices(
    attn: Tensor,
    cell_masks: Tensor,
    next_idx: Tensor,
    priority: Tensor | None = None,
) -> Tensor:
    """Route per-object pending-subgoal labels onto slots by attention overlap.

    ``attn`` (K,M) row-normalized slot->feature weights; ``cell_masks`` (n,M)
    per-object cell coverage (callers substitute the gripper's mask for
    held/contained objects whose own pixels are hidden); ``next_idx`` (n,)
    global-vocabulary indices with -1 meaning no pending subgoal.  When two
    objects land on one slot the lower ``priority`` value wins (defaults to
    ``next_idx`` itself, i.e. earlier subgoals win).  Returns (K,) indices
    into the subgoal vocabulary, 0 (the null row) where nothing landed.
    """
    K = attn.shape[0]
    out = torch.zeros(K, dtype=torch.long)
    if priority is None:
        priority = next_idx
    order = torch.argsort(priority, descending=True)
    for o in order.tolist():
        if next_idx[o] < 0 or cell_masks[o].sum() == 0:
            continue
        slot = int(torch.argmax(attn @ cell_masks[o]))
        out[slot] = int(next_idx[o])
    return out
