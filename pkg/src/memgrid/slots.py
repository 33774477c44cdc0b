"""Frame encoder, dual-normalized slot attention, and the temporal
contrastive objective over slot tracks.

The attention update follows the inverted-competition scheme verbatim:
logits ``a[i,j] = q_i . k_j / sqrt(D_enc)`` are softmaxed over *slots* per
feature, renormalized over *features* per slot, used to aggregate values,
and each slot is refreshed by a shared GRU cell.  No layer norms or residual
MLPs — the bare equations are the contract, and an independent
re-implementation must match to 1e-6.

Slot carryover: at the first frame slots are drawn from a learned diagonal
Gaussian (mean/log-variance shared across slots); afterwards the previous
frame's final slots are the init, refined with fewer iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

__all__ = [
    "SlotConfig",
    "FrameEncoder",
    "SlotAttention",
    "SlotInit",
    "init_slots",
    "contrastive_loss",
]


@dataclass(frozen=True)
class SlotConfig:
    d_enc: int = 64
    d_slot: int = 64
    num_slots: int = 16
    iters_first: int = 3
    iters_later: int = 1
    num_heads: int = 1
    grid: int = 8  # feature map is grid x grid
    cell: int = 8  # conv patch/stride in pixels


class FrameEncoder(nn.Module):
    """Per-cell bias-free MLP over pixel patches plus a learned position map.

    Stride equals the sprite size, so the features are translation-covariant
    at cell granularity and a zero frame encodes to exactly the position map.
    """

    def __init__(self, cfg: SlotConfig):
        super().__init__()
        self.cfg = cfg
        self.conv1 = nn.Conv2d(3, cfg.d_enc, cfg.cell, stride=cfg.cell, bias=False)
        self.conv2 = nn.Conv2d(cfg.d_enc, cfg.d_enc, 1, bias=False)
        self.pos = nn.Parameter(torch.randn(1, cfg.d_enc, cfg.grid, cfg.grid) * 0.1)

    def forward(self, frames: Tensor) -> Tensor:
        """(B, 3, H, W) pixels in [0,1] -> (B, M, d_enc), M = grid**2."""
        x = self.conv2(F.relu(self.conv1(frames))) + self.pos
        return x.flatten(2).transpose(1, 2)


class SlotAttention(nn.Module):
    """One dual-normalized competitive attention block with a GRU update."""

    def __init__(self, cfg: SlotConfig):
        super().__init__()
        if cfg.d_slot % cfg.num_heads:
            raise ValueError("d_slot must divide into heads")
        self.cfg = cfg
        self.scale = cfg.d_enc ** -0.5
        self.to_q = nn.Linear(cfg.d_slot, cfg.d_slot, bias=False)
        self.to_k = nn.Linear(cfg.d_enc, cfg.d_slot, bias=False)
        self.to_v = nn.Linear(cfg.d_enc, cfg.d_slot, bias=False)
        self.gru = nn.GRUCell(cfg.d_slot, cfg.d_slot)

    def forward(self, features: Tensor, slots: Tensor, iters: int) -> tuple[Tensor, Tensor]:
        """Refine ``slots`` (B,K,D) against ``features`` (B,M,D_enc).

        Returns the refined slots and the final feature weights ``w``
        (B,K,M; rows sum to 1), head-averaged.  ``iters=0`` returns the
        inputs untouched — the carryover identity path.
        """
        B, K, D = slots.shape
        h = self.cfg.num_heads
        k = self.to_k(features).view(B, -1, h, D // h).transpose(1, 2)
        v = self.to_v(features).view(B, -1, h, D // h).transpose(1, 2)
        attn = self._weights(slots, k)
        for _ in range(iters):
            u = (attn @ v).transpose(1, 2).reshape(B, K, D)
            slots = self.gru(u.reshape(B * K, D), slots.reshape(B * K, D)).view(B, K, D)
            attn = self._weights(slots, k)
        return slots, attn.mean(dim=1)

    def _weights(self, slots: Tensor, k: Tensor) -> Tensor:
        B, K, D = slots.shape
        h = self.cfg.num_heads
        q = self.to_q(slots).view(B, K, h, D // h).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) * self.scale  # (B, h, K, M)
        a = _softmax_slots(logits)  # compete over slots, per feature
        return a / a.sum(dim=-1, keepdim=True)  # renormalize over features


def _softmax_slots(logits: Tensor) -> Tensor:
    """Softmax over the slot axis (dim -2) with an order-canonical normalizer.

    The denominator is accumulated over *sorted* exponentials, so reordering
    slots permutes the output bitwise-exactly instead of merely to rounding:
    max and elementwise exp are order-invariant, and the sorted sum makes the
    one cross-slot reduction order-invariant too.
    """
    z = (logits - logits.amax(dim=-2, keepdim=True)).exp()
    denom = z.sort(dim=-2).values.sum(dim=-2, keepdim=True)
    return z / denom


class SlotInit(nn.Module):
    """Learned diagonal Gaussian, one (mean, log-variance) shared by all slots.

    ``deterministic=True`` substitutes a fixed draw (a frozen buffer) for the
    per-call noise.  Using the bare mean instead would start every slot at the
    same point, and the permutation-equivariant attention would then update
    all of them identically forever — distinct noise is what breaks the
    symmetry, so the reproducible path keeps a distinct (but constant) draw
    per slot.
    """

    def __init__(self, cfg: SlotConfig):
        super().__init__()
        self.mu = nn.Parameter(torch.zeros(cfg.d_slot))
        self.log_sigma = nn.Parameter(torch.zeros(cfg.d_slot))
        fixed = torch.randn(
            cfg.num_slots, cfg.d_slot, generator=torch.Generator().manual_seed(0)
        )
        self.fixed_eps: Tensor
        self.register_buffer("fixed_eps", fixed)

    def forward(
        self,
        batch: int,
        num_slots: int,
        generator: torch.Generator | None = None,
        deterministic: bool = False,
    ) -> Tensor:
        if deterministic:
            if num_slots > self.fixed_eps.shape[0]:
                raise ValueError("more slots requested than the fixed draw holds")
            eps = self.fixed_eps[:num_slots].expand(batch, num_slots, -1)
        else:
            eps = torch.randn(batch, num_slots, self.mu.shape[0], generator=generator)
        return self.mu + self.log_sigma.exp() * eps.to(self.mu.dtype)


def init_slots(
    prev: Tensor | None,
    init: SlotInit,
    batch: int,
    num_slots: int,
    generator: torch.Generator | None = None,
    deterministic: bool = False,
) -> Tensor:
    """Carryover rule: previous frame's slots verbatim, else a seeded draw."""
    if prev is not None:
        return prev
    return init(batch, num_slots, generator=generator, deterministic=deterministic)


def contrastive_loss(
    tracks: Tensor | list[Tensor],
    delta_max: int = 4,
    temperature: float = 1.0,
) -> Tensor:
    """Temporal slot-track contrastive objective.

    ``tracks`` is (B,T,K,D) or a list of per-sequence (T_i,K,D) tensors.
    For an anchor (sequence b, time t, slot i): positives are the same slot
    of the same sequence at offsets ``1 <= |dt| <= delta_max``; negatives are
    every other-slot vector of the same sequence and every vector of every
    other sequence.  Same-slot vectors beyond ``delta_max`` are neither.
    Similarity is cosine over ``temperature``; each anchor contributes
    ``-log(pos_mass / (pos_mass + neg_mass))`` and anchors without positives
    (sequence too short) are skipped.  Returns the mean over anchors.
    """
    if isinstance(tracks, Tensor):
        tracks = [tracks[b] for b in range(tracks.shape[0])]
    vecs, seq_id, t_id, slot_id = [], [], [], []
    for b, tr in enumerate(tracks):
        T, K, D = tr.shape
        vecs.append(tr.reshape(T * K, D))
        grid_t, grid_k = torch.meshgrid(torch.arange(T), torch.arange(K), indexing="ij")
        t_id.append(grid_t.reshape(-1))
        slot_id.append(grid_k.reshape(-1))
        seq_id.append(torch.full((T * K,), b))
    x = F.normalize(torch.cat(vecs), dim=-1)
    seq = torch.cat(seq_id)
    t = torch.cat(t_id)
    slot = torch.cat(slot_id)

    sim = (x @ x.T) / temperature
    same_seq = seq[:, None] == seq[None, :]
    same_slot = slot[:, None] == slot[None, :]
    dt = (t[:, None] - t[None, :]).abs()
    pos = same_seq & same_slot & (dt >= 1) & (dt <= delta_max)
    neg = ~same_seq | (same_seq & ~same_slot)

    has_pos = pos.any(dim=1)
    if not bool(has_pos.any()):
        raise ValueError("no anchor has a positive; sequences too short")
    neg_inf = torch.finfo(sim.dtype).min
    pos_mass = sim.masked_fill(~pos, neg_inf).logsumexp(dim=1)
    all_mass = sim.masked_fill(~(pos | neg), neg_inf).logsumexp(dim=1)
    return (all_mass - pos_mass)[has_pos].mean()
