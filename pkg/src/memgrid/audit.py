"""Dataset audits: perceptual aliasing and decoder token accounting.

A frame pair *aliases* when its RMS pixel distance is within ``eps``; the
pair is a *violation* when the recorded actions differ — evidence that no
memoryless policy can fit the data.  Renders in this world are flat sprites,
so distinct states differ by whole sprite regions (RMS >= ~0.05) while
repeated states are bit-identical; duplicate grouping by frame bytes
therefore finds every pair within any eps below that gap, without an O(n^2)
scan.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import Episode

__all__ = [
    "AliasReport",
    "find_aliased_pairs",
    "aliasing_report_text",
    "concat_token_cost",
    "recurrent_token_cost",
    "token_table",
    "token_report_text",
]


@dataclass(frozen=True)
class AliasReport:
    eps: float
    frames_scanned: int
    aliased_pairs: int
    action_violations: int
    min_violation_distance: float | None
    example: tuple[tuple[int, int], tuple[int, int]] | None  # ((ep, t), (ep, t))

    @property
    def has_violation(self) -> bool:
        return self.action_violations > 0


def _frame_action_stream(episodes: Sequence[Episode]):
    """Yield (episode_idx, t, frame_bytes, action) over decision points.

    The terminal frame has no action and is skipped.
    """
    for e, ep in enumerate(episodes):
        for t in range(ep.length):
            yield e, t, ep.frames[t].tobytes(), int(ep.actions[t])


def find_aliased_pairs(episodes: Sequence[Episode], eps: float = 1e-3) -> AliasReport:
    """Count aliased frame pairs (RMS distance <= eps) and action violations.

    Pair counts are exact for bit-identical frames; see the module docstring
    for why that is exhaustive at the thresholds this world supports.
    """
    groups: dict[bytes, list[tuple[int, int, int]]] = defaultdict(list)
    n = 0
    for e, t, key, a in _frame_action_stream(episodes):
        groups[key].append((e, t, a))
        n += 1

    aliased = 0
    violations = 0
    example = None
    for members in groups.values():
        m = len(members)
        if m < 2:
            continue
        aliased += m * (m - 1) // 2
        counts: dict[int, int] = defaultdict(int)
        for _, _, a in members:
            counts[a] += 1
        same = sum(c * (c - 1) // 2 for c in counts.values())
        diff = m * (m - 1) // 2 - same
        violations += diff
        if diff and example is None:
            by_action: dict[int, tuple[int, int]] = {}
            for e, t, a in members:
                by_action.setdefault(a, (e, t))
                if len(by_action) > 1:
                    break
            (a1, p1), (a2, p2) = list(by_action.items())[:2]
            example = (p1, p2)
    min_dist = 0.0 if violations else None
    return AliasReport(eps, n, aliased, violations, min_dist, example)


def frame_distance(a: np.ndarray, b: np.ndarray) -> float:
    """RMS distance between two frames in [0,1] units (uint8 accepted)."""
    fa = a.astype(np.float64) / (255.0 if a.dtype == np.uint8 else 1.0)
    fb = b.astype(np.float64) / (255.0 if b.dtype == np.uint8 else 1.0)
    return float(np.sqrt(np.mean((fa - fb) ** 2)))


def aliasing_report_text(report: AliasReport, label: str = "") -> str:
    lines = [f"# aliasing audit {label}".rstrip()]
    lines.append(f"eps\t{report.eps:g}")
    lines.append(f"frames\t{report.frames_scanned}")
    lines.append(f"aliased_pairs\t{report.aliased_pairs}")
    lines.append(f"action_violations\t{report.action_violations}")
    if report.min_violation_distance is not None:
        lines.append(f"min_violation_distance\t{report.min_violation_distance:g}")
    if report.example is not None:
        (e1, t1), (e2, t2) = report.example
        lines.append(f"example\tep{e1}[t={t1}] vs ep{e2}[t={t2}]")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# token accounting


def concat_token_cost(horizon: int, tokens_per_frame: int) -> int:
    """Decoder tokens when h past frames are concatenated into the context."""
    if horizon < 1 or tokens_per_frame < 1:
        raise ValueError("horizon and tokens_per_frame must be >= 1")
    return horizon * tokens_per_frame


def recurrent_token_cost(num_slots: int = 16, num_relation_tokens: int = 16) -> int:
    """Decoder tokens for the recurrent slot path: K slots + L relation
    tokens, independent of how much history the hidden state summarizes."""
    return num_slots + num_relation_tokens


def token_table(num_slots: int = 16, num_relation_tokens: int = 16) -> list[dict]:
    """The four standard accounting rows: frame-concat costs grow with the
    horizon, the recurrent slot path stays constant."""
    rows = [
        {"model": "slot-concat", "horizon": 1, "per_frame": 16, "tokens": concat_token_cost(1, 16)},
        {"model": "slot-concat", "horizon": 8, "per_frame": 16, "tokens": concat_token_cost(8, 16)},
        {"model": "dense-concat", "horizon": 1, "per_frame": 256, "tokens": concat_token_cost(1, 256)},
        {
            "model": "slot-recurrent",
            "horizon": None,
            "per_frame": None,
            "tokens": recurrent_token_cost(num_slots, num_relation_tokens),
        },
    ]
    return rows


def token_report_text(rows: Iterable[dict] | None = None) -> str:
    rows = list(rows) if rows is not None else token_table()
    lines = ["model\thorizon\tper_frame\tdecoder_tokens"]
    for r in rows:
        h = "-" if r["horizon"] is None else str(r["horizon"])
        pf = "-" if r["per_frame"] is None else str(r["per_frame"])
        lines.append(f"{r['model']}\t{h}\t{pf}\t{r['tokens']}")
    lines.append("")
    lines.append("# recurrent path cost vs history length (constant)")
    for h in (1, 8, 64, 512):
        lines.append(f"slot-recurrent\t{h}\t-\t{recurrent_token_cost()}")
    return "\n".join(lines) + "\n"
