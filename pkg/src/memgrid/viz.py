"""Slot-attention visualizations: per-slot heat overlays and threshold boxes.

Attention rows live on the encoder's cell grid; they are upsampled
nearest-neighbor to pixel resolution, alpha-blended over the frame, and a
bounding box is drawn around the cells whose weight reaches half of the
slot's maximum.  Output is plain PNG via PIL, deterministic for fixed inputs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "attention_bbox",
    "attention_overlay",
    "slot_panel_image",
    "save_slot_panels",
]

_GRID = 8
_CELL = 8
_BOX_COLOR = np.array([1.0, 0.1, 0.1], dtype=np.float32)
_HEAT_COLOR = np.array([0.1, 1.0, 0.2], dtype=np.float32)


def attention_bbox(attn_row: np.ndarray, threshold: float = 0.5) -> tuple[int, int, int, int] | None:
    """Cell-space (r0, c0, r1, c1) box (inclusive) around cells whose weight
    is at least ``threshold`` times the row maximum; None for an all-zero row."""
    grid = np.asarray(attn_row, dtype=np.float64).reshape(_GRID, _GRID)
    peak = grid.max()
    if peak <= 0:
        return None
    rows, cols = np.nonzero(grid >= threshold * peak)
    return int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())


def attention_overlay(frame: np.ndarray, attn_row: np.ndarray, alpha: float = 0.6) -> np.ndarray:
    """Blend one slot's attention over a (64,64,3) float frame; returns float32."""
    grid = np.asarray(attn_row, dtype=np.float32).reshape(_GRID, _GRID)
    peak = grid.max()
    heat = grid / peak if peak > 0 else grid
    heat = np.kron(heat, np.ones((_CELL, _CELL), dtype=np.float32))
    out = frame.astype(np.float32).copy()
    out = out * (1 - alpha * heat[..., None]) + _HEAT_COLOR * (alpha * heat[..., None])
    box = attention_bbox(attn_row)
    if box is not None:
        r0, c0, r1, c1 = box
        y0, y1 = r0 * _CELL, (r1 + 1) * _CELL - 1
        x0, x1 = c0 * _CELL, (c1 + 1) * _CELL - 1
        out[y0, x0 : x1 + 1] = _BOX_COLOR
        out[y1, x0 : x1 + 1] = _BOX_COLOR
        out[y0 : y1 + 1, x0] = _BOX_COLOR
        out[y0 : y1 + 1, x1] = _BOX_COLOR
    return np.clip(out, 0.0, 1.0)


def slot_panel_image(frame: np.ndarray, attn: np.ndarray, pad: int = 2) -> np.ndarray:
    """Tile the raw frame plus one overlay per slot horizontally -> uint8 image."""
    panels = [frame.astype(np.float32)]
    panels += [attention_overlay(frame, row) for row in np.asarray(attn)]
    H = panels[0].shape[0]
    strip = np.ones((H, 0, 3), dtype=np.float32)
    spacer = np.ones((H, pad, 3), dtype=np.float32)
    for i, panel in enumerate(panels):
        strip = np.concatenate([strip, panel] if i == 0 else [strip, spacer, panel], axis=1)
    return (strip * 255).round().astype(np.uint8)


def save_slot_panels(path: str | Path, frame: np.ndarray, attn: np.ndarray) -> Path:
    """Write the tiled panel image as a PNG and return the path."""
    path = Path(path)
    Image.fromarray(slot_panel_image(frame, attn)).save(path, format="PNG")
    return path
