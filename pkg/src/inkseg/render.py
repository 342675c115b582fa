"""SVG rendering of segmented ink."""
from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .ink import NONE, Ink

PALETTE = (
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4",
    "#f032e6", "#9a6324", "#808000", "#000075", "#469990", "#800000",
)
NONE_COLOR = "#a0a0a0"


def slot_color(slot: int) -> str:
    return NONE_COLOR if slot == NONE else PALETTE[slot % len(PALETTE)]


def _runs(seg: np.ndarray):
    """Yield ``(start, stop, value)`` for maximal runs of equal values."""
    start = 0
    for i in range(1, len(seg) + 1):
        if i == len(seg) or seg[i] != seg[start]:
            yield start, i, int(seg[start])
            start = i


def render_svg(ink: Ink, seg, width: float = 800.0, stroke_width: float = 2.0) -> bytes:
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape != (ink.num_points,):
        raise ValidationError(f"segmentation length {seg.shape[0]} != point count {ink.num_points}")
    pts = ink.points()
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    scale = (width - 20.0) / span
    size = (hi - lo) * scale + 20.0
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size[0]:.1f}" '
        f'height="{size[1]:.1f}" viewBox="0 0 {size[0]:.1f} {size[1]:.1f}">',
        f'<g fill="none" stroke-width="{stroke_width:g}" stroke-linecap="round" stroke-linejoin="round">',
    ]
    offset = 0
    for stroke in ink.strokes:
        n = stroke.shape[0]
        xy = (stroke - lo) * scale + 10.0
        for a, b, slot in _runs(seg[offset:offset + n]):
            coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in xy[a:b])
            lines.append(f'<polyline stroke="{slot_color(slot)}" points="{coords}"/>')
        offset += n
    lines += ["</g>", "</svg>", ""]
    return "\n".join(lines).encode("utf-8")
