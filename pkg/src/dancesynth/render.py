"""Stick-figure SVG rendering for qualitative inspection.

SVG keeps frames textual and diffable in tests and needs no imaging stack.
Views are orthographic: front drops z, side drops x, top drops y.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .posedata import PoseSequence
from .skeleton import BONES

VIEWS = ("front", "side", "top")
CANVAS = 400
MARGIN = 0.1


def _project(frames: np.ndarray, view: str) -> np.ndarray:
    """[T, 17, 2] screen-plane coordinates (y grows downward)."""
    if view == "front":
        pts = frames[:, :, [0, 1]]
        pts[:, :, 1] *= -1
    elif view == "side":
        pts = frames[:, :, [2, 1]]
        pts[:, :, 1] *= -1
    elif view == "top":
        pts = frames[:, :, [0, 2]]
    else:
        raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")
    return pts


def _fit(points: np.ndarray) -> tuple[np.ndarray, float]:
    lo = points.reshape(-1, 2).min(axis=0)
    hi = points.reshape(-1, 2).max(axis=0)
    span = float(max((hi - lo).max(), 1e-6))
    pad = span * MARGIN
    scale = CANVAS / (span + 2 * pad)
    origin = lo - pad
    return origin, scale


def frame_svg(points: np.ndarray, origin: np.ndarray, scale: float,
              index: int, beat: bool) -> str:
    xy = (points - origin) * scale
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" '
        f'height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">'
    ]
    background = "#ffe8e8" if beat else "#ffffff"
    parts.append(f'<rect width="{CANVAS}" height="{CANVAS}" fill="{background}"/>')
    for a, b in BONES:
        parts.append(
            f'<line x1="{xy[a, 0]:.2f}" y1="{xy[a, 1]:.2f}" '
            f'x2="{xy[b, 0]:.2f}" y2="{xy[b, 1]:.2f}" '
            'stroke="#1f3552" stroke-width="3" stroke-linecap="round"/>'
        )
    for x, y in xy:
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="#d64545"/>')
    parts.append(
        f'<text x="8" y="{CANVAS - 10}" font-family="monospace" '
        f'font-size="14" fill="#333">frame {index:05d}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_pose_frames(seq: PoseSequence, out_dir, view: str = "front",
                       beat_frames=None) -> list[Path]:
    """One numbered SVG per frame; beat frames get a tinted background."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    projected = _project(seq.frames.copy(), view)
    origin, scale = _fit(projected)
    beats = set(int(b) for b in beat_frames) if beat_frames is not None else set()
    paths = []
    for t in range(len(seq)):
        path = out_dir / f"frame_{t:05d}.svg"
        path.write_text(frame_svg(projected[t], origin, scale, t, t in beats))
        paths.append(path)
    return paths


def render_beat_overlay(motion_beats, music_beats, n_frames: int, path) -> None:
    """Timeline strip with motion beats (top ticks) vs music beats (bottom)."""
    width, height = 800, 120
    x_of = lambda f: 20 + (width - 40) * (f / max(n_frames - 1, 1))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        f'<line x1="20" y1="60" x2="{width - 20}" y2="60" stroke="#888"/>',
    ]
    for f in motion_beats:
        x = x_of(int(f))
        parts.append(f'<line x1="{x:.1f}" y1="30" x2="{x:.1f}" y2="58" '
                     'stroke="#d64545" stroke-width="2"/>')
    for f in music_beats:
        x = x_of(int(f))
        parts.append(f'<line x1="{x:.1f}" y1="62" x2="{x:.1f}" y2="90" '
                     'stroke="#1f7a4d" stroke-width="2"/>')
    parts.append('<text x="20" y="20" font-family="monospace" font-size="12" '
                 'fill="#d64545">motion beats</text>')
    parts.append(f'<text x="20" y="110" font-family="monospace" font-size="12" '
                 'fill="#1f7a4d">music beats</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
