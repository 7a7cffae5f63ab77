"""Dependency-free SVG rendering of trajectories, strokes colored by k-space speed."""
from __future__ import annotations

import numpy as np

from .kinematics import HardwareSpec, Trajectory


def _color(frac: float) -> str:
    # blue (slow) -> red (at the gradient limit); anything above the limit is black
    if frac > 1.0 + 1e-9:
        return "#000000"
    f = min(max(frac, 0.0), 1.0)
    r, g, b = int(255 * f), int(80 * (1 - abs(2 * f - 1))), int(255 * (1 - f))
    return f"#{r:02x}{g:02x}{b:02x}"


def render_svg(traj: Trajectory, spec: HardwareSpec | None = None, size: int = 512, points: bool = False,
               bins: int = 16, title: str | None = None) -> str:
    """SVG text.  ``points=True`` draws an unordered point cloud instead of strokes."""
    n = traj.n
    spec = spec or HardwareSpec(n=n)
    pad = 10
    scale = (size - 2 * pad) / n

    def xy(p):
        return pad + (p[..., 0] + n / 2) * scale, pad + (n / 2 - p[..., 1]) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="#ffffff"/>',
        f'<rect x="{pad}" y="{pad}" width="{size - 2 * pad}" height="{size - 2 * pad}" fill="none" stroke="#cccccc"/>',
    ]
    if title:
        out.append(f'<title>{title}</title>')
    for shot in traj.coords:
        x, y = xy(shot)
        if points or len(shot) < 2:
            out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="1.2" fill="#1f4e9c"/>' for a, b in zip(x, y)]
            continue
        speed = np.linalg.norm(np.diff(shot, axis=0), axis=1) / spec.v_max_grid
        level = np.where(speed > 1.0 + 1e-9, bins, np.minimum((speed * bins).astype(int), bins - 1))
        start = 0
        for i in range(1, len(level) + 1):
            if i == len(level) or level[i] != level[start]:
                pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x[start : i + 1], y[start : i + 1]))
                frac = 1.01 if level[start] == bins else (level[start] + 0.5) / bins
                out.append(f'<polyline points="{pts}" fill="none" stroke="{_color(frac)}" stroke-width="1"/>')
                start = i
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_svg(path, traj: Trajectory, spec: HardwareSpec | None = None, **kw):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_svg(traj, spec, **kw))
    return path
