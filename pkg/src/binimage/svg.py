"""Hand-rolled SVG emission for scatter and loss-curve plots.

Output is a plain function of the inputs: fixed palette, fixed float
formatting, no timestamps, so rerunning a command reproduces the figure
byte-for-byte.
"""

from __future__ import annotations

import numpy as np

from .errors import BadSpec

PALETTE = [
    "#4C72B0",
    "#DD8452",
    "#55A868",
    "#C44E52",
    "#8172B3",
    "#937860",
    "#DA8BC3",
    "#8C8C8C",
    "#CCB974",
    "#64B5CD",
]

WIDTH = 720
HEIGHT = 540
MARGIN = 60


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _axis_range(values: np.ndarray) -> tuple[float, float]:
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        lo -= 1.0
        hi += 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _scale(values: np.ndarray, lo: float, hi: float, out_lo: float, out_hi: float) -> np.ndarray:
    return out_lo + (values - lo) / (hi - lo) * (out_hi - out_lo)


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="26" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">{title}</text>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" '
        f'height="{HEIGHT - 2 * MARGIN}" fill="none" stroke="#333333"/>',
    ]


def scatter_svg(
    xy: np.ndarray,
    family_ids: np.ndarray,
    family_names: list[str] | None = None,
    title: str = "Embedding projection",
) -> str:
    """Scatter plot of (n, 2) points colored by family id."""
    xy = np.asarray(xy, dtype=np.float64)
    if xy.ndim != 2 or xy.shape[1] != 2 or xy.shape[0] == 0:
        raise BadSpec(f"scatter needs a nonempty (n, 2) array, got {xy.shape}")
    family_ids = np.asarray(family_ids)
    x_lo, x_hi = _axis_range(xy[:, 0])
    y_lo, y_hi = _axis_range(xy[:, 1])
    px = _scale(xy[:, 0], x_lo, x_hi, MARGIN, WIDTH - MARGIN)
    py = _scale(xy[:, 1], y_lo, y_hi, HEIGHT - MARGIN, MARGIN)  # y grows upward

    parts = _header(title)
    for (x, y), fid in zip(zip(px, py), family_ids):
        color = PALETTE[int(fid) % len(PALETTE)]
        parts.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="3" fill="{color}" fill-opacity="0.75"/>')

    for k, fid in enumerate(np.unique(family_ids)):
        color = PALETTE[int(fid) % len(PALETTE)]
        label = family_names[int(fid)] if family_names else f"family {int(fid)}"
        ly = MARGIN + 14 + 16 * k
        parts.append(f'<circle cx="{WIDTH - MARGIN - 120}" cy="{ly - 4}" r="4" fill="{color}"/>')
        parts.append(
            f'<text x="{WIDTH - MARGIN - 110}" y="{ly}" font-family="sans-serif" '
            f'font-size="11">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def loss_curves_svg(
    series: list[tuple[str, list[int], list[float]]],
    title: str = "Training loss",
    log_y: bool = True,
) -> str:
    """Overlayed loss curves: one (label, steps, values) polyline per run."""
    if not series:
        raise BadSpec("loss plot needs at least one series")
    for label, steps, values in series:
        if len(steps) != len(values) or not steps:
            raise BadSpec(f"series {label!r} needs equal-length nonempty steps/values")

    all_steps = np.concatenate([np.asarray(s, dtype=np.float64) for _, s, _ in series])
    raw = np.concatenate([np.asarray(v, dtype=np.float64) for _, _, v in series])
    if log_y:
        floor = max(raw[raw > 0].min() if (raw > 0).any() else 1e-12, 1e-12)
        transform = lambda a: np.log10(np.maximum(np.asarray(a, dtype=np.float64), floor))
    else:
        transform = lambda a: np.asarray(a, dtype=np.float64)
    all_vals = transform(raw)

    x_lo, x_hi = _axis_range(all_steps)
    y_lo, y_hi = _axis_range(all_vals)

    parts = _header(title)
    parts.append(
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 18}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">step</text>'
    )
    ylabel = "log10(loss)" if log_y else "loss"
    parts.append(
        f'<text x="18" y="{HEIGHT // 2}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 18 {HEIGHT // 2})">{ylabel}</text>'
    )
    for k, (label, steps, values) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        px = _scale(np.asarray(steps, dtype=np.float64), x_lo, x_hi, MARGIN, WIDTH - MARGIN)
        py = _scale(transform(values), y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
        points = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(px, py))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN + 14 + 16 * k
        parts.append(
            f'<line x1="{WIDTH - MARGIN - 130}" y1="{ly - 4}" x2="{WIDTH - MARGIN - 112}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{WIDTH - MARGIN - 106}" y="{ly}" font-family="sans-serif" '
            f'font-size="11">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
