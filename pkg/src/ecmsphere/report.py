"""Deterministic CSV and SVG emission.

Reports are part of the public surface, so formatting is frozen: floats are
written with ``repr`` (shortest round-trip form), rows follow input order,
and SVG elements are emitted in a fixed order so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import colorsys

import numpy as np


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if not isinstance(v, str) else v for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_matrix_csv(path, names, matrix):
    matrix = np.asarray(matrix)
    rows = [[names[i]] + [matrix[i, j] for j in range(matrix.shape[1])] for i in range(matrix.shape[0])]
    write_csv(path, ["label"] + list(names), rows)


def label_color(index, total) -> str:
    """Evenly spaced hues around the wheel; stable for a given (index, total)."""
    hue = (index / max(total, 1)) % 1.0
    r, g, b = colorsys.hls_to_rgb(hue, 0.45, 0.85)
    return f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}"


def svg_scatter(path, points, labels, label_names, title="", size=640):
    """A fixed-size scatter plot colored by label, with a simple legend."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pad = 48
    span = size - 2 * pad
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    extent = np.maximum(hi - lo, 1e-12)
    total = len(label_names)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="#ffffff"/>',
    ]
    if title:
        parts.append(
            f'<text x="{size // 2}" y="24" text-anchor="middle" '
            f'font-family="monospace" font-size="14">{title}</text>'
        )
    for i in range(points.shape[0]):
        x = pad + (points[i, 0] - lo[0]) / extent[0] * span
        y = size - pad - (points[i, 1] - lo[1]) / extent[1] * span
        parts.append(
            f'<circle cx="{x:.3f}" cy="{y:.3f}" r="3" '
            f'fill="{label_color(int(labels[i]), total)}" fill-opacity="0.75"/>'
        )
    for idx, name in enumerate(label_names):
        y = pad + idx * 16
        parts.append(
            f'<rect x="8" y="{y - 9}" width="10" height="10" fill="{label_color(idx, total)}"/>'
        )
        parts.append(
            f'<text x="22" y="{y}" font-family="monospace" font-size="11">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
