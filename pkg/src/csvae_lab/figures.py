"""Dependency-free image and plot emission: binary PGM and scatter SVG."""

from __future__ import annotations

import numpy as np

from .errors import DataError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def to_gray_u8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    return (np.clip(img.astype(np.float64), 0.0, 1.0) * 255.0).round().astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    """Binary PGM (P5), maxval 255. img: (H, W) floats in [0, 1] or uint8."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim != 2:
        raise ValueError(f"PGM wants a 2-D image, got shape {img.shape}")
    u8 = to_gray_u8(img)
    h, w = u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(u8.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise DataError("not a binary PGM file")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    w, h, maxval = fields
    pos += 1
    data = np.frombuffer(blob[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
    return data.astype(np.float64) / maxval


def mosaic(tiles, gap: int = 2, gap_value: float = 1.0) -> np.ndarray:
    """Tile a 2-D list/array of equal-size grayscale images into one image."""
    rows = [[np.asarray(t, dtype=np.float64).reshape(np.asarray(t).shape[:2])
             if np.asarray(t).ndim == 3 else np.asarray(t, dtype=np.float64)
             for t in row] for row in tiles]
    th, tw = rows[0][0].shape
    n_rows, n_cols = len(rows), len(rows[0])
    out = np.full((n_rows * th + gap * (n_rows - 1),
                   n_cols * tw + gap * (n_cols - 1)), gap_value)
    for i, row in enumerate(rows):
        if len(row) != n_cols:
            raise ValueError("ragged mosaic rows")
        for j, tile in enumerate(row):
            if tile.shape != (th, tw):
                raise ValueError("mosaic tiles must share one shape")
            out[i * (th + gap):i * (th + gap) + th,
                j * (tw + gap):j * (tw + gap) + tw] = tile
    return out


def svg_scatter(path, points: np.ndarray, labels: np.ndarray, title: str,
                caption: str = "", size: int = 420, axis_names=("", "")) -> None:
    """Two-dimensional scatter, color-coded by integer label."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("svg_scatter wants (n, 2) points")
    if points.shape[0] == 0:
        raise DataError("no points to plot")
    pad = 46
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.where(hi - lo < 1e-12, 1.0, hi - lo)

    def sx(v):
        return pad + (v - lo[0]) / span[0] * (size - 2 * pad)

    def sy(v):
        return size - pad - (v - lo[1]) / span[1] * (size - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 28}" '
        f'viewBox="0 0 {size} {size + 28}">',
        f'<rect width="{size}" height="{size + 28}" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{size - 2 * pad}" height="{size - 2 * pad}" '
        f'fill="none" stroke="#999" stroke-width="1"/>',
        f'<text x="{size / 2:.1f}" y="{pad - 14}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    if axis_names[0]:
        parts.append(f'<text x="{size / 2:.1f}" y="{size - pad + 30}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{axis_names[0]}</text>')
    if axis_names[1]:
        parts.append(f'<text x="{pad - 28}" y="{size / 2:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11" '
                     f'transform="rotate(-90 {pad - 28} {size / 2:.1f})">{axis_names[1]}</text>')
    for lab in np.unique(labels):
        color = PALETTE[int(lab) % len(PALETTE)]
        pts = points[labels == lab]
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="1.6" '
                         f'fill="{color}" fill-opacity="0.55"/>')
        parts.append(f'<circle cx="{size - pad + 10}" cy="{pad + 14 * (int(lab) + 1)}" r="4" '
                     f'fill="{color}"/>')
    if caption:
        parts.append(f'<text x="{pad}" y="{size + 16}" font-family="sans-serif" '
                     f'font-size="11">{caption}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
