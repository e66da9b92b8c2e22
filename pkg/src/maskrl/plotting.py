"""Dependency-free line-plot rasterizer: axes, ticks, labels, mean +/- band."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import images

# 5x7 bitmap glyphs; '#' marks lit pixels. Lowercase renders as uppercase.
_GLYPHS = {
    "0": ["#####", "#...#", "#..##", "#.#.#", "##..#", "#...#", "#####"],
    "1": ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    "2": ["#####", "....#", "....#", "#####", "#....", "#....", "#####"],
    "3": ["#####", "....#", "....#", ".####", "....#", "....#", "#####"],
    "4": ["#...#", "#...#", "#...#", "#####", "....#", "....#", "....#"],
    "5": ["#####", "#....", "#....", "#####", "....#", "....#", "#####"],
    "6": ["#####", "#....", "#....", "#####", "#...#", "#...#", "#####"],
    "7": ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    "8": ["#####", "#...#", "#...#", "#####", "#...#", "#...#", "#####"],
    "9": ["#####", "#...#", "#...#", "#####", "....#", "....#", "#####"],
    "A": [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "B": ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
    "C": [".####", "#....", "#....", "#....", "#....", "#....", ".####"],
    "D": ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."],
    "E": ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
    "F": ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
    "G": [".####", "#....", "#....", "#.###", "#...#", "#...#", ".###."],
    "H": ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "I": [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
    "J": ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."],
    "K": ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
    "L": ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
    "M": ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
    "N": ["#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"],
    "O": [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "P": ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
    "Q": [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"],
    "R": ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
    "S": [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
    "T": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    "U": ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "V": ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
    "W": ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"],
    "X": ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
    "Y": ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."],
    "Z": ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
    ".": [".....", ".....", ".....", ".....", ".....", ".....", "..#.."],
    ",": [".....", ".....", ".....", ".....", ".....", "..#..", ".#..."],
    "-": [".....", ".....", ".....", "#####", ".....", ".....", "....."],
    "+": [".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."],
    "_": [".....", ".....", ".....", ".....", ".....", ".....", "#####"],
    "=": [".....", ".....", "#####", ".....", "#####", ".....", "....."],
    "/": ["....#", "....#", "...#.", "..#..", ".#...", "#....", "#...."],
    ":": [".....", "..#..", ".....", ".....", ".....", "..#..", "....."],
    "(": ["...#.", "..#..", ".#...", ".#...", ".#...", "..#..", "...#."],
    ")": [".#...", "..#..", "...#.", "...#.", "...#.", "..#..", ".#..."],
    "%": ["##..#", "##..#", "...#.", "..#..", ".#...", "#..##", "#..##"],
    " ": [".....", ".....", ".....", ".....", ".....", ".....", "....."],
}

COLORS = [(0.85, 0.20, 0.15), (0.15, 0.35, 0.80), (0.10, 0.60, 0.20),
          (0.75, 0.50, 0.05), (0.55, 0.15, 0.65), (0.05, 0.55, 0.55)]


class Canvas:
    def __init__(self, width: int, height: int, background=(1.0, 1.0, 1.0)):
        self.width = width
        self.height = height
        self.pix = np.empty((height, width, 3), np.float32)
        self.pix[:] = background

    def set(self, x: int, y: int, color) -> None:
        if 0 <= x < self.width and 0 <= y < self.height:
            self.pix[y, x] = color

    def line(self, x0: float, y0: float, x1: float, y1: float, color) -> None:
        """Bresenham on rounded endpoints."""
        x0, y0, x1, y1 = int(round(x0)), int(round(y0)), int(round(x1)), int(round(y1))
        dx, dy = abs(x1 - x0), -abs(y1 - y0)
        sx = 1 if x0 < x1 else -1
        sy = 1 if y0 < y1 else -1
        err = dx + dy
        while True:
            self.set(x0, y0, color)
            if x0 == x1 and y0 == y1:
                break
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                x0 += sx
            if e2 <= dx:
                err += dx
                y0 += sy

    def fill_rect(self, x0, y0, x1, y1, color) -> None:
        x0, x1 = max(0, int(x0)), min(self.width, int(x1))
        y0, y1 = max(0, int(y0)), min(self.height, int(y1))
        if x0 < x1 and y0 < y1:
            self.pix[y0:y1, x0:x1] = color

    def blend_rect(self, x0, y0, x1, y1, color, alpha: float) -> None:
        x0, x1 = max(0, int(x0)), min(self.width, int(x1))
        y0, y1 = max(0, int(y0)), min(self.height, int(y1))
        if x0 < x1 and y0 < y1:
            region = self.pix[y0:y1, x0:x1]
            region *= (1 - alpha)
            region += alpha * np.asarray(color, np.float32)

    def text(self, x: int, y: int, s: str, color=(0.1, 0.1, 0.1)) -> None:
        cx = x
        for ch in s.upper():
            glyph = _GLYPHS.get(ch)
            if glyph is None:
                glyph = _GLYPHS["."]
            for gy, row in enumerate(glyph):
                for gx, bit in enumerate(row):
                    if bit == "#":
                        self.set(cx + gx, y + gy, color)
            cx += 6

    def save(self, path) -> Path:
        path = Path(path)
        arr = np.round(np.clip(self.pix, 0, 1) * 255).astype(np.uint8)
        if path.suffix == ".png":
            return images.write_png(path, arr)
        return images.write_ppm(path.with_suffix(".ppm") if path.suffix != ".ppm" else path, arr)


def _nice_ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10 ** np.floor(np.log10(span / n))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = np.ceil(lo / step) * step
    return np.arange(first, hi + step / 2, step)


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 10000 or abs(v) < 0.01:
        return f"{v:.0e}"
    if abs(v - round(v)) < 1e-9:
        return str(int(round(v)))
    return f"{v:.2f}".rstrip("0").rstrip(".")


def plot_curves(series: list[dict], out_path, title: str = "",
                xlabel: str = "", ylabel: str = "",
                width: int = 640, height: int = 420) -> Path:
    """Render line plots with optional shaded bands.

    Each series dict: {"x": array, "y": array, "label": str,
    "band": (lo_array, hi_array) or None}.
    """
    if not series:
        raise ValueError("no series to plot")
    ml, mr, mt, mb = 62, 14, 26, 44
    cv = Canvas(width, height)
    x_all = np.concatenate([np.asarray(s["x"], float) for s in series])
    y_all = np.concatenate([np.asarray(s["y"], float) for s in series])
    for s in series:
        if s.get("band") is not None:
            y_all = np.concatenate([y_all, np.asarray(s["band"][0], float),
                                    np.asarray(s["band"][1], float)])
    x_lo, x_hi = float(x_all.min()), float(x_all.max())
    y_lo, y_hi = float(y_all.min()), float(y_all.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * (width - ml - mr)

    def py(y):
        return height - mb - (y - y_lo) / (y_hi - y_lo) * (height - mt - mb)

    axis_color = (0.25, 0.25, 0.25)
    grid_color = (0.88, 0.88, 0.88)
    for tx in _nice_ticks(x_lo, x_hi):
        cv.line(px(tx), mt, px(tx), height - mb, grid_color)
    for ty in _nice_ticks(y_lo, y_hi):
        cv.line(ml, py(ty), width - mr, py(ty), grid_color)
    cv.line(ml, height - mb, width - mr, height - mb, axis_color)
    cv.line(ml, mt, ml, height - mb, axis_color)
    for tx in _nice_ticks(x_lo, x_hi):
        cv.line(px(tx), height - mb, px(tx), height - mb + 3, axis_color)
        label = _fmt(tx)
        cv.text(int(px(tx)) - 3 * len(label), height - mb + 6, label)
    for ty in _nice_ticks(y_lo, y_hi):
        cv.line(ml - 3, py(ty), ml, py(ty), axis_color)
        label = _fmt(ty)
        cv.text(ml - 6 - 6 * len(label), int(py(ty)) - 3, label)

    for si, s in enumerate(series):
        color = COLORS[si % len(COLORS)]
        xs = np.asarray(s["x"], float)
        ys = np.asarray(s["y"], float)
        order = np.argsort(xs)
        xs, ys = xs[order], ys[order]
        band = s.get("band")
        if band is not None:
            lo = np.asarray(band[0], float)[order]
            hi = np.asarray(band[1], float)[order]
            for i in range(len(xs) - 1):
                x0, x1 = int(px(xs[i])), int(px(xs[i + 1])) + 1
                cv.blend_rect(x0, py(hi[i]), x1, py(lo[i]), color, 0.18)
        for i in range(len(xs) - 1):
            cv.line(px(xs[i]), py(ys[i]), px(xs[i + 1]), py(ys[i + 1]), color)
        label = s.get("label", f"series {si}")
        ly = mt + 10 * si
        cv.line(width - mr - 108, ly + 3, width - mr - 92, ly + 3, color)
        cv.text(width - mr - 88, ly, label[:14])

    if title:
        cv.text((width - 6 * len(title)) // 2, 8, title)
    if xlabel:
        cv.text((width - 6 * len(xlabel)) // 2, height - 14, xlabel)
    if ylabel:
        cv.text(4, mt - 14, ylabel)
    return cv.save(out_path)


def aggregate_runs(runs: list[tuple[np.ndarray, np.ndarray]]):
    """Mean and min/max band across runs, resampled onto the union x-grid."""
    grid = np.unique(np.concatenate([np.asarray(x, float) for x, _ in runs]))
    ys = np.stack([np.interp(grid, np.asarray(x, float), np.asarray(y, float))
                   for x, y in runs])
    return grid, ys.mean(axis=0), ys.min(axis=0), ys.max(axis=0)
