"""Scratch geometry: candidate-vector layout, rasterization and compositing.

Coordinates are ``(x, y)`` with x the column and y the row. They stay
continuous in candidate vectors and are rounded half-up only when pixels are
produced; rounded coordinates are clamped onto the canvas.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .es import Bounds

BEZIER_FIELDS = 10
LINE_FIELDS = 7
MAX_WEIGHT = 7.0
NETWORK_COLOR_RANGE = (-10.0, 10.0)


class ScratchError(ValueError):
    pass


@dataclass(frozen=True)
class Line:
    p0: tuple
    p1: tuple


@dataclass(frozen=True)
class Bezier:
    p0: tuple
    p1: tuple
    p2: tuple
    weight: float


Shape = Union[Line, Bezier]


@dataclass(frozen=True)
class Scratch:
    shape: Shape
    color: tuple


@dataclass(frozen=True)
class PixelField:
    """Per-pixel colors at fixed positions; ``pixels`` is an (M, 2) array of
    (row, col) and ``colors`` an (M, 3) array."""

    pixels: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=int).reshape(-1, 2)
        colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        if len(pixels) != len(colors):
            raise ScratchError(f"{len(pixels)} pixels but {len(colors)} colors")
        if len({(int(r), int(c)) for r, c in pixels}) != len(pixels):
            raise ScratchError("pixel coordinates must be unique")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "colors", colors)


# --------------------------------------------------------------------------
# rasterization


def _boundary_roots(p0, p1, p2, weight):
    """Parameters t in (0, 1) where one coordinate of the curve crosses a
    pixel boundary (a half-integer)."""
    out = []
    for d in range(2):
        a0, a1, a2 = p0[d], p1[d], p2[d]
        lo = np.floor(min(a0, a1, a2)) - 1
        hi = np.ceil(max(a0, a1, a2)) + 1
        c = np.arange(lo, hi + 1) + 0.5
        A = a0 - c
        B = weight * (a1 - c)
        C = a2 - c
        # (1-t)^2 A + 2 (1-t) t B + t^2 C = 0
        qa = A - 2 * B + C
        qb = 2 * (B - A)
        qc = A
        disc = qb * qb - 4 * qa * qc
        ok = disc >= 0
        qa, qb, qc, disc = qa[ok], qb[ok], qc[ok], disc[ok]
        sq = np.sqrt(disc)
        q = -0.5 * (qb + np.where(qb >= 0, sq, -sq))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = np.where(qa != 0, q / qa, np.nan)
            r2 = np.where(q != 0, qc / q, np.nan)
        out.append(r1)
        out.append(r2)
    t = np.concatenate(out)
    return t[(t > 0) & (t < 1)]


def _line_roots(p0, p1):
    out = []
    for d in range(2):
        a0, a1 = p0[d], p1[d]
        if a0 == a1:
            continue
        c = np.arange(np.floor(min(a0, a1)) - 1, np.ceil(max(a0, a1)) + 2) + 0.5
        out.append((c - a0) / (a1 - a0))
    if not out:
        return np.empty(0)
    t = np.concatenate(out)
    return t[(t > 0) & (t < 1)]


def bezier_points(p0, p1, p2, weight, t):
    """Evaluate the rational quadratic Bezier at parameters ``t``; (len(t), 2)."""
    t = np.asarray(t, dtype=float)[:, None]
    a = (1 - t) ** 2
    b = 2 * (1 - t) * t * weight
    c = t ** 2
    den = a + b + c
    assert np.all(den > 0)
    return (a * np.asarray(p0, float) + b * np.asarray(p1, float) + c * np.asarray(p2, float)) / den


def line_points(p0, p1, t):
    t = np.asarray(t, dtype=float)[:, None]
    return (1 - t) * np.asarray(p0, float) + t * np.asarray(p1, float)


def to_pixels(points: np.ndarray, h: int, w: int) -> np.ndarray:
    """Round (x, y) points half-up and clamp; returns (N, 2) int (row, col)."""
    cols = np.clip(np.floor(points[:, 0] + 0.5), 0, w - 1)
    rows = np.clip(np.floor(points[:, 1] + 0.5), 0, h - 1)
    return np.stack([rows, cols], axis=1).astype(int)


def shape_pixels(shape: Shape, h: int, w: int) -> np.ndarray:
    """Every pixel the continuous curve passes through, as unique (row, col).

    The parameter interval is split at each pixel-boundary crossing and each
    piece is probed at its midpoint, so the result is the pixel set visited
    by the curve itself rather than by a fixed set of samples. Both end
    points are always included.
    """
    if isinstance(shape, Bezier):
        if shape.weight < 0:
            raise ScratchError("Bezier weight must be non-negative")
        p0, p1, p2 = (np.asarray(p, float) for p in (shape.p0, shape.p1, shape.p2))
        cuts = np.unique(np.concatenate([[0.0, 1.0], _boundary_roots(p0, p1, p2, shape.weight)]))
        probes = np.concatenate([cuts, (cuts[:-1] + cuts[1:]) / 2])
        pts = bezier_points(p0, p1, p2, shape.weight, probes)
    elif isinstance(shape, Line):
        p0, p1 = np.asarray(shape.p0, float), np.asarray(shape.p1, float)
        cuts = np.unique(np.concatenate([[0.0, 1.0], _line_roots(p0, p1)]))
        probes = np.concatenate([cuts, (cuts[:-1] + cuts[1:]) / 2])
        pts = line_points(p0, p1, probes)
    else:
        raise ScratchError(f"unknown shape {shape!r}")
    return np.unique(to_pixels(pts, h, w), axis=0)


def rasterize(shape: Shape, h: int, w: int) -> np.ndarray:
    """Boolean (h, w) mask of the 1-pixel-wide stroke of ``shape``."""
    mask = np.zeros((h, w), dtype=bool)
    px = shape_pixels(shape, h, w)
    mask[px[:, 0], px[:, 1]] = True
    return mask


def union_mask(scratches: Sequence, h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    for s in scratches:
        if isinstance(s, PixelField):
            mask[s.pixels[:, 0], s.pixels[:, 1]] = True
        else:
            mask |= rasterize(s.shape, h, w)
    return mask


def coverage(masks: Sequence[np.ndarray], h: int, w: int) -> float:
    """Percentage of the h*w canvas covered by the union of ``masks``."""
    if not len(masks):
        return 0.0
    union = np.zeros((h, w), dtype=bool)
    for m in masks:
        m = np.asarray(m, dtype=bool)
        if m.shape != (h, w):
            raise ScratchError(f"mask shape {m.shape} does not match canvas {(h, w)}")
        union |= m
    return 100.0 * int(union.sum()) / (h * w)


def apply_scratches(x: np.ndarray, scratches: Sequence, domain: str = "image") -> np.ndarray:
    """Composite scratches onto ``x``: masked pixels take the scratch color.

    Scratches are painted in order, so later ones win where they overlap.
    Pixels outside every mask are returned unchanged.
    """
    x = np.asarray(x, dtype=float)
    if domain not in ("image", "network"):
        raise ScratchError(f"unknown domain {domain!r}")
    h, w = x.shape[:2]
    out = x.copy()
    for s in scratches:
        if isinstance(s, PixelField):
            colors = s.colors
            if domain == "image" and (colors.min(initial=0) < 0 or colors.max(initial=0) > 1):
                raise ScratchError("image-domain colors must lie in [0, 1]")
            out[s.pixels[:, 0], s.pixels[:, 1]] = colors
        else:
            color = np.asarray(s.color, dtype=float)
            if domain == "image" and (color.min() < 0 or color.max() > 1):
                raise ScratchError(f"image-domain color {tuple(color)} outside [0, 1]")
            px = shape_pixels(s.shape, h, w)
            out[px[:, 0], px[:, 1]] = color
    if domain == "image":
        out = np.clip(out, 0.0, 1.0)
    return out


# --------------------------------------------------------------------------
# candidate vectors


def _fields(kind: str) -> int:
    if kind == "bezier":
        return BEZIER_FIELDS
    if kind == "line":
        return LINE_FIELDS
    raise ScratchError(f"unknown shape kind {kind!r}")


def encoding_bounds(kind: str, count: int, h: int, w: int, domain: str = "image",
                    color_range=NETWORK_COLOR_RANGE) -> Bounds:
    """Box constraints for a candidate vector of ``count`` scratches.

    Network-domain colors use ``color_range`` instead of [0, 1].
    """
    if count < 1:
        raise ScratchError("need at least one scratch")
    lo_c, hi_c = (0.0, 1.0) if domain == "image" else color_range
    if kind == "bezier":
        lower = [0, 0, 0, 0, 0, 0, 0, lo_c, lo_c, lo_c]
        upper = [w, h, w, h, w, h, MAX_WEIGHT, hi_c, hi_c, hi_c]
    else:
        _fields(kind)
        lower = [0, 0, 0, 0, lo_c, lo_c, lo_c]
        upper = [w, h, w, h, hi_c, hi_c, hi_c]
    return Bounds(np.tile(lower, count).astype(float), np.tile(upper, count).astype(float))


def decode_candidate(v, kind: str, count: int, h: int, w: int, domain: str = "image") -> list:
    """Split a flat candidate vector into ``count`` scratches.

    Bezier layout per scratch: x0, y0, x1, y1, x2, y2, W, R, G, B.
    Line layout per scratch: x0, y0, x1, y1, R, G, B.
    """
    v = np.asarray(v, dtype=float).ravel()
    k = _fields(kind)
    if v.size != k * count:
        raise ScratchError(f"candidate has length {v.size}, expected {k * count}")
    if domain == "image":
        b = encoding_bounds(kind, count, h, w, "image")
        if not b.contains(v):
            bad = np.flatnonzero((v < b.lower) | (v > b.upper))
            raise ScratchError(f"candidate entries out of bounds at indices {bad.tolist()}")
    out = []
    for i in range(count):
        f = v[i * k:(i + 1) * k]
        if kind == "bezier":
            shape = Bezier((f[0], f[1]), (f[2], f[3]), (f[4], f[5]), float(f[6]))
            color = tuple(float(c) for c in f[7:10])
        else:
            shape = Line((f[0], f[1]), (f[2], f[3]))
            color = tuple(float(c) for c in f[4:7])
        out.append(Scratch(shape, color))
    return out


def encode_candidate(scratches: Sequence[Scratch]) -> np.ndarray:
    """Inverse of :func:`decode_candidate`."""
    parts = []
    for s in scratches:
        sh = s.shape
        if isinstance(sh, Bezier):
            parts.append([*sh.p0, *sh.p1, *sh.p2, sh.weight, *s.color])
        else:
            parts.append([*sh.p0, *sh.p1, *s.color])
    return np.asarray([x for p in parts for x in p], dtype=float)


def random_shape(kind: str, h: int, w: int, rng: np.random.Generator) -> Shape:
    """Anchors uniform on the canvas; Bezier weight uniform in [0, 7]."""
    pts = [(rng.uniform(0, w), rng.uniform(0, h)) for _ in range(3 if kind == "bezier" else 2)]
    if kind == "bezier":
        return Bezier(pts[0], pts[1], pts[2], float(rng.uniform(0, MAX_WEIGHT)))
    if kind == "line":
        return Line(pts[0], pts[1])
    raise ScratchError(f"unknown shape kind {kind!r}")


def fixed_mask_pixels(shapes: Sequence[Shape], h: int, w: int) -> np.ndarray:
    """Unique (row, col) pixels under the union of ``shapes``, row-major order."""
    mask = np.zeros((h, w), dtype=bool)
    for s in shapes:
        mask |= rasterize(s, h, w)
    return np.argwhere(mask)
