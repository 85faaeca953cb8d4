"""Run-length encoded binary segment masks.

Runs alternate background/foreground in row-major order and always start
with a (possibly empty) background run, so ``[0, h*w]`` is a full mask.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class MaskError(ValueError):
    """Raised for malformed masks, dimension mismatches and empty segments."""


@dataclass(frozen=True)
class Rle:
    height: int
    width: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise MaskError(f"mask dimensions must be positive, got {self.height}x{self.width}")
        runs = tuple(int(r) for r in self.runs)
        if any(r < 0 for r in runs):
            raise MaskError("run lengths must be non-negative")
        if sum(runs) != self.height * self.width:
            raise MaskError(
                f"runs sum to {sum(runs)}, expected {self.height * self.width}"
            )
        object.__setattr__(self, "runs", runs)

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def area(self) -> int:
        return sum(self.runs[1::2])

    def to_dict(self) -> dict:
        return {"h": self.height, "w": self.width, "runs": list(self.runs)}

    @classmethod
    def from_dict(cls, d: dict) -> "Rle":
        try:
            return cls(int(d["h"]), int(d["w"]), tuple(d["runs"]))
        except (KeyError, TypeError) as exc:
            raise MaskError(f"bad mask record: {exc}") from exc


def encode(mask) -> Rle:
    """Encode a 2D binary grid (anything numpy can read) into an :class:`Rle`."""
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise MaskError(f"expected a non-empty 2D grid, got shape {m.shape}")
    flat = m.astype(bool).ravel()
    # indices where the value flips, plus both ends
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return Rle(m.shape[0], m.shape[1], tuple(runs))


def decode(rle: Rle) -> np.ndarray:
    values = np.zeros(len(rle.runs), dtype=bool)
    values[1::2] = True
    return np.repeat(values, rle.runs).reshape(rle.height, rle.width)


def _check_same_shape(a: Rle, b: Rle):
    if a.shape != b.shape:
        raise MaskError(f"mask dimension mismatch: {a.shape} vs {b.shape}")


def iou(a: Rle, b: Rle) -> float:
    """Intersection over union; two empty masks give 0."""
    _check_same_shape(a, b)
    da, db = decode(a), decode(b)
    inter = int(np.count_nonzero(da & db))
    union = a.area() + b.area() - inter
    return inter / union if union else 0.0


def iou_matrix(preds: Sequence[Rle], gts: Sequence[Rle]) -> np.ndarray:
    """Pairwise IoU, rows are ``preds`` and columns ``gts``."""
    out = np.zeros((len(preds), len(gts)))
    if not preds or not gts:
        return out
    shape = preds[0].shape
    for m in list(preds) + list(gts):
        if m.shape != shape:
            raise MaskError(f"mask dimension mismatch: {m.shape} vs {shape}")
    p = np.stack([decode(m).ravel() for m in preds]).astype(np.int64)
    g = np.stack([decode(m).ravel() for m in gts]).astype(np.int64)
    inter = p @ g.T
    area_p = p.sum(1)[:, None]
    area_g = g.sum(1)[None, :]
    union = area_p + area_g - inter
    np.divide(inter, union, out=out, where=union > 0)
    return out


def centroid(m: Rle) -> tuple[float, float]:
    """Mean (x, y) of foreground pixels; x is the column, y the row."""
    if m.area() == 0:
        raise MaskError("centroid of an empty segment is undefined")
    ys, xs = np.nonzero(decode(m))
    return float(xs.mean()), float(ys.mean())


def from_box(height: int, width: int, x0: int, y0: int, x1: int, y1: int) -> Rle:
    """Rectangle mask covering columns x0..x1 and rows y0..y1 inclusive."""
    grid = np.zeros((height, width), dtype=bool)
    grid[y0 : y1 + 1, x0 : x1 + 1] = True
    return encode(grid)
