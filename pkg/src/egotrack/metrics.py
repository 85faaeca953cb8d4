"""HOTA / DetA / AssA, IDF1 and per-class ID switches for segment tracks.

A video is a list of :class:`EvalFrame`, each holding the predicted and the
ground-truth segments of one frame.  Track ids only need to be hashable, so
several videos can be pooled by namespacing ids (see :func:`pool`).
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Sequence

import numpy as np

from .assignment import hungarian
from .masks import Rle, iou_matrix

THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 20))
OTHER_CLASS = "other"


@dataclass(frozen=True)
class Segment:
    track_id: Hashable
    label: Hashable
    mask: Rle


@dataclass
class EvalFrame:
    frame: int
    preds: list = field(default_factory=list)
    gts: list = field(default_factory=list)

    def __post_init__(self):
        ids = [g.track_id for g in self.gts]
        if len(ids) != len(set(ids)):
            raise ValueError(f"frame {self.frame}: duplicate ground-truth track ids")
        ids = [p.track_id for p in self.preds]
        if len(ids) != len(set(ids)):
            raise ValueError(f"frame {self.frame}: duplicate predicted track ids")


@dataclass
class FrameMatch:
    pairs: list  # (pred index, gt index, iou)
    fp: list
    fn: list


@dataclass
class ThresholdEval:
    alpha: float
    tp: int
    fp: int
    fn: int
    det_a: float
    ass_a: float
    hota: float


@dataclass
class EvalReport:
    thresholds: list
    hota: float
    det_a: float
    ass_a: float
    idf1: float
    idtp: int
    idfp: int
    idfn: int
    id_switches: dict

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VideoReport:
    """Per-class reports plus their class means (or a single class-agnostic group)."""

    name: str
    per_class: dict
    hota: float
    det_a: float
    ass_a: float
    idf1: float
    id_switches: dict

    def to_dict(self) -> dict:
        return asdict(self)


def match_iou(iou: np.ndarray, alpha: float) -> FrameMatch:
    """Max-cardinality, then max-IoU, matching among pairs with IoU >= alpha.

    ``iou`` has predictions on rows and ground truth on columns.
    """
    n_p, n_g = iou.shape
    feasible = iou >= alpha
    pairs = []
    if feasible.any():
        rows = np.flatnonzero(feasible.any(axis=1))
        cols = np.flatnonzero(feasible.any(axis=0))
        sub = feasible[np.ix_(rows, cols)]
        if (sub.sum(axis=0) == 1).all() and (sub.sum(axis=1) == 1).all():
            # disjoint candidate pairs: the optimum takes all of them
            pairs = [(int(rows[a]), int(cols[b]), float(iou[rows[a], cols[b]])) for a, b in zip(*np.nonzero(sub))]
        else:
            # each matched pair is worth more than all IoU mass combined
            bonus = min(len(rows), len(cols)) + 1.0
            s_iou = iou[np.ix_(rows, cols)]
            cost = np.where(sub, -(bonus + s_iou), 0.0)
            pairs = sorted(
                (int(rows[a]), int(cols[b]), float(s_iou[a, b])) for a, b in hungarian(cost) if sub[a, b]
            )
    mp = {i for i, _, _ in pairs}
    mg = {j for _, j, _ in pairs}
    return FrameMatch(pairs, [i for i in range(n_p) if i not in mp], [j for j in range(n_g) if j not in mg])


def _disjoint(feasible: np.ndarray) -> bool:
    return bool((feasible.sum(axis=0) <= 1).all() and (feasible.sum(axis=1) <= 1).all())


def match_frame(preds: Sequence[Segment], gts: Sequence[Segment], alpha: float) -> FrameMatch:
    return match_iou(iou_matrix([p.mask for p in preds], [g.mask for g in gts]), alpha)


def det_a(tp: int, fp: int, fn: int) -> float:
    denom = tp + fp + fn
    return tp / denom if denom else 0.0


def ass_a(tp_pairs: Iterable[tuple], pred_counts: dict, gt_counts: dict) -> float:
    """Mean association Jaccard over true-positive pairs.

    ``tp_pairs`` lists one ``(pred_id, gt_id)`` per TP match; the counts give
    every id's total number of detections, so unmatched detections of an id
    count towards its FPA / FNA.
    """
    tp_pairs = list(tp_pairs)
    if not tp_pairs:
        return 0.0
    # every TP pair of an id pair shares the same Jaccard term; summed
    # exactly so the result is the correctly rounded mean
    total = sum(
        Fraction(n * n, pred_counts[p] + gt_counts[g] - n) for (p, g), n in Counter(tp_pairs).items()
    )
    return float(total / len(tp_pairs))


def _ious(frames: Sequence[EvalFrame]) -> list[np.ndarray]:
    return [iou_matrix([p.mask for p in f.preds], [g.mask for g in f.gts]) for f in frames]


def hota(frames: Sequence[EvalFrame], thresholds: Sequence[float] = THRESHOLDS, ious=None) -> list[ThresholdEval]:
    ious = _ious(frames) if ious is None else ious
    pred_counts = Counter(p.track_id for f in frames for p in f.preds)
    gt_counts = Counter(g.track_id for f in frames for g in f.gts)
    # frames whose candidate pairs are disjoint at the loosest threshold stay
    # disjoint at every tighter one, so their matching is a simple filter
    lo = min(thresholds) if len(thresholds) else 0.0
    simple = [_disjoint(iou >= lo) for iou in ious]
    base = [match_iou(iou, lo).pairs if s else None for iou, s in zip(ious, simple)]
    out = []
    for alpha in thresholds:
        tp = fp = fn = 0
        pairs = []
        for f, iou, b in zip(frames, ious, base):
            if b is None:
                matched = match_iou(iou, alpha).pairs
            else:
                matched = [p for p in b if p[2] >= alpha]
            tp += len(matched)
            fp += len(f.preds) - len(matched)
            fn += len(f.gts) - len(matched)
            pairs.extend((f.preds[i].track_id, f.gts[j].track_id) for i, j, _ in matched)
        d = det_a(tp, fp, fn)
        a = ass_a(pairs, pred_counts, gt_counts)
        out.append(ThresholdEval(alpha, tp, fp, fn, d, a, math.sqrt(d * a)))
    return out


def idf1(frames: Sequence[EvalFrame], alpha_id: float = 0.5, ious=None) -> tuple[float, int, int, int]:
    """Identity F1 under the best one-to-one mapping of predicted to GT tracks.

    Returns ``(idf1, idtp, idfp, idfn)``.
    """
    ious = _ious(frames) if ious is None else ious
    pred_ids = sorted({p.track_id for f in frames for p in f.preds}, key=repr)
    gt_ids = sorted({g.track_id for f in frames for g in f.gts}, key=repr)
    n_pred = sum(len(f.preds) for f in frames)
    n_gt = sum(len(f.gts) for f in frames)
    pi = {t: k for k, t in enumerate(pred_ids)}
    gi = {t: k for k, t in enumerate(gt_ids)}
    overlap = np.zeros((len(pred_ids), len(gt_ids)), dtype=np.int64)
    for f, iou in zip(frames, ious):
        for i, j in zip(*np.nonzero(iou >= alpha_id)):
            overlap[pi[f.preds[i].track_id], gi[f.gts[j].track_id]] += 1
    idtp = 0
    if overlap.size:
        idtp = int(sum(overlap[i, j] for i, j in hungarian(-overlap)))
    idfp, idfn = n_pred - idtp, n_gt - idtp
    denom = 2 * idtp + idfp + idfn
    return (2 * idtp / denom if denom else 0.0), idtp, idfp, idfn


def switches_per_track(frames: Sequence[EvalFrame], alpha_id: float = 0.5, ious=None) -> tuple[Counter, dict]:
    """Per GT track: number of matched-id changes, and the set of pred ids it was matched to."""
    ious = _ious(frames) if ious is None else ious
    last: dict = {}
    counts: Counter = Counter()
    matched: dict = defaultdict(set)
    for f in frames:
        for g in f.gts:
            counts[g.track_id] += 0
    for f, iou in zip(frames, ious):
        for i, j, _ in match_iou(iou, alpha_id).pairs:
            gid = f.gts[j].track_id
            pid = f.preds[i].track_id
            if gid in last and last[gid] != pid:
                counts[gid] += 1
            last[gid] = pid
            matched[gid].add(pid)
    return counts, dict(matched)


def id_switches(
    frames: Sequence[EvalFrame],
    alpha_id: float = 0.5,
    classes: Iterable | None = None,
    ious=None,
) -> dict:
    """Count, per GT class, how often a GT track's matched prediction id changes.

    Each frame is matched at ``alpha_id``; a switch is a matched pred id that
    differs from the last pred id matched to the same GT track.  Labels not in
    ``classes`` (when given) are counted under ``"other"``.
    """
    per_track, _ = switches_per_track(frames, alpha_id, ious)
    label = {g.track_id: g.label for f in frames for g in f.gts}
    known = set(classes) if classes is not None else None
    counts: Counter = Counter()
    for gid, n in per_track.items():
        counts[_class_key(label[gid], known)] += n
    return dict(sorted(counts.items(), key=lambda kv: repr(kv[0])))


def _class_key(label, known):
    if known is not None and label not in known:
        return OTHER_CLASS
    return label


def evaluate(
    frames: Sequence[EvalFrame],
    alpha_id: float = 0.5,
    thresholds: Sequence[float] = THRESHOLDS,
    classes: Iterable | None = None,
) -> EvalReport:
    """All metrics for one group of frames (one class, or everything pooled)."""
    ious = _ious(frames)
    per_alpha = hota(frames, thresholds, ious=ious)
    f1, idtp, idfp, idfn = idf1(frames, alpha_id, ious=ious)
    n = len(per_alpha)
    return EvalReport(
        thresholds=per_alpha,
        hota=math.fsum(t.hota for t in per_alpha) / n,
        det_a=math.fsum(t.det_a for t in per_alpha) / n,
        ass_a=math.fsum(t.ass_a for t in per_alpha) / n,
        idf1=f1,
        idtp=idtp,
        idfp=idfp,
        idfn=idfn,
        id_switches=id_switches(frames, alpha_id, classes, ious=ious),
    )


def split_by_class(frames: Sequence[EvalFrame]) -> dict:
    labels = sorted({s.label for f in frames for s in f.preds + f.gts}, key=repr)
    return {
        c: [EvalFrame(f.frame, [p for p in f.preds if p.label == c], [g for g in f.gts if g.label == c]) for f in frames]
        for c in labels
    }


def evaluate_video(
    frames: Sequence[EvalFrame],
    name: str = "video",
    class_agnostic: bool = False,
    alpha_id: float = 0.5,
    thresholds: Sequence[float] = THRESHOLDS,
    classes: Iterable | None = None,
) -> VideoReport:
    """Evaluate per class and average over the classes present in GT or predictions.

    With ``class_agnostic`` all segments form a single group keyed ``"*"``;
    ID switches are still grouped by GT class.
    """
    groups = {"*": list(frames)} if class_agnostic else split_by_class(frames)
    per_class = {str(c): evaluate(fs, alpha_id, thresholds, classes) for c, fs in groups.items()}
    switches: Counter = Counter()
    for r in per_class.values():
        switches.update(r.id_switches)
    if not per_class:
        return VideoReport(name, {}, 0.0, 0.0, 0.0, 0.0, {})
    k = len(per_class)
    return VideoReport(
        name=name,
        per_class=per_class,
        hota=math.fsum(r.hota for r in per_class.values()) / k,
        det_a=math.fsum(r.det_a for r in per_class.values()) / k,
        ass_a=math.fsum(r.ass_a for r in per_class.values()) / k,
        idf1=math.fsum(r.idf1 for r in per_class.values()) / k,
        id_switches={str(c): n for c, n in sorted(switches.items(), key=lambda kv: repr(kv[0]))},
    )


def pool(videos: dict) -> list[EvalFrame]:
    """Concatenate several videos' frames, namespacing every track id by video."""
    out = []
    for vname, frames in videos.items():
        for f in frames:
            out.append(
                EvalFrame(
                    f.frame,
                    [Segment((vname, p.track_id), p.label, p.mask) for p in f.preds],
                    [Segment((vname, g.track_id), g.label, g.mask) for g in f.gts],
                )
            )
    return out


def mean_report(reports: Sequence[VideoReport], name: str = "overall") -> dict:
    """Arithmetic mean of per-video scores; switches are averaged per class over videos with that class."""
    if not reports:
        return {"name": name, "hota": 0.0, "det_a": 0.0, "ass_a": 0.0, "idf1": 0.0, "id_switches": {}}
    n = len(reports)
    per_class = defaultdict(list)
    for r in reports:
        for c, v in r.id_switches.items():
            per_class[c].append(v)
    return {
        "name": name,
        "hota": math.fsum(r.hota for r in reports) / n,
        "det_a": math.fsum(r.det_a for r in reports) / n,
        "ass_a": math.fsum(r.ass_a for r in reports) / n,
        "idf1": math.fsum(r.idf1 for r in reports) / n,
        "id_switches": {c: sum(v) / len(v) for c, v in sorted(per_class.items())},
    }
