"""Frame-by-frame 3D-aware track refinement.

Every frame, all tracks in the database are matched against the frame's
observations with the gated Hungarian solver.  Matched observations inherit
the track's refined id; unmatched observations open new tracks; unmatched
tracks are never terminated and simply carry their attributes forward.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable

import numpy as np

from .assignment import gated_match
from .costs import AttributeVector, CostConfig, cost_matrix
from .masks import Rle

log = logging.getLogger(__name__)

FEATURE_WINDOW = 100
_RESUM_EVERY = 10_000


class TrackerError(ValueError):
    pass


class _Propagated:
    def __repr__(self):
        return "PROPAGATED"


PROPAGATED = _Propagated()


@dataclass(frozen=True)
class Observation:
    frame: int
    mask: Rle
    attributes: AttributeVector
    source_segment_id: Hashable

    def __post_init__(self):
        if self.mask.area() == 0:
            raise TrackerError(f"observation {self.source_segment_id!r} has an empty mask")


class FeatureWindow:
    """Ring buffer of the most recent feature vectors with an O(1) running mean."""

    def __init__(self, maxlen: int = FEATURE_WINDOW):
        self.items: deque = deque(maxlen=maxlen)
        self._sum = None
        self._pushes = 0

    def __len__(self):
        return len(self.items)

    def push(self, v: np.ndarray):
        v = np.asarray(v, dtype=float)
        if self._sum is None:
            self._sum = np.zeros_like(v)
        elif v.shape != self._sum.shape:
            raise TrackerError(f"feature dimension changed from {self._sum.shape[0]} to {v.shape[0]}")
        if len(self.items) == self.items.maxlen:
            self._sum -= self.items[0]
        self.items.append(v)
        self._sum += v
        self._pushes += 1
        if self._pushes % _RESUM_EVERY == 0:
            self._sum = np.sum(self.items, axis=0)

    def mean(self) -> np.ndarray:
        if not self.items:
            raise TrackerError("mean of an empty feature window")
        return self._sum / len(self.items)


@dataclass
class Track:
    refined_id: int
    last_location: np.ndarray
    last_category: Hashable
    last_instance: Hashable
    feature_window: FeatureWindow
    history: list = field(default_factory=list)  # (frame, Observation | PROPAGATED)
    last_observed_frame: int = -1

    @classmethod
    def start(cls, refined_id: int, obs: Observation) -> "Track":
        t = cls(
            refined_id=refined_id,
            last_location=obs.attributes.location,
            last_category=obs.attributes.category,
            last_instance=obs.attributes.instance,
            feature_window=FeatureWindow(),
        )
        t.assign(obs)
        return t

    def assign(self, obs: Observation):
        a = obs.attributes
        self.last_location = a.location
        self.last_category = a.category
        self.last_instance = a.instance
        self.feature_window.push(a.feature)
        self.history.append((obs.frame, obs))
        self.last_observed_frame = obs.frame

    def propagate(self, frame: int):
        self.history.append((frame, PROPAGATED))

    def observations(self) -> list[Observation]:
        return [o for _, o in self.history if o is not PROPAGATED]


def track_attributes(t: Track) -> AttributeVector:
    """Aggregate a track: newest segment's location/category/instance, windowed mean feature."""
    if not t.feature_window:
        raise TrackerError(f"track {t.refined_id} has no assigned segments")
    return AttributeVector(t.last_location, t.feature_window.mean(), t.last_category, t.last_instance)


@dataclass
class TrackerState:
    config: CostConfig = field(default_factory=CostConfig)
    tracks: list = field(default_factory=list)
    next_id: int = 0
    last_frame: int | None = None


def step(state: TrackerState, frame_obs: list[Observation]) -> list[int]:
    """Process one frame; returns the refined id given to each observation, in input order."""
    frames = {o.frame for o in frame_obs}
    if len(frames) > 1:
        raise TrackerError(f"observations from several frames passed to one step: {sorted(frames)}")
    if not frame_obs:
        return []
    frame = frames.pop()
    if state.last_frame is not None and frame <= state.last_frame:
        raise TrackerError(f"frame {frame} is not after previously processed frame {state.last_frame}")
    seen = set()
    for o in frame_obs:
        if o.source_segment_id in seen:
            raise TrackerError(f"duplicate observation id {o.source_segment_id!r} in frame {frame}")
        seen.add(o.source_segment_id)

    return _match_and_update(state, frame, frame_obs)


def _candidates(state: TrackerState, frame: int) -> list[Track]:
    age = state.config.max_track_age
    if age is None:
        return list(state.tracks)
    return [t for t in state.tracks if frame - t.last_observed_frame <= age]


def _match_and_update(state: TrackerState, frame: int, frame_obs: list[Observation]) -> list[int]:
    cfg = state.config
    cands = _candidates(state, frame)
    costs = cost_matrix([track_attributes(t) for t in cands], [o.attributes for o in frame_obs], cfg)
    result = gated_match(costs, cfg.gamma, premask=cfg.premask_gate)

    ids = [-1] * len(frame_obs)
    matched_tracks = set()
    for ti, oi, _ in result.pairs:
        cands[ti].assign(frame_obs[oi])
        matched_tracks.add(id(cands[ti]))
        ids[oi] = cands[ti].refined_id
    for t in state.tracks:
        if id(t) not in matched_tracks:
            t.propagate(frame)
    # new tracks only become matchable from the next frame on
    for oi in sorted(result.unmatched_observations):
        state.tracks.append(Track.start(state.next_id, frame_obs[oi]))
        ids[oi] = state.next_id
        state.next_id += 1
    state.last_frame = frame
    return ids


def advance(state: TrackerState, frame: int):
    """Mark a frame with no observations: every track is propagated."""
    if state.last_frame is not None and frame <= state.last_frame:
        raise TrackerError(f"frame {frame} is not after previously processed frame {state.last_frame}")
    for t in state.tracks:
        t.propagate(frame)
    state.last_frame = frame


def run(frames: Iterable, cfg: CostConfig | None = None, all_frames: Iterable[int] | None = None) -> list[Track]:
    """Refine a whole video.

    ``frames`` yields lists of observations (one list per frame, frames in
    increasing order) or a flat iterable of observations sorted by frame.
    If ``all_frames`` is given, frames without observations are stepped too,
    so every live track gets a propagation marker there.
    """
    state = TrackerState(config=cfg or CostConfig())
    grouped = _group(frames)
    if all_frames is None:
        for _, obs in grouped:
            step(state, obs)
        return state.tracks
    by_frame = dict(grouped)
    extra = sorted(set(by_frame) - set(all_frames))
    if extra:
        raise TrackerError(f"observations reference frames missing from the frame list: {extra[:5]}")
    for f in sorted(set(all_frames)):
        if f in by_frame:
            step(state, by_frame[f])
        else:
            advance(state, f)
    return state.tracks


def _group(frames) -> list[tuple[int, list[Observation]]]:
    out: list[tuple[int, list[Observation]]] = []
    dim = None
    for item in frames:
        batch = list(item) if not isinstance(item, Observation) else [item]
        for o in batch:
            d = o.attributes.feature.shape[0]
            if dim is None:
                dim = d
            elif d != dim:
                raise TrackerError(f"inconsistent feature dimension {d} (expected {dim})")
            if out and o.frame == out[-1][0]:
                out[-1][1].append(o)
            elif out and o.frame < out[-1][0]:
                raise TrackerError(f"frames out of order: {o.frame} after {out[-1][0]}")
            else:
                out.append((o.frame, [o]))
    return out


def detect_static_windows(track: Track, dist_threshold: float, min_len: int) -> list[tuple[int, int]]:
    """Maximal runs of consecutive observed frames whose centroid moves at most ``dist_threshold``.

    Successive history entries count as consecutive frames.  A propagated
    frame, or a jump above the threshold, ends the current run.
    Runs shorter than ``min_len`` frames are dropped.
    """
    entries = [(f, None if o is PROPAGATED else o.attributes.location) for f, o in track.history]
    return static_windows(entries, dist_threshold, min_len)


def static_windows(entries, dist_threshold: float, min_len: int) -> list[tuple[int, int]]:
    """Same as :func:`detect_static_windows` on ``(frame, location or None)`` pairs."""
    if not dist_threshold > 0:
        raise TrackerError("dist_threshold must be positive")
    if min_len < 2:
        raise TrackerError("min_len must be at least 2")
    windows = []
    run_start = prev_frame = prev_loc = None
    run_len = 0

    def close():
        if run_len >= min_len:
            windows.append((run_start, prev_frame))

    for frame, loc in entries:
        if loc is None:
            close()
            run_start = prev_loc = None
            run_len = 0
            continue
        loc = np.asarray(loc, dtype=float)
        if prev_loc is not None and np.linalg.norm(loc - prev_loc) <= dist_threshold:
            run_len += 1
        else:
            close()
            run_start, run_len = frame, 1
        prev_frame, prev_loc = frame, loc
    close()
    return windows
