"""Per-attribute consistency costs and the combined observation/track pair cost."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Hashable

import numpy as np

TERMS = ("instance", "category", "location", "visual")


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class CostConfig:
    """Weights, gate and ablation switches for the matching cost.

    Defaults are the published hyperparameters.  ``enabled`` maps each of
    :data:`TERMS` to a flag; disabled terms contribute zero.
    """

    alpha_s: float = 10.0
    alpha_v: float = 2.0
    alpha_l: float = 10.0
    alpha_c: float = 1e4
    gamma: float = 30.0
    enabled: dict = field(default_factory=lambda: {t: True for t in TERMS})
    normalize_features: bool = True
    premask_gate: bool = False
    max_track_age: int | None = None

    def __post_init__(self):
        for name in ("alpha_s", "alpha_v", "alpha_l", "alpha_c"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise CostError(f"{name} must be a finite non-negative number, got {v}")
        if not self.gamma > 0:
            raise CostError(f"gamma must be positive, got {self.gamma}")
        enabled = {t: True for t in TERMS}
        for k, v in dict(self.enabled).items():
            if k not in TERMS:
                raise CostError(f"unknown cost term {k!r}; expected one of {TERMS}")
            enabled[k] = bool(v)
        if enabled["location"] and not self.alpha_l > 0:
            raise CostError("alpha_l must be positive while the location term is enabled")
        if self.max_track_age is not None and self.max_track_age < 0:
            raise CostError("max_track_age must be non-negative")
        object.__setattr__(self, "enabled", enabled)

    def without(self, *terms: str) -> "CostConfig":
        enabled = dict(self.enabled)
        for t in terms:
            if t not in TERMS:
                raise CostError(f"unknown cost term {t!r}")
            enabled[t] = False
        return replace(self, enabled=enabled)

    def only(self, *terms: str) -> "CostConfig":
        return replace(self, enabled={t: t in terms for t in TERMS})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enabled"] = dict(self.enabled)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CostConfig":
        """Build from a flat mapping; ``disable`` may list terms to switch off."""
        d = dict(d)
        known = {f.name for f in fields(cls)}
        disable = d.pop("disable", [])
        if isinstance(disable, str):
            disable = [disable]
        unknown = set(d) - known
        if unknown:
            raise CostError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        return cfg.without(*disable) if disable else cfg

    @classmethod
    def load(cls, path) -> "CostConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise CostError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)


@dataclass(frozen=True)
class AttributeVector:
    location: np.ndarray
    feature: np.ndarray
    category: Hashable
    instance: Hashable

    def __post_init__(self):
        loc = np.asarray(self.location, dtype=float)
        feat = np.asarray(self.feature, dtype=float)
        if loc.shape != (3,) or not np.all(np.isfinite(loc)):
            raise CostError(f"location must be a finite 3-vector, got {self.location!r}")
        if feat.ndim != 1 or not np.all(np.isfinite(feat)):
            raise CostError("feature must be a finite 1-D vector")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "feature", feat)


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise CostError("cannot unit-normalise a zero feature vector")
    return v / n


def location_cost(l1, l2, alpha_l: float) -> float:
    """Negative log of an exponential density on 3D distance: ``|l1 - l2| + ln(alpha_l)``."""
    a = np.asarray(l1, dtype=float)
    b = np.asarray(l2, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise CostError("non-finite location")
    if not alpha_l > 0:
        raise CostError("alpha_l must be positive")
    return float(np.linalg.norm(a - b)) + math.log(alpha_l)


def visual_cost(v1, v2, alpha_v: float) -> float:
    """Cauchy-style cost ``ln(1 + alpha_v * |v1 - v2|^2)``."""
    a = np.asarray(v1, dtype=float)
    b = np.asarray(v2, dtype=float)
    if a.shape != b.shape:
        raise CostError(f"feature dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return math.log1p(alpha_v * float(d @ d))


def category_cost(c1, c2, alpha_c: float) -> float:
    return 0.0 if c1 == c2 else float(alpha_c)


def instance_cost(s1, s2, alpha_s: float) -> float:
    return 0.0 if s1 == s2 else float(alpha_s)


def pair_terms(obs: AttributeVector, track: AttributeVector, cfg: CostConfig) -> dict:
    """Each enabled term's value; disabled terms are reported as 0."""
    on = cfg.enabled
    return {
        "instance": instance_cost(obs.instance, track.instance, cfg.alpha_s) if on["instance"] else 0.0,
        "category": category_cost(obs.category, track.category, cfg.alpha_c) if on["category"] else 0.0,
        "location": location_cost(obs.location, track.location, cfg.alpha_l) if on["location"] else 0.0,
        "visual": visual_cost(obs.feature, track.feature, cfg.alpha_v) if on["visual"] else 0.0,
    }


def pair_cost(obs: AttributeVector, track: AttributeVector, cfg: CostConfig) -> float:
    t = pair_terms(obs, track, cfg)
    return t["instance"] + t["category"] + t["location"] + t["visual"]


def cost_matrix(tracks, observations, cfg: CostConfig) -> np.ndarray:
    """Rows are track attribute vectors, columns observation attribute vectors.

    Vectorised equivalent of calling :func:`pair_cost` on every pair, summing
    the terms in the same order.
    """
    m, n = len(tracks), len(observations)
    out = np.zeros((m, n))
    if m == 0 or n == 0:
        return out
    on = cfg.enabled
    if on["instance"]:
        ts = [t.instance for t in tracks]
        os_ = [o.instance for o in observations]
        out += np.array([[0.0 if a == b else cfg.alpha_s for b in os_] for a in ts])
    if on["category"]:
        tc = [t.category for t in tracks]
        oc = [o.category for o in observations]
        out += np.array([[0.0 if a == b else cfg.alpha_c for b in oc] for a in tc])
    if on["location"]:
        tl = np.stack([t.location for t in tracks])
        ol = np.stack([o.location for o in observations])
        dist = np.linalg.norm(tl[:, None, :] - ol[None, :, :], axis=2)
        out += dist + math.log(cfg.alpha_l)
    if on["visual"]:
        tf = np.stack([t.feature for t in tracks])
        of = np.stack([o.feature for o in observations])
        if tf.shape[1] != of.shape[1]:
            raise CostError(f"feature dimension mismatch: {tf.shape[1]} vs {of.shape[1]}")
        diff = tf[:, None, :] - of[None, :, :]
        out += np.log1p(cfg.alpha_v * np.einsum("ijk,ijk->ij", diff, diff))
    return out
