"""Line-delimited JSON record files and their conversion to in-memory objects.

Every file starts with a one-line header object carrying ``"schema"``; each
following line is one record.  Files are read lazily line by line.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Iterator, Protocol

import numpy as np

from . import masks
from .costs import AttributeVector, CostConfig, normalize
from .geometry import CameraPose, GeometryError, Intrinsics, apply_depth, lift_centroid
from .metrics import EvalFrame, Segment
from .tracker import PROPAGATED, Observation, Track, run

FORMAT_VERSION = 1


class FormatError(ValueError):
    """A malformed or inconsistent input file; the message carries ``path:line``."""


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_jsonl(path, header: dict, records: Iterable[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps({**header, "version": FORMAT_VERSION}) + "\n")
        for r in records:
            fh.write(dumps(r) + "\n")


def iter_jsonl(path, schema: str | tuple) -> tuple[dict, Iterator[tuple[int, dict]]]:
    """Return the header and an iterator of ``(line_number, record)``."""
    schemas = (schema,) if isinstance(schema, str) else tuple(schema)
    fh = open(path, encoding="utf-8")
    first = fh.readline()
    if not first.strip():
        fh.close()
        raise FormatError(f"{path}:1: missing header record")
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        fh.close()
        raise FormatError(f"{path}:1: header is not valid JSON ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("schema") not in schemas:
        fh.close()
        raise FormatError(f"{path}:1: expected a header with schema in {schemas}")

    def records():
        with fh:
            for n, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{n}: invalid JSON ({exc.msg})") from None
                if not isinstance(rec, dict):
                    raise FormatError(f"{path}:{n}: record must be a JSON object")
                yield n, rec

    return header, records()


def _need(rec: dict, key: str, where: str):
    if key not in rec:
        raise FormatError(f"{where}: missing field {key!r}")
    return rec[key]


def _mask(rec, where, shape=None) -> masks.Rle:
    try:
        m = masks.Rle.from_dict(_need(rec, "mask", where))
    except masks.MaskError as exc:
        raise FormatError(f"{where}: {exc}") from None
    if shape is not None and m.shape != shape:
        raise FormatError(f"{where}: mask is {m.height}x{m.width}, header says {shape[0]}x{shape[1]}")
    return m


def _frame(rec, where) -> int:
    f = _need(rec, "frame", where)
    if not isinstance(f, int) or isinstance(f, bool) or f < 0:
        raise FormatError(f"{where}: frame must be a non-negative integer")
    return f


# observations -----------------------------------------------------------------


def observation_header(feature_dim: int, height: int, width: int, **extra) -> dict:
    return {"schema": "observations", "feature_dim": feature_dim, "height": height, "width": width, **extra}


def read_observations(path) -> tuple[dict, list[dict]]:
    """Validated observation records (each gains a ``_line`` key for diagnostics)."""
    header, it = iter_jsonl(path, "observations")
    dim = header.get("feature_dim")
    if not isinstance(dim, int) or dim <= 0:
        raise FormatError(f"{path}:1: header must declare a positive integer feature_dim")
    shape = (header.get("height"), header.get("width"))
    shape = shape if all(isinstance(v, int) for v in shape) else None
    out = []
    last = -1
    for n, rec in it:
        where = f"{path}:{n}"
        frame = _frame(rec, where)
        if frame < last:
            raise FormatError(f"{where}: frame {frame} appears after frame {last}")
        last = frame
        m = _mask(rec, where, shape)
        if m.area() == 0:
            raise FormatError(f"{where}: empty mask")
        feat = _need(rec, "feature", where)
        if not isinstance(feat, list) or len(feat) != dim:
            raise FormatError(f"{where}: feature has length {len(feat) if isinstance(feat, list) else '?'}, header declares {dim}")
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in feat):
            raise FormatError(f"{where}: feature values must be finite numbers")
        for key in ("segment_id", "category", "initial_instance"):
            _need(rec, key, where)
        if rec.get("depth_at_centroid") is None and rec.get("raw_depth_at_centroid") is None:
            raise FormatError(f"{where}: needs depth_at_centroid or raw_depth_at_centroid")
        out.append({**rec, "_mask": m, "_line": where})
    return header, out


def read_cameras(path) -> dict:
    """Frame index -> (Intrinsics, camera-to-world CameraPose)."""
    header, it = iter_jsonl(path, "cameras")
    cams = {}
    for n, rec in it:
        where = f"{path}:{n}"
        frame = _frame(rec, where)
        if frame in cams:
            raise FormatError(f"{where}: duplicate camera for frame {frame}")
        try:
            k = Intrinsics(*(float(_need(rec, key, where)) for key in ("fx", "fy", "cx", "cy")))
            pose = CameraPose.from_quaternion(_need(rec, "quaternion", where), _need(rec, "translation", where))
        except (GeometryError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"{where}: {exc}") from None
        cams[frame] = (k, pose)
    return cams


def read_alignment(path) -> dict:
    """Scale/shift records: key ``None`` for a per-video fit, else per frame."""
    header, it = iter_jsonl(path, "depth_alignment")
    out = {}
    for n, rec in it:
        where = f"{path}:{n}"
        frame = rec.get("frame")
        out[frame] = (float(_need(rec, "scale", where)), float(_need(rec, "shift", where)))
    return out


def build_observations(records: list[dict], cameras: dict, cfg: CostConfig | None = None, alignment: dict | None = None) -> list[Observation]:
    """Lift every record's mask centroid to 3D and wrap it as a tracker observation."""
    cfg = cfg or CostConfig()
    out = []
    for rec in records:
        where = rec.get("_line", f"frame {rec.get('frame')}")
        frame = rec["frame"]
        if frame not in cameras:
            raise FormatError(f"{where}: no camera for frame {frame}")
        k, pose = cameras[frame]
        m = rec.get("_mask") or masks.Rle.from_dict(rec["mask"])
        try:
            depth = _depth(rec, frame, alignment)
            loc = lift_centroid(masks.centroid(m), depth, k, pose)
        except (GeometryError, masks.MaskError) as exc:
            raise FormatError(f"{where}: {exc}") from None
        feat = np.asarray(rec["feature"], dtype=float)
        if cfg.normalize_features:
            feat = normalize(feat)
        attrs = AttributeVector(loc, feat, rec["category"], rec["initial_instance"])
        out.append(Observation(frame, m, attrs, rec["segment_id"]))
    return out


def _depth(rec, frame, alignment) -> float:
    if alignment is not None and rec.get("raw_depth_at_centroid") is not None:
        fit = alignment.get(frame, alignment.get(None))
        if fit is None:
            raise GeometryError(f"no depth alignment for frame {frame}")
        return apply_depth(float(rec["raw_depth_at_centroid"]), *fit)
    if rec.get("depth_at_centroid") is None:
        raise GeometryError("record has only raw depth but no alignment was supplied")
    return float(rec["depth_at_centroid"])


# tracks -----------------------------------------------------------------------


def track_records(tracks: list[Track], include_propagated: bool = True) -> list[dict]:
    rows = []
    for t in tracks:
        for frame, o in t.history:
            if o is PROPAGATED:
                if include_propagated:
                    rows.append(
                        {
                            "refined_id": t.refined_id,
                            "frame": frame,
                            "propagated": True,
                            "mask": None,
                            "source_segment_id": None,
                            "category": None,
                            "location": None,
                        }
                    )
                continue
            rows.append(
                {
                    "refined_id": t.refined_id,
                    "frame": frame,
                    "propagated": False,
                    "mask": o.mask.to_dict(),
                    "source_segment_id": o.source_segment_id,
                    "category": o.attributes.category,
                    "location": [float(v) for v in o.attributes.location],
                }
            )
    rows.sort(key=lambda r: (r["frame"], r["refined_id"]))
    return rows


_ID_FIELD = {"tracks": "refined_id", "observations": "initial_instance", "groundtruth": "gt_track_id"}


def read_predictions(path) -> tuple[dict, list[dict]]:
    """Predicted segments from a tracks file.

    An observations file is accepted too (its initial instance labels serve
    as track ids), as is a ground-truth file, for self-evaluation.
    """
    header, it = iter_jsonl(path, tuple(_ID_FIELD))
    shape = (header.get("height"), header.get("width"))
    shape = shape if all(isinstance(v, int) for v in shape) else None
    id_field = _ID_FIELD[header["schema"]]
    out = []
    for n, rec in it:
        where = f"{path}:{n}"
        frame = _frame(rec, where)
        if rec.get("propagated"):
            continue
        m = _mask(rec, where, shape)
        tid = _need(rec, id_field, where)
        out.append({"frame": frame, "track_id": tid, "category": _need(rec, "category", where), "mask": m, "_line": where, "location": rec.get("location")})
    return header, out


def read_groundtruth(path) -> tuple[dict, list[dict]]:
    header, it = iter_jsonl(path, "groundtruth")
    shape = (header.get("height"), header.get("width"))
    shape = shape if all(isinstance(v, int) for v in shape) else None
    out = []
    for n, rec in it:
        where = f"{path}:{n}"
        out.append(
            {
                "frame": _frame(rec, where),
                "track_id": _need(rec, "gt_track_id", where),
                "category": _need(rec, "category", where),
                "mask": _mask(rec, where, shape),
                "location": rec.get("location"),
            }
        )
    return header, out


def eval_frames(preds: list[dict], gts: list[dict]) -> list[EvalFrame]:
    """Group predicted and GT segments by frame (frames with either kind are kept)."""
    frames: dict = {}
    for p in preds:
        frames.setdefault(p["frame"], ([], []))[0].append(Segment(p["track_id"], p["category"], p["mask"]))
    for g in gts:
        frames.setdefault(g["frame"], ([], []))[1].append(Segment(g["track_id"], g["category"], g["mask"]))
    shapes = {s.mask.shape for ps, gs in frames.values() for s in ps + gs}
    if len(shapes) > 1:
        raise FormatError(f"predictions and ground truth use different image sizes: {sorted(shapes)}")
    out = []
    for f in sorted(frames):
        try:
            out.append(EvalFrame(f, *frames[f]))
        except ValueError as exc:
            raise FormatError(str(exc)) from None
    return out


def scenario_frames(scn) -> tuple[list[dict], dict]:
    """Observation records and cameras of an in-memory synthetic scenario."""
    cams = {
        c["frame"]: (Intrinsics(c["fx"], c["fy"], c["cx"], c["cy"]), CameraPose.from_quaternion(c["quaternion"], c["translation"]))
        for c in scn.cameras
    }
    return scn.observations, cams


def gt_segments(gt_records: list[dict]) -> list[dict]:
    return [
        {"frame": g["frame"], "track_id": g["gt_track_id"], "category": g["category"], "mask": masks.Rle.from_dict(g["mask"])}
        for g in gt_records
    ]


def prediction_segments(rows: list[dict]) -> list[dict]:
    return [
        {"frame": r["frame"], "track_id": r["refined_id"], "category": r["category"], "mask": masks.Rle.from_dict(r["mask"])}
        for r in rows
        if not r["propagated"]
    ]


def refine_scenario(scn, cfg: CostConfig | None = None) -> tuple[list[Track], list[EvalFrame]]:
    """Track an in-memory scenario and pair the refined tracks with its ground truth."""
    cfg = cfg or CostConfig()
    recs, cams = scenario_frames(scn)
    tracks = run(build_observations(recs, cams, cfg), cfg, all_frames=sorted(cams))
    rows = track_records(tracks, include_propagated=False)
    return tracks, eval_frames(prediction_segments(rows), gt_segments(scn.gt))


# adapters -----------------------------------------------------------------------


class ObservationSource(Protocol):
    """What an adapter for an external dataset provides.

    Records follow the ``observations``, ``cameras`` and ``groundtruth``
    schemas; :func:`export_source` writes them so every command can read them.
    """

    feature_dim: int
    height: int
    width: int

    def observation_records(self) -> Iterable[dict]: ...

    def camera_records(self) -> Iterable[dict]: ...

    def groundtruth_records(self) -> Iterable[dict]: ...


def export_source(src: ObservationSource, outdir) -> dict:
    """Write an adapter's records as observations/cameras/groundtruth files; returns their paths."""
    outdir = Path(outdir)
    size = {"height": src.height, "width": src.width}
    paths = {k: outdir / f"{k}.jsonl" for k in ("observations", "cameras", "groundtruth")}
    write_jsonl(paths["observations"], observation_header(src.feature_dim, **size), src.observation_records())
    write_jsonl(paths["cameras"], {"schema": "cameras"}, src.camera_records())
    write_jsonl(paths["groundtruth"], {"schema": "groundtruth", **size}, src.groundtruth_records())
    return paths
