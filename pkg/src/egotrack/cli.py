"""Command-line entry points: track, eval, synth, ablate, align-depth, static-windows."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io, metrics, synth, tracker
from .costs import TERMS, CostConfig, CostError
from .geometry import GeometryError, align_depth, l1_objective
from .masks import MaskError

log = logging.getLogger("egotrack")

PRESETS = {
    "minimal": synth.minimal_spec,
    "out_of_view": synth.out_of_view_spec,
    "occlusion": synth.occlusion_suite_spec,
    "ablation": synth.ablation_scenario_spec,
}

# rows of the default ablation grid: (instance, category, location, visual)
DEFAULT_GRID = [
    {"name": "all terms", "disable": []},
    {"name": "no visual", "disable": ["visual"]},
    {"name": "no location", "disable": ["location"]},
    {"name": "no category", "disable": ["category"]},
    {"name": "no instance", "disable": ["instance"]},
    {"name": "category only", "disable": ["instance", "location", "visual"]},
    {"name": "instance + category", "disable": ["location", "visual"]},
]


class CliError(Exception):
    pass


# config ------------------------------------------------------------------------


def add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("cost configuration")
    g.add_argument("--config", type=Path, help="JSON file with CostConfig fields")
    g.add_argument("--alpha-s", type=float, help="instance mismatch cost")
    g.add_argument("--alpha-v", type=float, help="visual feature scale")
    g.add_argument("--alpha-l", type=float, help="location offset (cost adds ln alpha_l)")
    g.add_argument("--alpha-c", type=float, help="category mismatch cost")
    g.add_argument("--gamma", type=float, help="matching threshold")
    g.add_argument("--disable", action="append", choices=TERMS, default=[], help="turn a cost term off (repeatable)")
    g.add_argument("--max-track-age", type=int, help="only match tracks seen within this many frames")


def config_from_args(args) -> CostConfig:
    base = CostConfig.load(args.config) if getattr(args, "config", None) else CostConfig()
    d = base.to_dict()
    for flag, key in (("alpha_s", "alpha_s"), ("alpha_v", "alpha_v"), ("alpha_l", "alpha_l"), ("alpha_c", "alpha_c"), ("gamma", "gamma"), ("max_track_age", "max_track_age")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    cfg = CostConfig.from_dict(d)
    if getattr(args, "disable", None):
        cfg = cfg.without(*args.disable)
    return cfg


# track -------------------------------------------------------------------------


def track_video(obs_path, cams_path, cfg: CostConfig, alignment_path=None, include_propagated=True) -> tuple[dict, list[dict]]:
    header, records = io.read_observations(obs_path)
    cams = io.read_cameras(cams_path)
    alignment = io.read_alignment(alignment_path) if alignment_path else None
    observations = io.build_observations(records, cams, cfg, alignment)
    frames = sorted(set(cams) | {o.frame for o in observations})
    tracks = tracker.run(observations, cfg, all_frames=frames)
    out_header = {
        "schema": "tracks",
        "height": header.get("height"),
        "width": header.get("width"),
        "config": cfg.to_dict(),
    }
    return out_header, io.track_records(tracks, include_propagated)


def cmd_track(args) -> int:
    cfg = config_from_args(args)
    header, rows = track_video(args.observations, args.cameras, cfg, args.alignment, not args.omit_propagated)
    io.write_jsonl(args.output, header, rows)
    n = len({r["refined_id"] for r in rows})
    log.info("wrote %d records for %d tracks to %s", len(rows), n, args.output)
    return 0


# eval --------------------------------------------------------------------------


def _eval_one(job):
    name, pred_path, gt_path, opts = job
    _, preds = io.read_predictions(pred_path)
    _, gts = io.read_groundtruth(gt_path)
    frames = io.eval_frames(preds, gts)
    rep = metrics.evaluate_video(frames, name, **opts)
    return name, frames, rep


def evaluate_files(pairs, names=None, id_iou=0.5, class_agnostic=False, classes=None, jobs=1) -> dict:
    names = names or _default_names(pairs)
    opts = {"class_agnostic": class_agnostic, "alpha_id": id_iou, "classes": classes}
    work = [(n, p, g, opts) for n, (p, g) in zip(names, pairs)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_eval_one, work))
    else:
        results = [_eval_one(w) for w in work]
    videos = [r for _, _, r in results]
    pooled = metrics.evaluate_video(
        metrics.pool({n: f for n, f, _ in results}), "pooled", class_agnostic, id_iou, classes=classes
    )
    return {
        "videos": [v.to_dict() for v in videos],
        "mean": metrics.mean_report(videos, "mean"),
        "pooled": pooled.to_dict(),
        "settings": {"id_iou": id_iou, "class_agnostic": class_agnostic, "classes": classes},
    }


def _default_names(pairs) -> list[str]:
    names = [Path(p).stem for p, _ in pairs]
    if len(set(names)) != len(names):
        names = [f"video{k}" for k in range(len(pairs))]
    return names


def _row(name, d) -> list[str]:
    sw = sum(d["id_switches"].values())
    sw = f"{sw:g}"
    return [name] + [f"{100 * d[k]:.2f}" for k in ("hota", "det_a", "ass_a", "idf1")] + [sw]


def format_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    def line(r):
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    return "\n".join([line(header), "  ".join("-" * w for w in widths)] + [line(r) for r in rows]) + "\n"


def report_table(report: dict) -> str:
    rows = [_row(v["name"], v) for v in report["videos"]]
    rows.append(_row("mean", report["mean"]))
    rows.append(_row("pooled", report["pooled"]))
    return format_table(["video", "HOTA", "DetA", "AssA", "IDF1", "IDsw"], rows)


def write_report(outdir: Path, stem: str, report: dict, table: str):
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"{stem}.json").write_text(json.dumps(report, sort_keys=True, indent=1, allow_nan=False) + "\n", encoding="utf-8")
    (outdir / f"{stem}.txt").write_text(table, encoding="utf-8")


def cmd_eval(args) -> int:
    files = args.files
    if len(files) % 2:
        raise CliError("eval expects PRED GT pairs")
    pairs = list(zip(files[0::2], files[1::2]))
    classes = args.classes.split(",") if args.classes else None
    names = args.names.split(",") if args.names else None
    if names is not None and len(names) != len(pairs):
        raise CliError(f"--names lists {len(names)} names for {len(pairs)} videos")
    report = evaluate_files(pairs, names, args.id_iou, args.class_agnostic, classes, args.jobs)
    table = report_table(report)
    write_report(args.output, "report", report, table)
    sys.stdout.write(table)
    return 0


# synth -------------------------------------------------------------------------


def write_scenario(scn: synth.Scenario, outdir: Path):
    s = scn.spec
    outdir.mkdir(parents=True, exist_ok=True)
    size = {"height": s.height, "width": s.width}
    io.write_jsonl(outdir / "observations.jsonl", io.observation_header(s.feature_dim, **size), scn.observations)
    io.write_jsonl(outdir / "cameras.jsonl", {"schema": "cameras"}, scn.cameras)
    io.write_jsonl(outdir / "groundtruth.jsonl", {"schema": "groundtruth", **size}, scn.gt)
    io.write_jsonl(outdir / "depth_samples.jsonl", {"schema": "depth_samples"}, scn.depth_samples)
    io.write_jsonl(outdir / "warnings.jsonl", {"schema": "warnings"}, scn.warnings)
    (outdir / "spec.json").write_text(json.dumps(s.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")


def cmd_synth(args) -> int:
    if args.spec is not None and args.preset is not None:
        raise CliError("give either a spec file or --preset, not both")
    if args.spec is not None:
        spec = synth.ScenarioSpec.load(args.spec)
        if args.seed is not None:
            spec.seed = args.seed
    elif args.preset is not None:
        spec = PRESETS[args.preset](args.seed if args.seed is not None else 0)
    else:
        raise CliError("synth needs a spec file or --preset")
    scn = synth.generate(spec)
    write_scenario(scn, args.output)
    for w in scn.warnings:
        log.warning("object %s (%s) is never visible", w["object"], w["label"])
    log.info("wrote %d observations over %d frames to %s", len(scn.observations), spec.n_frames, args.output)
    return 0


# ablate ------------------------------------------------------------------------


def load_grid(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        grid = json.load(fh)
    if not isinstance(grid, list):
        raise CliError(f"{path}: grid must be a JSON list of rows")
    for k, row in enumerate(grid):
        if not isinstance(row, dict) or not set(row) <= {"name", "disable", "config"}:
            raise CliError(f"{path}: row {k} must be an object with name/disable/config keys")
        bad = set(row.get("disable", [])) - set(TERMS)
        if bad:
            raise CliError(f"{path}: row {k} disables unknown terms {sorted(bad)}")
    return grid


def run_ablation(obs_path, cams_path, gt_path, base: CostConfig, grid: list[dict], alignment_path=None, id_iou=0.5, class_agnostic=False) -> dict:
    if not grid:
        raise CliError("ablation grid is empty")
    header, records = io.read_observations(obs_path)
    cams = io.read_cameras(cams_path)
    alignment = io.read_alignment(alignment_path) if alignment_path else None
    _, gts = io.read_groundtruth(gt_path)
    frames = sorted(set(cams) | {r["frame"] for r in records})
    rows = []
    for k, row in enumerate(grid):
        d = {**base.to_dict(), **row.get("config", {})}
        cfg = CostConfig.from_dict(d).without(*row.get("disable", []))
        obs = io.build_observations(records, cams, cfg, alignment)
        tracks = tracker.run(obs, cfg, all_frames=frames)
        preds = io.prediction_segments(io.track_records(tracks, include_propagated=False))
        rep = metrics.evaluate_video(io.eval_frames(preds, gts), row.get("name", f"row{k}"), class_agnostic, id_iou)
        rows.append({"name": rep.name, "enabled": dict(cfg.enabled), "gamma": cfg.gamma, "report": _summary(rep)})
    baseline = [
        {"frame": r["frame"], "track_id": r["initial_instance"], "category": r["category"], "mask": r["_mask"]}
        for r in records
    ]
    rep = metrics.evaluate_video(io.eval_frames(baseline, gts), "initial ids", class_agnostic, id_iou)
    return {"rows": rows, "baseline": _summary(rep)}


def _summary(rep: metrics.VideoReport) -> dict:
    return {k: getattr(rep, k) for k in ("hota", "det_a", "ass_a", "idf1", "id_switches")}


def ablation_table(result: dict) -> str:
    header = ["instance", "category", "location", "visual", "HOTA", "DetA", "AssA", "IDF1", "IDsw", "row"]
    rows = []
    for r in result["rows"]:
        marks = ["x" if r["enabled"][t] else "-" for t in TERMS]
        rows.append(marks + _row(r["name"], r["report"])[1:] + [r["name"]])
    rows.append(["", "", "", ""] + _row("initial ids", result["baseline"])[1:] + ["initial ids"])
    return format_table(header, rows)


def cmd_ablate(args) -> int:
    grid = load_grid(args.grid) if args.grid else DEFAULT_GRID
    result = run_ablation(args.observations, args.cameras, args.groundtruth, config_from_args(args), grid, args.alignment, args.id_iou, args.class_agnostic)
    table = ablation_table(result)
    write_report(args.output, "ablation", result, table)
    sys.stdout.write(table)
    return 0


# align-depth -------------------------------------------------------------------


def cmd_align_depth(args) -> int:
    _, it = io.iter_jsonl(args.samples, "depth_samples")
    by_frame: dict = {}
    for n, rec in it:
        where = f"{args.samples}:{n}"
        try:
            raw, ref = float(rec["raw"]), float(rec["ref"])
        except (KeyError, TypeError, ValueError):
            raise io.FormatError(f"{where}: depth sample needs numeric raw and ref") from None
        by_frame.setdefault(rec.get("frame"), []).append((raw, ref))
    groups = {f: v for f, v in by_frame.items()} if args.per_frame else {None: [s for v in by_frame.values() for s in v]}
    out = []
    for f in sorted(groups, key=lambda x: (x is not None, x)):
        raw, ref = np.array(groups[f]).T
        s, b = align_depth(raw, ref)
        out.append({"frame": f, "scale": s, "shift": b, "objective": l1_objective(raw, ref, s, b), "n": int(raw.size)})
    io.write_jsonl(args.output, {"schema": "depth_alignment"}, out)
    return 0


# static-windows ----------------------------------------------------------------


def cmd_static_windows(args) -> int:
    _, it = io.iter_jsonl(args.tracks, "tracks")
    per_track: dict = {}
    for n, rec in it:
        where = f"{args.tracks}:{n}"
        try:
            tid, frame = rec["refined_id"], int(rec["frame"])
        except (KeyError, TypeError, ValueError):
            raise io.FormatError(f"{where}: track record needs refined_id and frame") from None
        loc = None if rec.get("propagated") else rec.get("location")
        if not rec.get("propagated") and loc is None:
            raise io.FormatError(f"{where}: observed record without location")
        per_track.setdefault(tid, []).append((frame, loc))
    out = []
    for tid in sorted(per_track, key=repr):
        entries = []
        for frame, loc in sorted(per_track[tid], key=lambda e: e[0]):
            if entries and frame > entries[-1][0] + 1:
                entries.append((frame - 1, None))  # unobserved gap
            entries.append((frame, loc))
        for a, b in tracker.static_windows(entries, args.threshold, args.min_len):
            out.append({"refined_id": tid, "start": a, "end": b})
    io.write_jsonl(args.output, {"schema": "static_windows", "threshold": args.threshold, "min_len": args.min_len}, out)
    return 0


# main --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egotrack", description="3D-aware refinement and evaluation of egocentric object tracks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="refine initial tracks into a tracks file")
    t.add_argument("observations", type=Path)
    t.add_argument("cameras", type=Path)
    t.add_argument("-o", "--output", type=Path, required=True)
    t.add_argument("--alignment", type=Path, help="depth alignment file; lifts raw depth instead of metric depth")
    t.add_argument("--omit-propagated", action="store_true", help="leave propagation markers out of the output")
    add_config_flags(t)
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="HOTA/DetA/AssA/IDF1/ID switches against ground truth")
    e.add_argument("files", nargs="+", type=Path, metavar="PRED GT", help="one or more prediction/ground-truth file pairs")
    e.add_argument("-o", "--output", type=Path, required=True, help="directory for report.json and report.txt")
    e.add_argument("--names", help="comma-separated video names")
    e.add_argument("--id-iou", type=float, default=0.5)
    e.add_argument("--class-agnostic", action="store_true")
    e.add_argument("--classes", help="comma-separated classes for switch counts; others go under 'other'")
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic scenario")
    s.add_argument("spec", nargs="?", type=Path)
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--seed", type=int)
    s.add_argument("-o", "--output", type=Path, required=True)
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("ablate", help="evaluate a grid of cost-term configurations")
    a.add_argument("observations", type=Path)
    a.add_argument("cameras", type=Path)
    a.add_argument("groundtruth", type=Path)
    a.add_argument("-o", "--output", type=Path, required=True)
    a.add_argument("--grid", type=Path, help="JSON list of {name, disable, config} rows")
    a.add_argument("--alignment", type=Path)
    a.add_argument("--id-iou", type=float, default=0.5)
    a.add_argument("--class-agnostic", action="store_true")
    add_config_flags(a)
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("align-depth", help="robust scale/shift fit of raw depth to reference depth")
    d.add_argument("samples", type=Path)
    d.add_argument("-o", "--output", type=Path, required=True)
    d.add_argument("--per-frame", action="store_true")
    d.set_defaults(func=cmd_align_depth)

    w = sub.add_parser("static-windows", help="find stationary periods in refined tracks")
    w.add_argument("tracks", type=Path)
    w.add_argument("-o", "--output", type=Path, required=True)
    w.add_argument("--threshold", type=float, default=0.05, help="metres between successive frames")
    w.add_argument("--min-len", type=int, default=3)
    w.set_defaults(func=cmd_static_windows)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, io.FormatError, tracker.TrackerError, CostError, GeometryError, MaskError, synth.ScenarioError, OSError) as exc:
        print(f"egotrack: error: {exc}", file=sys.stderr)
        return 1
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        print(f"egotrack: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
