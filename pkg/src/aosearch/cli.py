"""Command-line entry point.

Subcommands::

    aosearch simulate  --config scenario.ini [--out DIR] [--seed S]
    aosearch search    --config scenario.ini [--out DIR] [--seed S] [--verbose]
    aosearch eval      RUN_DIR [--out metrics.csv]
    aosearch fit-curve [POINTS.csv] [--penalty 10] [--json]
    aosearch ap-sweep  [--scenes 50] [--n 1,5,10,15,20,25,30] [--out DIR]
    aosearch render-report RUN_DIR [--columns 4] [--scale 4]

Exit codes: 0 success (a confirmed find or a completed predefined flight),
1 runtime or validation error, 2 usage error, 3 adaptive search covered
every cell without a confirmed find, 4 adaptive search hit its path budget.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .aoscore import read_pgm, write_pgm
from .config import ConfigError, ScenarioConfig, config_dict, dump_config, load_config
from .detect import Detection, make_detector
from .evaluation import (TAB1_COLUMNS, TAB2_COLUMNS, FitError, GroundTruthLabel,
                         ap_vs_n_experiment, average_precision, bundled_points_path,
                         fit_ap_curve, metrics_csv,
                         persons_found, read_points_csv, standard_suite)
from .mission import (STOP_BUDGET, STOP_COVERAGE, MissionConfig, messages_jsonl,
                      run_adaptive, run_predefined)
from .plan import load_probability_csv
from .scenesim import (PoseNoiseModel, capture, dump_scene, generate_forest, random_clutter,
                       random_persons)
from .terrain import CameraIntrinsics, ElevationModel, GeoOrigin, Pose, dump_dem, ground_height, load_dem

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_BUDGET = 4

MANIFEST = "manifest.json"


class UsageError(Exception):
    """Bad command-line input (exit code 2)."""


# --------------------------------------------------------------------------
# Scenario assembly
# --------------------------------------------------------------------------

def build_dem(cfg: ScenarioConfig) -> ElevationModel:
    if cfg.dem_path is not None:
        path = cfg.resolve(cfg.dem_path)
        try:
            return load_dem(path.read_text())
        except OSError as exc:
            raise ConfigError(f"dem.path: cannot read {path}: {exc.strerror}") from None
        except ValueError as exc:
            raise ConfigError(f"dem.path: {exc}") from None
    x0, y0, x1, y1 = cfg.region
    m = cfg.dem_margin
    return ElevationModel.flat(x0 - m, y0 - m, x1 + m, y1 + m, cfg.flat_height,
                               cfg.dem_cell_size)


def build_scene(cfg: ScenarioConfig):
    seeds = cfg.seeds()
    persons = list(cfg.person_positions)
    if not persons and cfg.person_count:
        persons = random_persons(cfg.region, cfg.person_count, seeds["persons"], margin=1.0)
    clutter = random_clutter(cfg.region, cfg.clutter_count, seeds["clutter"], margin=1.0)
    return generate_forest(cfg.region, cfg.density, (cfg.r_min, cfg.r_max), cfg.canopy_height,
                           seeds["scene"], persons, cfg.person_radius, clutter,
                           t_ground=cfg.t_ground, t_canopy=cfg.t_canopy,
                           t_person=cfg.t_person, t_clutter=cfg.t_clutter)


def build_noise(cfg: ScenarioConfig) -> PoseNoiseModel:
    return PoseNoiseModel(cfg.sigma_xy, cfg.sigma_z, cfg.sigma_yaw_deg, cfg.yaw_bias_deg,
                          cfg.seeds()["pose-noise"], cfg.correlation_time_s)


def mission_config(cfg: ScenarioConfig, out_dir: Path) -> MissionConfig:
    geo = GeoOrigin(*cfg.geo) if cfg.geo is not None else None
    return MissionConfig(mission_id=cfg.mission_id,
                         intrinsics=CameraIntrinsics(cfg.fov_deg, cfg.resolution_px),
                         noise=build_noise(cfg), altitude_agl=cfg.altitude_agl,
                         out_dir=str(out_dir), geo_origin=geo, verbose=cfg.verbose,
                         keep_images=True)


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, out=args.out)
    if getattr(args, "verbose", False):
        cfg = replace(cfg, verbose=True)
    return cfg


def _load(args) -> ScenarioConfig:
    cfg = _apply_overrides(load_config(args.config), args)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------

def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: ScenarioConfig | None, extra=None) -> Path:
    """Record seeds, the resolved config and a hash of every file under ``out``."""
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    record = {
        "command": command,
        "version": __version__,
        "files": {p.relative_to(out).as_posix(): sha256_file(p) for p in files},
    }
    if cfg is not None:
        record["seed"] = cfg.seed
        record["seeds"] = cfg.seeds()
        record["config"] = config_dict(cfg)
    if extra:
        record.update(extra)
    path = out / MANIFEST
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=list) + "\n")
    return path


def _fresh_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def _flight_poses(cfg: ScenarioConfig, dem: ElevationModel) -> list[Pose]:
    """Poses along the predefined waypoints, one per meter (simulate only)."""
    pts = np.asarray(cfg.waypoints or [(cfg.region[0], cfg.region[1]),
                                       (cfg.region[2], cfg.region[1])], dtype=np.float64)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    poses = []
    for k in range(cfg.frames):
        s = min(0.5 + k, cum[-1])
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        t = (s - cum[i]) / seg[i] if seg[i] > 0 else 0.0
        x, y = pts[i] + t * (pts[i + 1] - pts[i])
        poses.append(Pose(float(x), float(y), ground_height(dem, x, y) + cfg.altitude_agl, 0.0))
    return poses


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _fresh_dir(Path(cfg.out))
    dem = build_dem(cfg)
    scene = build_scene(cfg)
    (out / "scene.txt").write_text(dump_scene(scene))
    (out / "dem.asc").write_text(dump_dem(dem))
    (out / "config.ini").write_text(dump_config(cfg))
    if cfg.frames:
        frames_dir = _fresh_dir(out / "frames")
        intr = CameraIntrinsics(cfg.fov_deg, cfg.resolution_px)
        rows = []
        for k, f in enumerate(capture(scene, _flight_poses(cfg, dem), intr, dem,
                                      build_noise(cfg))):
            write_pgm(frames_dir / f"frame_{k:04d}.pgm", f.pixels)
            rows.append({"frame": k, "true_pose": list(f.true_pose.as_tuple()),
                         "measured_pose": list(f.measured_pose.as_tuple())})
        (frames_dir / "poses.jsonl").write_text(
            "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    write_manifest(out, "simulate", cfg, {"persons": len(scene.person_radii),
                                          "occluders": len(scene.occluder_radii)})
    print(f"wrote {out}")
    return EXIT_OK


def _labels_jsonl(labels: dict) -> str:
    rows = []
    for image_id in sorted(labels):
        for lab in labels[image_id]:
            rows.append({"image": image_id, "person": lab.person_id, "bbox": list(lab.bbox)})
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def _run_metrics(detections: dict, labels: dict, n_persons: int) -> dict:
    ap = average_precision(detections, labels)
    pf, pi = persons_found(detections, labels)
    return {"AP": ap.ap, "TP": ap.tp, "FP": ap.fp, "PF": pf, "PI": pi, "persons": n_persons}


def cmd_search(args) -> int:
    cfg = _load(args)
    out = _fresh_dir(Path(cfg.out))
    dem = build_dem(cfg)
    scene = build_scene(cfg)
    detector = make_detector(cfg.detector, **cfg.detector_params)
    mcfg = mission_config(cfg, out / "rasters")
    if cfg.mission == "predefined":
        log = run_predefined(cfg.waypoints, scene, dem, detector, mcfg)
    else:
        planner = cfg.planner_config()
        grid = load_probability_csv(cfg.resolve(cfg.probability_map).read_text(),
                                    cfg.grid_cell_size, cfg.region[:2], cfg.region)
        log = run_adaptive(grid, scene, dem, detector, planner, mcfg, cfg.start)
    log.write(out / "mission_log.jsonl")
    (out / "messages.jsonl").write_text(messages_jsonl(log.messages))
    (out / "labels.jsonl").write_text(_labels_jsonl(log.labels))
    (out / "scene.txt").write_text(dump_scene(scene))
    (out / "config.ini").write_text(dump_config(cfg))
    row = {"flight": cfg.mission_id, "path_length_m": round(log.path_length_m, 6),
           "segments": len(log.of_kind("integrate"))}
    row.update(_run_metrics(log.detections, log.labels, len(scene.person_radii)))
    (out / "metrics.csv").write_text(metrics_csv([row], TAB2_COLUMNS))
    write_manifest(out, "search", cfg, {"stop_reason": log.stop_reason})
    print(f"stop: {log.stop_reason}; path {log.path_length_m:.1f} m; "
          f"messages {len(log.messages)}; PF {row['PF']} PI {row['PI']}")
    if log.stop_reason == STOP_BUDGET:
        return EXIT_BUDGET
    if log.stop_reason == STOP_COVERAGE:
        return EXIT_NOT_FOUND
    return EXIT_OK


def _read_run(run: Path):
    """Detections and labels of a ``search`` output directory."""
    log_path, lab_path = run / "mission_log.jsonl", run / "labels.jsonl"
    for p in (log_path, lab_path):
        if not p.is_file():
            raise UsageError(f"{run}: missing {p.name} (is this a search output directory?)")
    detections, labels = {}, {}
    for lineno, line in enumerate(log_path.read_text().splitlines(), 1):
        ev = json.loads(line)
        if ev.get("kind") != "detect":
            continue
        try:
            detections[ev["image"]] = [
                Detection(tuple(d["bbox"]), d["confidence"], tuple(d["world"]), d["area_px"])
                for d in ev["detections"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{log_path.name} line {lineno}: bad detection record ({exc})")
    for lineno, line in enumerate(lab_path.read_text().splitlines(), 1):
        r = json.loads(line)
        try:
            labels.setdefault(r["image"], []).append(
                GroundTruthLabel(tuple(r["bbox"]), r["person"], r["image"]))
        except KeyError as exc:
            raise ValueError(f"{lab_path.name} line {lineno}: missing field {exc}") from None
    for image_id in detections:
        labels.setdefault(image_id, [])
    persons = len({lab.person_id for labs in labels.values() for lab in labs})
    return detections, labels, persons


def cmd_eval(args) -> int:
    run = Path(args.run)
    detections, labels, persons = _read_run(run)
    row = {"flight": run.name, "segments": len(detections)}
    row.update(_run_metrics(detections, labels, persons))
    text = metrics_csv([row], ("flight", "segments", "AP", "TP", "FP", "PF", "PI", "persons"))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_fit_curve(args) -> int:
    if args.points is None:
        args.points = str(bundled_points_path())
    try:
        text = Path(args.points).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {args.points}: {exc.strerror}") from None
    points = read_points_csv(text)
    if not points:
        raise UsageError(f"{args.points}: no (N, AP) rows")
    fit = fit_ap_curve(points, penalty=args.penalty)
    result = {"a": fit.a, "b": fit.b, "mse": fit.mse, "penalty": fit.penalty,
              "n_points": fit.n_points}
    if args.json:
        print(json.dumps(result, sort_keys=True))
    else:
        print(f"a = {fit.a:.6f}\nb = {fit.b:.6f}\nmse = {fit.mse:.6e}")
    return EXIT_OK


def cmd_ap_sweep(args) -> int:
    try:
        n_values = [int(v) for v in args.n.split(",")]
    except ValueError:
        raise UsageError("--n expects comma-separated integers") from None
    suite = standard_suite(args.scenes, base_seed=args.seed, noise=not args.no_noise)
    rows = ap_vs_n_experiment(suite, n_values)
    table = [{"flight": "ALL", "N": n, "AP": r.ap, "TP": r.tp, "FP": r.fp} for n, r in rows]
    csv_text = metrics_csv(table, TAB1_COLUMNS)
    pts = [(n, r.ap) for n, r in rows if r.ap is not None]
    fit = None
    try:
        fit = fit_ap_curve(pts) if len(pts) >= 2 else None
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
    if args.out:
        out = _fresh_dir(Path(args.out))
        (out / "ap_vs_n.csv").write_text(csv_text)
        extra = {"scenes": args.scenes, "base_seed": args.seed, "n_values": n_values}
        if fit is not None:
            extra["fit"] = {"a": fit.a, "b": fit.b, "mse": fit.mse}
        write_manifest(out, "ap-sweep", None, extra)
    sys.stdout.write(csv_text)
    if fit is not None:
        print(f"fit: a = {fit.a:.4f}, b = {fit.b:.4f}, mse = {fit.mse:.3e}")
    return EXIT_OK


def _gallery(rasters: list[tuple[str, Path]], boxes: dict, columns: int, scale: int) -> np.ndarray:
    """Tile downsampled integrals into one image with detection outlines at full white."""
    tiles = []
    for image_id, path in rasters:
        img = read_pgm(path)
        h, w = img.shape
        small = img[:h - h % scale, :w - w % scale].reshape(
            h // scale, scale, w // scale, scale).mean(axis=(1, 3))
        for x0, y0, x1, y1 in boxes.get(image_id, []):
            xa, ya = x0 // scale, y0 // scale
            xb = min((x1 - 1) // scale, small.shape[1] - 1)
            yb = min((y1 - 1) // scale, small.shape[0] - 1)
            small[ya, xa:xb + 1] = small[yb, xa:xb + 1] = 1.0
            small[ya:yb + 1, xa] = small[ya:yb + 1, xb] = 1.0
        tiles.append(small)
    th, tw = tiles[0].shape
    rows = -(-len(tiles) // columns)
    sheet = np.zeros((rows * (th + 2), columns * (tw + 2)))
    for k, tile in enumerate(tiles):
        r, c = divmod(k, columns)
        sheet[r * (th + 2):r * (th + 2) + th, c * (tw + 2):c * (tw + 2) + tw] = tile
    return sheet


def cmd_render_report(args) -> int:
    run = Path(args.run)
    log_path = run / "mission_log.jsonl"
    if not log_path.is_file():
        raise UsageError(f"{run}: missing mission_log.jsonl (is this a search output directory?)")
    if args.columns < 1 or args.scale < 1:
        raise UsageError("--columns and --scale must be positive")
    integrals, boxes, confirms, summary = {}, {}, [], {}
    for line in log_path.read_text().splitlines():
        ev = json.loads(line)
        if ev["kind"] == "integrate":
            integrals[ev["image"]] = ev
        elif ev["kind"] == "detect":
            boxes[ev["image"]] = [tuple(d["bbox"]) for d in ev["detections"]
                                  if d["confidence"] >= args.min_confidence]
            integrals[ev["image"]]["confidences"] = [d["confidence"] for d in ev["detections"]]
        elif ev["kind"] == "confirm":
            confirms.append(ev)
        elif ev["kind"] == "summary":
            summary = ev
    out = _fresh_dir(run / "report")
    lines = [f"# Mission {summary.get('mission_id', run.name)}", "",
             f"- stop reason: {summary.get('stop_reason')}",
             f"- path length: {summary.get('path_length_m')} m",
             f"- flight time: {summary.get('flight_time_s')} s",
             f"- cells visited: {summary.get('cells_visited')}", "",
             "| image | frames | valid px | detections | max confidence |",
             "|---|---|---|---|---|"]
    for image_id, ev in integrals.items():
        conf = ev.get("confidences", [])
        top = f"{max(conf):.3f}" if conf else "-"
        lines.append(f"| {image_id} | {ev['frames']} | {ev['valid_px']} | {len(conf)} | {top} |")
    if confirms:
        lines += ["", "| image | resample image | C0 | C1 | dC | verdict |",
                  "|---|---|---|---|---|---|"]
        for ev in confirms:
            lines.append(f"| {ev['image']} | {ev['resample_image']} | {ev['c0']:.3f} | "
                         f"{ev['c1']:.3f} | {ev['delta']:+.3f} | {ev['verdict']} |")
    rasters = [(i, run / "rasters" / ev["raster"]) for i, ev in integrals.items()
               if "raster" in ev and (run / "rasters" / ev["raster"]).is_file()]
    if rasters:
        write_pgm(out / "gallery.pgm", _gallery(rasters, boxes, args.columns, args.scale))
        lines += ["", f"Gallery: `gallery.pgm`, {len(rasters)} integrals in row-major order "
                      f"({', '.join(i for i, _ in rasters)}), downsampled {args.scale}x, "
                      f"detections >= {args.min_confidence} outlined."]
    (out / "report.md").write_text("\n".join(lines) + "\n")
    manifest = run / MANIFEST
    if manifest.is_file():
        record = json.loads(manifest.read_text())
        files = sorted(p for p in run.rglob("*") if p.is_file() and p.name != MANIFEST)
        record["files"] = {p.relative_to(run).as_posix(): sha256_file(p) for p in files}
        manifest.write_text(json.dumps(record, indent=2, sort_keys=True, default=list) + "\n")
    print(f"wrote {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aosearch",
                                description="Simulated airborne optical sectioning search.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("--config", required=True, help="scenario INI file")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="global seed (overrides the config)")
        sp.add_argument("--verbose", action="store_true",
                        help="also emit unconfirmed detections")

    sp = sub.add_parser("simulate", help="write scene, DEM and optional raw frames")
    scenario_args(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("search", help="run a predefined or adaptive mission")
    scenario_args(sp)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("eval", help="AP, PF and PI of a search output directory")
    sp.add_argument("run", help="directory written by 'search'")
    sp.add_argument("--out", help="write the CSV here instead of stdout")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("fit-curve", help="fit AP(N) = aN/(b+N) to N,AP rows")
    sp.add_argument("points", nargs="?",
                    help="CSV with N,AP rows (default: the bundled all-flights table)")
    sp.add_argument("--penalty", type=float, default=10.0,
                    help="weight of positive residuals (default 10)")
    sp.add_argument("--json", action="store_true", help="print a JSON record")
    sp.set_defaults(func=cmd_fit_curve)

    sp = sub.add_parser("ap-sweep", help="AP versus N on the standard scene suite")
    sp.add_argument("--scenes", type=int, default=50)
    sp.add_argument("--n", default="1,5,10,15,20,25,30", help="comma-separated N values")
    sp.add_argument("--seed", type=int, default=0, help="first scene seed")
    sp.add_argument("--no-noise", action="store_true", help="use perfect poses")
    sp.add_argument("--out", help="also write ap_vs_n.csv and a manifest here")
    sp.set_defaults(func=cmd_ap_sweep)

    sp = sub.add_parser("render-report", help="summary table and raster gallery of a search run")
    sp.add_argument("run", help="directory written by 'search'")
    sp.add_argument("--columns", type=int, default=4, help="gallery tiles per row")
    sp.add_argument("--scale", type=int, default=4, help="gallery downsampling factor")
    sp.add_argument("--min-confidence", type=float, default=0.10,
                    help="outline detections at or above this confidence")
    sp.set_defaults(func=cmd_render_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"aosearch {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, FitError, KeyError, ValueError, OSError) as exc:
        print(f"aosearch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
