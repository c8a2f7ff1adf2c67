"""Command-line entry point.

    linesurf synth cube --noise 0.01 --outliers 10 --seed 1 -o cube.jsonl
    linesurf detect cube.jsonl -o planes.json
    linesurf reconstruct cube.jsonl --planes planes.json -o cube.obj --report report.json
    linesurf eval cube.obj truth.obj
    linesurf cube-grid -o grid.csv

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .arrangement import build_complex
from .evaluation import GRID_NOISE, GRID_OUTLIERS, compare_meshes, cube_experiment
from .lineio import (RoomSpec, furnished_room, load_line_cloud, save_line_cloud, synth_cube,
                     synth_room)
from .pipeline import PipelineConfig, dumps_report, reconstruct
from .ransac import DetectParams, detect_planes, dumps_planes, fuse_planes, loads_planes
from .surface import export_mesh, import_mesh

log = logging.getLogger("linesurf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline configuration (overrides --config)")
    g.add_argument("--config", help="flat key = value file")
    for f in dataclasses.fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool",) or isinstance(f.default, bool):
            g.add_argument(flag, dest=f.name, default=None, action=argparse.BooleanOptionalAction)
        else:
            g.add_argument(flag, dest=f.name, default=None)


def config_from_args(args) -> PipelineConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in dataclasses.fields(PipelineConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v if isinstance(v, bool) else str(v)
    try:
        return PipelineConfig.from_mapping(values)
    except (KeyError, ValueError, TypeError) as e:
        raise UsageError(str(e)) from e


class _Outputs:
    """Tracks written files so a failed stage leaves nothing half-done."""

    def __init__(self):
        self.paths: list[Path] = []

    def write_text(self, path, text: str) -> None:
        path = Path(path)
        self.paths.append(path)
        path.write_text(text)

    def register(self, path) -> Path:
        path = Path(path)
        self.paths.append(path)
        return path

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                p.unlink()
            except OSError:
                pass


# ------------------------------------------------------------------ commands

def cmd_synth(args, out: _Outputs) -> None:
    if args.scene == "cube":
        cloud = synth_cube(args.noise, args.outliers, args.seed)
    else:
        spec = furnished_room(args.noise, args.outlier_fraction, args.seed) if args.furnished \
            else RoomSpec(noise_std=args.noise, outlier_fraction=args.outlier_fraction,
                          seed=args.seed, textural_per_wall=16)
        cloud, gt = synth_room(spec)
        if args.truth:
            export_mesh(gt, out.register(args.truth))
    out.register(args.output)
    save_line_cloud(cloud, args.output)


def cmd_detect(args, out: _Outputs) -> None:
    cfg = config_from_args(args)
    cloud = load_line_cloud(args.cloud)
    state = detect_planes(cloud, cfg.detect_params(), cfg.seed)
    if cfg.fuse:
        state = fuse_planes(state, cfg.detect_params())
    out.write_text(args.output, dumps_planes(state))
    c = state.counts()
    print(f"planes {state.n_detected} -> {len(state.planes)}  L0 {c['L0']} L1 {c['L1']} L2 {c['L2']}")


def cmd_arrange(args, out: _Outputs) -> None:
    cfg = config_from_args(args)
    cloud = load_line_cloud(args.cloud)
    state = loads_planes(Path(args.planes).read_text(), cloud.segments)
    cx = build_complex(state.planes, cloud.bounding_box(cfg.bbox_inflate), max_planes=cfg.n_max)
    out.write_text(args.output, cx.dumps() + "\n")
    print(json.dumps(cx.summary(), sort_keys=True))


def cmd_reconstruct(args, out: _Outputs) -> None:
    cfg = config_from_args(args)
    cloud = load_line_cloud(args.cloud)
    planes = loads_planes(Path(args.planes).read_text(), cloud.segments) if args.planes else None
    rec = reconstruct(cloud, cfg, planes)
    export_mesh(rec.mesh, out.register(args.output))
    text = rec.report_json()
    if args.report:
        out.write_text(args.report, text)
    else:
        sys.stdout.write(text)
    if args.timings:
        out.write_text(args.timings, json.dumps(rec.timings, indent=1, sort_keys=True) + "\n")


def cmd_eval(args, out: _Outputs) -> None:
    recon, truth = import_mesh(args.recon), import_mesh(args.truth)
    acc = compare_meshes(recon, truth, args.samples, args.seed)
    text = json.dumps(acc.to_dict(), indent=1, sort_keys=True) + "\n"
    if args.output:
        out.write_text(args.output, text)
    else:
        sys.stdout.write(text)


def cmd_cube_grid(args, out: _Outputs) -> None:
    params = DetectParams(epsilon=args.epsilon, n_iter=args.n_iter, patience=args.patience)
    grid = cube_experiment(args.noise_levels, args.outlier_counts, args.runs, params, args.seed)
    text = grid.to_csv()
    if args.output:
        out.write_text(args.output, text)
    else:
        sys.stdout.write(text)


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="linesurf", description="Surface reconstruction from 3D line segments.")
    p.add_argument("--version", action="version", version=f"linesurf {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic line cloud")
    s.add_argument("scene", choices=["cube", "room"])
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--outliers", type=int, default=0, help="cube: outlier count")
    s.add_argument("--outlier-fraction", type=float, default=0.0, help="room: relative outliers")
    s.add_argument("--furnished", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--truth", help="room: ground-truth mesh output (.obj/.ply)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("detect", help="detect and fuse planes")
    d.add_argument("cloud")
    d.add_argument("-o", "--output", required=True)
    _add_config_flags(d)
    d.set_defaults(func=cmd_detect)

    a = sub.add_parser("arrange", help="build the plane arrangement")
    a.add_argument("cloud")
    a.add_argument("--planes", required=True)
    a.add_argument("-o", "--output", required=True)
    _add_config_flags(a)
    a.set_defaults(func=cmd_arrange)

    r = sub.add_parser("reconstruct", help="full pipeline to a mesh")
    r.add_argument("cloud")
    r.add_argument("-o", "--output", required=True, help="mesh file (.obj or .ply)")
    r.add_argument("--planes", help="skip detection, use this planes file")
    r.add_argument("--report", help="run report path (default stdout)")
    r.add_argument("--timings", help="wall-clock per stage (kept out of the report)")
    _add_config_flags(r)
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("eval", help="precision / completeness between two meshes")
    e.add_argument("recon")
    e.add_argument("truth")
    e.add_argument("--samples", type=int, default=200_000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("cube-grid", help="detection robustness grid on the cube")
    g.add_argument("--noise-levels", type=_floats, default=list(GRID_NOISE))
    g.add_argument("--outlier-counts", type=_ints, default=list(GRID_OUTLIERS))
    g.add_argument("--runs", type=int, default=20)
    g.add_argument("--epsilon", type=float, default=0.06)
    g.add_argument("--n-iter", type=int, default=100)
    g.add_argument("--patience", type=int, default=DetectParams.patience)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_cube_grid)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"linesurf: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = _Outputs()
    try:
        args.func(args, out)
    except UsageError as e:
        out.cleanup()
        print(f"linesurf: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every stage failure maps to exit 1
        out.cleanup()
        err = {"stage": args.command, "error": type(e).__name__, "message": str(e)}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
