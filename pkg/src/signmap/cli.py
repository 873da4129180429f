"""Command line entry point: ``signmap {position,turns,sensitivity,synth,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline_io as io
from .errors import SignmapError
from .pipeline import EXIT_FAILURE, EXIT_OK, MODES, gps_to_enu, load_config, run_pipeline, write_failure_summary
from .turns import DEFAULT_EPSILON, DEFAULT_HALF_WINDOW, extract_turn_ranges

log = logging.getLogger("signmap")


def _add_position(sub):
    p = sub.add_parser("position", help="position signs from detections, GPS and provider outputs")
    p.add_argument("--config", help="JSON pipeline config; flags below override it")
    for key in ("detections", "gps", "poses-geometric", "poses-geometric-lc", "poses-learned",
                "depths-dir", "intrinsics", "intrinsics-pairs", "ground-truth", "output-dir"):
        p.add_argument(f"--{key}")
    p.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--edge-margin", type=float)
    p.add_argument("--short-margin", type=int)
    p.add_argument("--depth-cutoff", type=float)
    p.add_argument("--turn-epsilon", type=float)
    p.add_argument("--turn-half-window", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_position)


def _overrides(args, skip=("config", "func", "verbose", "command")) -> dict:
    return {k: v for k, v in vars(args).items() if k not in skip and v is not None}


def cmd_position(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    try:
        run = run_pipeline(cfg)
    except (SignmapError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        write_failure_summary(cfg.output_dir, exc)
        return EXIT_FAILURE
    print(json.dumps(run.summary, indent=2))
    return run.exit_code


def cmd_turns(args) -> int:
    gps = io.read_gps(args.gps)
    origin = next(iter(gps.values()))
    enu = gps_to_enu(gps, origin)
    frames = list(enu)
    ranges = extract_turn_ranges(np.array([enu[f] for f in frames]), args.epsilon, args.half_window,
                                 frame_ids=frames)
    if args.output:
        io.write_turn_ranges(args.output, ranges)
    else:
        print("start_frame,end_frame")
        for a, b in ranges:
            print(f"{a},{b}")
    return EXIT_OK


def _scene_spec(args):
    from .synthetic import SceneSpec

    d = io.read_json(args.scene) if getattr(args, "scene", None) else {}
    for key in ("seed", "shape", "n_frames", "n_signs", "pixel_sigma", "gps_sigma", "depth_sigma"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    return SceneSpec.from_dict(d)


def cmd_synth(args) -> int:
    from .synthetic import export_scene, generate_scene

    scene = generate_scene(_scene_spec(args))
    out = export_scene(scene, args.output)
    print(f"wrote {len(scene.frame_ids)} frames, {len(scene.sign_positions)} signs to {out}")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    from .sensitivity import SweepSpec, run_interaction, run_oat, write_csv, write_svg_heatmap
    from .synthetic import generate_scene

    scene = generate_scene(_scene_spec(args))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "oat":
        spec = SweepSpec(args.axis, args.pct_min, args.pct_max, args.steps, args.repeats, args.sweep_seed)
        write_csv(out / "oat.csv", run_oat(spec, scene))
    else:
        spec = SweepSpec("both", args.pct_min, args.pct_max, args.steps, args.repeats, args.sweep_seed)
        grid = run_interaction(spec, scene)
        write_csv(out / "interaction.csv", grid.flat())
        if args.svg:
            write_svg_heatmap(out / "interaction.svg", grid)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .fusion import evaluate

    results = io.read_signs_geojson(args.signs, args.relative)
    report = evaluate(results, io.read_ground_truth(args.ground_truth), gate=args.gate)
    d = report.to_dict()
    if args.output:
        io.write_json(args.output, d)
    print(json.dumps({k: v for k, v in d.items() if k != "signs"}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="signmap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_position(sub)

    p = sub.add_parser("turns", help="emit turn frame ranges from a GPS track")
    p.add_argument("--gps", required=True)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--half-window", type=int, default=DEFAULT_HALF_WINDOW)
    p.add_argument("--output")
    p.set_defaults(func=cmd_turns)

    p = sub.add_parser("synth", help="generate and export a synthetic scene")
    p.add_argument("--scene", help="scene spec JSON")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--shape", choices=("straight", "arc", "composite"))
    p.add_argument("--n-frames", type=int)
    p.add_argument("--n-signs", type=int)
    p.add_argument("--pixel-sigma", type=float)
    p.add_argument("--gps-sigma", type=float)
    p.add_argument("--depth-sigma", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sensitivity", help="intrinsics sensitivity sweep on a synthetic scene")
    p.add_argument("kind", choices=("oat", "interaction"))
    p.add_argument("--scene", help="scene spec JSON")
    p.add_argument("--seed", type=int, help="scene seed")
    p.add_argument("--pixel-sigma", type=float)
    p.add_argument("--axis", choices=("focal", "principal", "both"), default="both")
    p.add_argument("--pct-min", type=float)
    p.add_argument("--pct-max", type=float)
    p.add_argument("--steps", type=int, default=7)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--sweep-seed", type=int, default=0)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("eval", help="compare positioned signs to ground truth")
    p.add_argument("--signs", required=True, help="signs.geojson from a position run")
    p.add_argument("--relative", help="relative.json sidecar")
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--gate", type=float, default=5.0)
    p.add_argument("--output")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "sensitivity":
        default = (-15.0, 15.0) if args.kind == "oat" else (-5.0, 5.0)
        args.pct_min = default[0] if args.pct_min is None else args.pct_min
        args.pct_max = default[1] if args.pct_max is None else args.pct_max
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
