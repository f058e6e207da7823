"""Command-line entry point.

Exit status: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import DataError, VirtualLidarError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
LOG_ENV = "RS2AD_LOG"

log = logging.getLogger("virtual_lidar")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _configure_logging():
    level = os.environ.get(LOG_ENV, "off").lower()
    levels = {"off": None, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"{LOG_ENV} must be one of off, info, debug")
    if levels[level] is not None:
        logging.basicConfig(level=levels[level], stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _add_target_flags(p):
    p.add_argument("--lidar-config", required=True, help="sensor config file (TOML key-value text)")
    sel = p.add_mutually_exclusive_group(required=True)
    sel.add_argument("--target-id", help="label id of the vehicle carrying the virtual sensor")
    sel.add_argument("--all-vehicles", action="store_true", help="generate a view for every vehicle label")
    p.add_argument("--out-dir", required=True, help="directory for generated clouds, labels and diagnostics")
    p.add_argument("--ego-cull", action="store_true", help="drop points inside the target's own box (+0.2 m)")
    p.add_argument(
        "--rotation-format",
        choices=("rotvec", "yaw"),
        default="rotvec",
        help="label rotation encoding: axis-angle triple (default) or scalar yaw",
    )


def build_parser():
    parser = _Parser(prog="virtual-lidar", description="Vehicle-view LiDAR synthesis from roadside frames.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="generate vehicle views for one frame")
    p.add_argument("--cloud", required=True, help="roadside cloud (.bin, float32 x y z intensity)")
    p.add_argument("--labels", required=True, help="world-frame label JSON")
    p.add_argument("--ground-mask", help="optional per-point ground mask (one byte per point)")
    _add_target_flags(p)

    p = sub.add_parser("batch", help="generate views for every frame in a manifest")
    p.add_argument("--manifest", required=True, help="tab-separated lines: cloud, labels[, mask]")
    p.add_argument("--jobs", type=int, default=1, help="frames processed concurrently (default 1)")
    _add_target_flags(p)

    p = sub.add_parser("segment", help="write a ground mask for a sensor-frame cloud")
    p.add_argument("--cloud", required=True, help="sensor-frame cloud (.bin)")
    p.add_argument("--out-mask", required=True, help="output mask file (one byte per point)")

    p = sub.add_parser("metrics", help="compare two class histograms")
    p.add_argument("--a", required=True, help='histogram JSON {"classes": [...], "weights": [...]}')
    p.add_argument("--b", required=True, help="second histogram JSON")
    p.add_argument("--out", help="write the report here instead of stdout")

    p = sub.add_parser("synth", help="sample an analytic scene description")
    p.add_argument("--scene", required=True, help="scene JSON")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    p.add_argument("--out-cloud", required=True, help="output world-frame cloud (.bin)")
    p.add_argument("--out-labels", help="output vehicle labels JSON")
    p.add_argument("--out-mask", help="output ground truth mask (one byte per point)")
    p.add_argument("--lidar-config", help="with --oracle-target: sensor config for the reference cast")
    p.add_argument("--oracle-target", help="vehicle id to cast the exact reference scan from")
    p.add_argument("--out-oracle", help="output reference scan (.bin, lidar frame)")

    p = sub.add_parser("stats", help="summarise a cloud")
    p.add_argument("--cloud", required=True, help="cloud (.bin)")
    p.add_argument("--lidar-config", help="sensor config; adds per-beam counts")
    return parser


def _run_config(args):
    from .pipeline import RunConfig

    return RunConfig(
        lidar_config=args.lidar_config,
        target_id=args.target_id,
        all_vehicles=args.all_vehicles,
        out_dir=args.out_dir,
        ego_cull=args.ego_cull,
        rotation_format=args.rotation_format,
    )


def _emit(doc, out=None):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_generate(args):
    from .io import FrameBundle
    from .pipeline import generate

    bundle = FrameBundle(args.cloud, args.labels, Path(args.cloud).stem, args.ground_mask)
    paths = generate(bundle, _run_config(args))
    _emit({tid: {k: str(v) for k, v in p.items()} for tid, p in paths.items()})


def cmd_batch(args):
    from .io import read_manifest
    from .pipeline import run_batch

    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    bundles = read_manifest(args.manifest)
    results = run_batch(bundles, _run_config(args), args.jobs)
    _emit({fid: sorted(paths) for fid, paths in results.items()})


def cmd_segment(args):
    from .ground_seg import segment
    from .io import read_cloud, write_mask

    cloud = read_cloud(args.cloud, "lidar")
    split = segment(cloud)
    write_mask(args.out_mask, split.mask)
    _emit({"points": len(cloud), "ground": len(split.ground), "nonground": len(split.nonground)})


def cmd_metrics(args):
    from .io import read_histogram
    from .metrics import compare_histograms

    _emit(compare_histograms(read_histogram(args.a), read_histogram(args.b)), args.out)


def cmd_synth(args):
    from .alignment import world_to_lidar
    from .io import write_cloud, write_labels, write_mask
    from .lidar_model import default_pandar64, load_lidar_config
    from .synth import load_scene, oracle_cast, sample_scene

    scene = load_scene(args.scene)
    sampled = sample_scene(scene, args.seed)
    write_cloud(args.out_cloud, sampled.cloud)
    if args.out_labels:
        write_labels(args.out_labels, scene.vehicles)
    if args.out_mask:
        write_mask(args.out_mask, sampled.is_ground)
    report = {"points": len(sampled.cloud), "ground": int(sampled.is_ground.sum())}
    if args.oracle_target:
        if not args.out_oracle:
            raise UsageError("--oracle-target needs --out-oracle")
        from .pipeline import select_targets

        model = load_lidar_config(args.lidar_config) if args.lidar_config else default_pandar64()
        target = select_targets(scene.vehicles, args.oracle_target)[0]
        ref = oracle_cast(scene, world_to_lidar(target, model), model)
        write_cloud(args.out_oracle, ref.to_cloud())
        report["oracle_returns"] = len(ref)
    _emit(report)


def cmd_stats(args):
    from .io import read_cloud
    from .lidar_model import load_lidar_config
    from .metrics import cloud_stats

    model = load_lidar_config(args.lidar_config) if args.lidar_config else None
    _emit(cloud_stats(read_cloud(args.cloud, "lidar"), model))


COMMANDS = {
    "generate": cmd_generate,
    "batch": cmd_batch,
    "segment": cmd_segment,
    "metrics": cmd_metrics,
    "synth": cmd_synth,
    "stats": cmd_stats,
}


def main(argv=None):
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, VirtualLidarError, OSError, ValueError) as exc:
        print(f"virtual-lidar: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
