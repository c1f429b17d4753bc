"""Command-line entry point: synth, train, eval, render, ablate, report.

Exit codes: 0 on success, 1 for usage errors (bad or missing flags,
invalid values), 2 for runtime failures (unreadable files, divergence).
Training flags mirror :class:`RunConfig` one-to-one; their defaults are
the method's published constants.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np
import torch

from .estimator import IncrementalRadianceField
from .evaluation import evaluate_trajectory, format_metrics_table, psnr
from .exceptions import Diverged, DomainError, FormatError, IncrementalNerfError
from .field import load_checkpoint, save_checkpoint
from .geometry import CameraPose, Intrinsics
from .rendering import SamplingConfig, render_image
from .synthdata import make_synthetic, open_dataset, read_poses, save_dataset, write_poses

logger = logging.getLogger("incremental_nerf")

_TRAIN_DEFAULTS = IncrementalRadianceField().get_params()

RunConfig = dataclasses.make_dataclass(
    "RunConfig",
    [("data", str), ("out", str)]
    + [(k, type(v), dataclasses.field(default=v)) for k, v in _TRAIN_DEFAULTS.items()],
    namespace={
        "__doc__": "Every knob of a training run; written verbatim as config.json.",
        "estimator": lambda self: IncrementalRadianceField(
            **{k: getattr(self, k) for k in _TRAIN_DEFAULTS}
        ),
    },
)

_CHOICES = {"mode": ("incremental", "joint"), "dtype": ("float64", "float32")}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _flag(name):
    return "--" + name.replace("_", "-")


def _add_train_flags(p, skip=()):
    group = p.add_argument_group("training")
    for name, default in _TRAIN_DEFAULTS.items():
        if name in skip:
            continue
        group.add_argument(_flag(name), type=type(default), default=default,
                           choices=_CHOICES.get(name), metavar=None if name in _CHOICES else "")


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def build_parser():
    parser = _Parser(prog="incremental-nerf", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log every phase")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    add = lambda name, **kw: sub.add_parser(name, parents=[common], **kw)  # noqa: E731

    p = add("synth", help="render a synthetic dataset with ground truth")
    p.add_argument("--kind", choices=("arc", "forward"), default="arc")
    p.add_argument("--count", type=int, default=12)
    p.add_argument("--step-deg", type=float, default=15.0, help="yaw per arc step")
    p.add_argument("--step", type=float, default=0.1, help="translation per forward step")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--fov", type=float, default=50.0)
    p.add_argument("--blobs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oversample", type=int, default=1024)
    p.add_argument("--out", required=True)

    p = add("train", help="recover poses, focal and field")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)

    p = add("eval", help="trajectory errors and optional PSNR")
    p.add_argument("--data", required=True, help="dataset with ground-truth poses")
    p.add_argument("--poses", required=True, help="estimated poses file")
    p.add_argument("--checkpoint", help="field checkpoint; enables PSNR")
    p.add_argument("--focal", type=float, help="estimated focal (default: run summary)")
    p.add_argument("--psnr", action="store_true", help="require PSNR")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write metrics JSON here")

    p = add("render", help="render views from a checkpoint and a poses file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--focal", type=float, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--t-near", type=float, default=0.1)
    p.add_argument("--t-far", type=float, default=6.0)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("ablate", help="cross product of xi and N_glob, coarse and fine rows")
    p.add_argument("--data", required=True)
    p.add_argument("--xi", type=_int_list, default=[900], dest="xi_list")
    p.add_argument("--nglob", type=_int_list, default=[5], dest="nglob_list")
    p.add_argument("--out", help="write rows as JSON lines here")
    _add_train_flags(p, skip=("xi", "n_glob"))

    p = add("report", help="summarize a run directory's phase log")
    p.add_argument("--run", required=True)
    return parser


# --- commands -------------------------------------------------------------

def cmd_synth(args):
    if args.count < 2 or args.size < 1 or args.oversample < 2:
        raise UsageError("need --count >= 2, --size >= 1, --oversample >= 2")
    ds = make_synthetic(args.kind, args.count, args.size, step=args.step, step_deg=args.step_deg,
                        radius=args.radius, fov=args.fov, n_blobs=args.blobs, seed=args.seed,
                        oversample=args.oversample)
    save_dataset(args.out, ds)
    print(f"wrote {ds.count} images ({ds.width}x{ds.height}, {args.kind}) to {args.out}")
    return 0


def _config_from_args(args):
    values = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)}
    return RunConfig(**values)


def _pose_rows(rows):
    return [CameraPose(r[:3], r[3:]) for r in np.asarray(rows)]


def cmd_train(args):
    config = _config_from_args(args)
    est = config.estimator()
    dataset = open_dataset(config.data)
    os.makedirs(config.out, exist_ok=True)
    with open(os.path.join(config.out, "config.json"), "w") as fh:
        json.dump(dataclasses.asdict(config), fh, indent=2, sort_keys=True)
    log_path = os.path.join(config.out, "run_log.jsonl")
    start = time.perf_counter()
    with open(log_path, "w") as log:
        def record(rec):
            log.write(rec.to_json() + "\n")
            log.flush()

        try:
            est.fit(dataset.images, on_phase=record)
        except Diverged as exc:
            log.write(json.dumps({"phase": exc.phase, "image_index": exc.image_index,
                                  "level": exc.level, "error": str(exc)}) + "\n")
            raise
    save_checkpoint(os.path.join(config.out, "field.ckpt"), est.field_)
    write_poses(os.path.join(config.out, "poses.txt"), _pose_rows(est.poses_))
    for snap in est.snapshots_:
        rows = np.hstack([snap["rotations"], snap["translations"]])
        write_poses(os.path.join(config.out, f"poses_level{snap['level']}.txt"), _pose_rows(rows))
    summary = {
        "focal": est.focal_,
        "width": est.image_size_[0],
        "height": est.image_size_[1],
        "total_steps": est.state_.total_steps,
        "levels": [{"level": s["level"], "width": s["width"], "focal": s["focal"]}
                   for s in est.snapshots_],
    }
    with open(os.path.join(config.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    elapsed = time.perf_counter() - start
    print(f"{config.mode} run on {dataset.count} images: {summary['total_steps']} steps "
          f"in {elapsed:.1f}s, focal {est.focal_:.3f}")
    print(f"outputs in {config.out}")
    return 0


def _summary_focal(poses_path):
    path = os.path.join(os.path.dirname(os.path.abspath(poses_path)), "summary.json")
    if not os.path.isfile(path):
        return None
    with open(path) as fh:
        return json.load(fh).get("focal")


def cmd_eval(args):
    if args.psnr and not args.checkpoint:
        raise UsageError("--psnr needs --checkpoint")
    dataset = open_dataset(args.data)
    if not dataset.has_ground_truth:
        raise UsageError(f"{args.data} has no ground-truth poses")
    est = read_poses(args.poses)
    if len(est) != dataset.count:
        raise UsageError(f"{len(est)} estimated poses for {dataset.count} images")
    gt = dataset.pose_array()
    rot = np.array([p.rotation for p in est])
    trans = np.array([p.translation for p in est])
    metrics = evaluate_trajectory(rot, trans, gt[:, :3], gt[:, 3:])
    row = {"scene": os.path.basename(os.path.normpath(args.data)),
           "delta_r": metrics.delta_r, "delta_t": metrics.delta_t, "psnr": None}
    if args.checkpoint:
        focal = args.focal if args.focal is not None else _summary_focal(args.poses)
        if focal is None:
            raise UsageError("PSNR needs --focal (no summary.json next to the poses file)")
        field = load_checkpoint(args.checkpoint)
        intr = Intrinsics(focal, dataset.width, dataset.height)
        sampling = SamplingConfig(samples_per_ray=args.samples, stratified=False)
        fn = field.as_callable()
        scores = [psnr(render_image(fn, pose, intr, sampling), img)
                  for pose, img in zip(est, dataset.images.astype(np.float64))]
        row["psnr"] = float(np.mean(scores))
    print(format_metrics_table([row]))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(row, fh, indent=2)
    return 0


def cmd_render(args):
    from PIL import Image

    field = load_checkpoint(args.checkpoint)
    poses = read_poses(args.poses)
    intr = Intrinsics(args.focal, args.width, args.height)
    sampling = SamplingConfig(args.t_near, args.t_far, args.samples)
    gen = torch.Generator().manual_seed(args.seed)
    os.makedirs(args.out, exist_ok=True)
    for i, pose in enumerate(poses):
        img = render_image(field.as_callable(), pose, intr, sampling, gen)
        data = (np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)
        Image.fromarray(data).save(os.path.join(args.out, f"view_{i:04d}.ppm"))
    print(f"rendered {len(poses)} views to {args.out}")
    return 0


def ablation_label(stage, xi, n_glob):
    return f"{stage}, ξ={xi}, N_glob={n_glob}"


def cmd_ablate(args):
    dataset = open_dataset(args.data)
    if not dataset.has_ground_truth:
        raise UsageError(f"{args.data} has no ground-truth poses")
    gt = dataset.pose_array()
    base = {k: getattr(args, k) for k in _TRAIN_DEFAULTS if k not in ("xi", "n_glob")}
    rows = []
    for xi in args.xi_list:
        for n_glob in args.nglob_list:
            est = IncrementalRadianceField(xi=xi, n_glob=n_glob, **base)
            try:
                est.fit(dataset.images)
            except Diverged as exc:
                logger.warning("cell xi=%d n_glob=%d diverged: %s", xi, n_glob, exc)
                for stage in ("C", "F"):
                    rows.append({"scene": ablation_label(stage, xi, n_glob), "status": "diverged"})
                continue
            for stage, level in (("C", 0), ("F", -1)):
                m = est.trajectory_metrics(gt, level)
                rows.append({"scene": ablation_label(stage, xi, n_glob),
                             "delta_r": m.delta_r, "delta_t": m.delta_t, "psnr": None})
    print(format_metrics_table(rows))
    if args.out:
        with open(args.out, "w") as fh:
            for row in rows:
                fh.write(json.dumps({"seed": args.seed, **row}, ensure_ascii=False) + "\n")
    return 0


def cmd_report(args):
    path = os.path.join(args.run, "run_log.jsonl")
    if not os.path.isfile(path):
        raise UsageError(f"no run log at {path}")
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{lineno}: {exc}", field="run_log") from exc
    print("phase\timage\tlevel\tepochs\tstart_loss\tend_loss\tseconds")
    for r in records:
        if "error" in r:
            print(f"# diverged: {r['error']}")
            continue
        print(f"{r['phase']}\t{r['image_index']}\t{r['level']}\t{r['epochs']}\t"
              f"{r['start_loss']:.6g}\t{r['end_loss']:.6g}\t{r['wall_time']:.1f}")
    phases = [r for r in records if "error" not in r]
    counts = {}
    for r in phases:
        counts[r["phase"]] = counts.get(r["phase"], 0) + 1
    total = sum(r["epochs"] for r in phases)
    seconds = sum(r["wall_time"] for r in phases)
    print(f"{len(phases)} phases ({', '.join(f'{k} {v}' for k, v in counts.items())}), "
          f"{total} steps, {seconds:.1f}s")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "render": cmd_render,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DomainError) as exc:
        print(f"incremental-nerf {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Diverged as exc:
        print(f"incremental-nerf {args.command}: diverged: {exc}", file=sys.stderr)
        return 2
    except (IncrementalNerfError, OSError) as exc:
        print(f"incremental-nerf {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
