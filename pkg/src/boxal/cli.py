"""Command-line interface.

Subcommands: init, iterate, loop, rank, sample, evaluate, ttest,
simulate-run. Run parameters come from a flat JSON config file mirroring
RunConfig; CLI flags override file values.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .certainty import image_certainty
from .data_io import apply_thresholds, load_ground_truth, load_image_passes, load_manifest
from .errors import BoxalError
from .evaluation import coco_map, load_predictions, ttest_two_sided
from .orchestrator import (
    FileWaitAdapter,
    RunConfig,
    SimulatorDetectorAdapter,
    init_run,
    load_config,
    run_iteration,
    run_loop,
)
from .sampling import sample_min_certainty, sample_random
from .simulator import generate_world, load_world, save_world

CONFIG_FLAGS = (
    ("passes-n", int),
    ("dropout-p", float),
    ("confidence", float),
    ("nms-iou", float),
    ("match-iou", float),
    ("batch-size", int),
    ("iterations", int),
    ("epoch-base", int),
    ("epoch-increment", int),
    ("strategy", str),
    ("seed", int),
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for flag, ftype in CONFIG_FLAGS:
        parser.add_argument(f"--{flag}", type=ftype, default=None)


def _build_config(args: argparse.Namespace, config_path: str | None) -> RunConfig:
    doc: dict = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    for flag, _ in CONFIG_FLAGS:
        key = flag.replace("-", "_")
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    return RunConfig.from_dict(doc)


def _make_adapter(args: argparse.Namespace, run_dir: Path):
    if args.adapter == "simulator":
        world_path = run_dir / "world.json"
        if not world_path.exists():
            raise BoxalError(f"simulator adapter needs {world_path}")
        return SimulatorDetectorAdapter(load_world(world_path), run_dir)
    return FileWaitAdapter(timeout=args.adapter_timeout)


def _cmd_init(args) -> int:
    config = _build_config(args, args.config)
    manifest = load_manifest(args.manifest)
    ground_truth = None
    if args.ground_truth:
        ground_truth = load_ground_truth(args.ground_truth, kappa=len(manifest.catalog))
    state = init_run(manifest, config, args.out, ground_truth)
    print(f"initialized run at {args.out}: |T_0|={len(state.training_ids)}, "
          f"|P_0|={len(state.pool_ids)}")
    return 0


def _cmd_iterate(args) -> int:
    run_dir = Path(args.run)
    adapter = _make_adapter(args, run_dir)
    state = run_iteration(run_dir, adapter)
    print(f"iteration complete: now at iteration {state.iteration}, "
          f"|T|={len(state.training_ids)}, |P|={len(state.pool_ids)}")
    return 0


def _cmd_loop(args) -> int:
    run_dir = Path(args.run)
    adapter = _make_adapter(args, run_dir)
    iterations = args.iterations
    if iterations is None:
        iterations = load_config(run_dir).iterations
    state = run_loop(run_dir, adapter, iterations)
    print(f"loop complete: iteration {state.iteration}, |T|={len(state.training_ids)}; "
          f"report at {run_dir / 'log.csv'}")
    return 0


def _cmd_rank(args) -> int:
    config = _build_config(args, args.config)
    manifest = load_manifest(args.manifest)
    kappa = len(manifest.catalog)
    images = load_image_passes(args.detections, expected_n=config.passes_n, kappa=kappa)
    rows = []
    for img in images:
        thresholded = apply_thresholds(img, config.confidence, config.nms_iou)
        ic = image_certainty(thresholded, kappa, config.passes_n, config.match_iou)
        t = ic.min_triple
        rows.append(
            (
                ic.image_id,
                ic.c_min,
                ic.set_count,
                t.c_sem if t else 1.0,
                t.c_spa if t else 1.0,
                t.c_occ if t else 1.0,
            )
        )
    rows.sort(key=lambda r: (r[1], r[0]))
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["image_id", "c_min", "set_count", "min_c_sem", "min_c_spa", "min_c_occ"])
        for image_id, c_min, count, c_sem, c_spa, c_occ in rows:
            writer.writerow(
                [image_id, format(c_min, ".9g"), count, format(c_sem, ".9g"),
                 format(c_spa, ".9g"), format(c_occ, ".9g")]
            )
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_sample(args) -> int:
    if args.strategy == "min_certainty":
        if not args.ranking:
            raise BoxalError("min_certainty sampling needs --ranking (CSV from `boxal rank`)")
        with open(args.ranking, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            ranking = [(row["image_id"], float(row["c_min"])) for row in reader]
        ranking.sort(key=lambda r: (r[1], r[0]))
        chosen = sample_min_certainty(ranking, args.n)
    else:
        if not args.pool:
            raise BoxalError("random sampling needs --pool (one image_id per line)")
        with open(args.pool, "r", encoding="utf-8") as fh:
            pool_ids = [line.strip() for line in fh if line.strip()]
        chosen = sample_random(pool_ids, args.n, args.seed, args.iteration)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for image_id in chosen:
            out.write(image_id + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    gt = load_ground_truth(args.ground_truth, kappa=len(manifest.catalog))
    preds = load_predictions(args.predictions)
    result = coco_map(preds, gt, manifest.catalog)
    report = {
        "map": result.map_score,
        "per_category_ap": {
            manifest.catalog.names[c]: ap for c, ap in sorted(result.per_category_ap.items())
        },
        "true_positives": result.true_positives,
        "false_positives": result.false_positives,
        "false_negatives": result.false_negatives,
    }
    if args.out_report:
        with open(args.out_report, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    else:
        json.dump(report, sys.stdout, indent=2)
        sys.stdout.write("\n")
    if args.out_f1:
        with open(args.out_f1, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "f1"])
            for image_id in sorted(result.per_image_f1):
                writer.writerow([image_id, format(result.per_image_f1[image_id], ".9g")])
    return 0


def _read_column(path: str) -> list[float]:
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                values.append(float(line.split(",")[0]))
            except ValueError:
                continue  # header line
    return values


def _cmd_ttest(args) -> int:
    x = _read_column(args.x)
    y = _read_column(args.y)
    result = ttest_two_sided(x, y)
    print(f"t={format(result.statistic, '.9g')} df={result.degrees_of_freedom} "
          f"p={format(result.p_value, '.9g')}")
    return 0


def _cmd_simulate_run(args) -> int:
    run_dir = Path(args.out)
    config = _build_config(args, args.config)
    world = generate_world(
        seed=args.seed if args.seed is not None else config.seed,
        image_count=args.images,
        kappa=args.categories,
        objects_per_image=(args.objects_min, args.objects_max),
        initial_training=args.initial_training,
        validation=args.validation,
        test=args.test,
    )
    run_dir.mkdir(parents=True, exist_ok=True)
    save_world(world, run_dir / "world.json")
    init_run(world.manifest, config, run_dir, world.ground_truth())
    adapter = SimulatorDetectorAdapter(world, run_dir)
    adapter.initialize(world.manifest.initial_training)
    state = run_loop(run_dir, adapter, config.iterations)
    print(f"simulate-run complete: iteration {state.iteration}, "
          f"|T|={len(state.training_ids)}; report at {run_dir / 'log.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boxal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a run directory from a manifest and config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--ground-truth", default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_init)

    for name, func in (("iterate", _cmd_iterate), ("loop", _cmd_loop)):
        p = sub.add_parser(name, help=f"{name} an existing run")
        p.add_argument("--run", required=True)
        p.add_argument("--adapter", choices=["simulator", "file"], default="simulator")
        p.add_argument("--adapter-timeout", type=float, default=3600.0)
        if name == "loop":
            p.add_argument("--iterations", type=int, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("rank", help="rank a detections file by ascending c_min")
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("sample", help="select a batch of image ids")
    p.add_argument("--strategy", choices=["min_certainty", "random"], default="min_certainty")
    p.add_argument("--ranking", default=None, help="ranking CSV (min_certainty)")
    p.add_argument("--pool", default=None, help="pool id list, one per line (random)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iteration", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("evaluate", help="COCO-style mAP and per-image F1")
    p.add_argument("--predictions", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-report", default=None)
    p.add_argument("--out-f1", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ttest", help="two-sided unpaired Student's t-test on two CSV columns")
    p.add_argument("x")
    p.add_argument("y")
    p.set_defaults(func=_cmd_ttest)

    p = sub.add_parser("simulate-run", help="generate a synthetic world and run the full loop")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--images", type=int, default=500)
    p.add_argument("--categories", type=int, default=10)
    p.add_argument("--objects-min", type=int, default=1)
    p.add_argument("--objects-max", type=int, default=4)
    p.add_argument("--initial-training", type=int, default=None)
    p.add_argument("--validation", type=int, default=None)
    p.add_argument("--test", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_simulate_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BoxalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
