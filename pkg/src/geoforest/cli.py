"""Command line interface: geodesic | train | predict | evaluate | phantom | serve."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from geoforest.errors import GeoForestError
from geoforest.evaluation import DiceReport, compare_modes, score_case
from geoforest.forest import load_forest
from geoforest.geodesic import GeodesicParams, geodesic_transform, load_annotation, normalize_distance
from geoforest.phantom import materialize_suite
from geoforest.pipeline import (
    MODE_BASELINE,
    MODE_GEODESIC,
    PipelineConfig,
    load_manifest,
    load_pipeline_config,
    run_prediction,
    run_training,
)
from geoforest.volume import normalize_ct, read_label_mhd, read_mhd, write_mhd


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geoforest",
        description="Semi-automatic 3D kidney segmentation: seeded geodesic "
                    "distance channels + random forest voxel classification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geodesic",
                       help="compute one normalized geodesic distance volume")
    p.add_argument("--ct", required=True, help="CT volume (.mhd)")
    p.add_argument("--annotation", required=True,
                   help="mid-slice outline JSON (target/slice_z/polygon)")
    p.add_argument("--gamma", type=float, default=1.0,
                   help="intensity weight coefficient (>= 0)")
    p.add_argument("--connectivity", type=int, default=26, choices=(6, 26))
    p.add_argument("--d-cap", type=float, default=300.0,
                   help="distance cap in mm for normalization")
    p.add_argument("--window", type=float, nargs=2, default=(-200.0, 500.0),
                   metavar=("LO", "HI"), help="CT normalization window in HU")
    p.add_argument("--out", required=True, help="output volume (.mhd)")

    p = sub.add_parser("train", help="train a forest on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--mode", choices=(MODE_BASELINE, MODE_GEODESIC),
                   help="override the config mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model JSON path")

    p = sub.add_parser("predict", help="predict label volumes for cases")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--case", help="single case id (default: all cases)")
    p.add_argument("--out", required=True,
                   help="output .mhd (single case) or directory")

    p = sub.add_parser("evaluate",
                       help="cross-validated baseline-vs-geodesic comparison")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="pipeline config JSON (shared settings)")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true",
                   help="skip PNG rendering")
    p.add_argument("--pred-dir",
                   help="score existing predictions (<case_id>.mhd) instead "
                        "of running the cross-validation")

    p = sub.add_parser("phantom", help="generate the synthetic phantom suite")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=12)
    p.add_argument("--seed", type=int, default=20_000)

    p = sub.add_parser("serve", help="run the annotation/segmentation service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--model", help="trained forest for segmentation jobs")
    p.add_argument("--config", help="pipeline config JSON")
    return parser


def _load_config(args) -> PipelineConfig:
    config = (load_pipeline_config(args.config) if getattr(args, "config", None)
              else PipelineConfig())
    mode = getattr(args, "mode", None)
    if mode:
        config = dataclasses.replace(config, mode=mode)
    return config


def _cmd_geodesic(args) -> int:
    ct = read_mhd(args.ct)
    params = GeodesicParams(gamma=args.gamma, connectivity=args.connectivity,
                            d_cap=args.d_cap)
    ann = load_annotation(args.annotation, ct.dims)
    norm = normalize_ct(ct, *args.window)
    dist = geodesic_transform(norm, ann.seed_mask_3d(ct.dims), params)
    write_mhd(normalize_distance(dist, params.d_cap), args.out)
    print(f"wrote {args.out} (target {ann.target}, slice {ann.slice_z})")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args)
    cases = load_manifest(args.manifest)
    forest = run_training(cases, config, args.seed, model_path=args.out)
    n_nodes = sum(t.n_nodes for t in forest.trees)
    print(f"wrote {args.out} ({len(forest.trees)} trees, {n_nodes} nodes, "
          f"channels {list(forest.channel_names)})")
    return 0


def _cmd_predict(args) -> int:
    config = _load_config(args)
    forest = load_forest(args.model)
    cases = load_manifest(args.manifest)
    if args.case:
        cases = [c for c in cases if c.case_id == args.case]
        if not cases:
            raise GeoForestError(f"case {args.case!r} not found in manifest")
        run_prediction(cases[0], forest, config, prediction_path=args.out)
        print(f"wrote {args.out}")
        return 0
    os.makedirs(args.out, exist_ok=True)
    for case in cases:
        out = os.path.join(args.out, f"{case.case_id}.mhd")
        run_prediction(case, forest, config, prediction_path=out)
        print(f"wrote {out}")
    return 0


def _cmd_evaluate(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    cases = load_manifest(args.manifest)
    if args.pred_dir:
        rows = []
        for case in cases:
            if not case.ground_truth_path:
                raise GeoForestError(f"case {case.case_id} has no ground truth")
            pred_path = os.path.join(args.pred_dir, f"{case.case_id}.mhd")
            pred = read_label_mhd(pred_path)
            truth = read_label_mhd(case.ground_truth_path)
            rows.extend(score_case(pred, truth, case.case_id, "provided", 0))
        report = DiceReport(rows, 0, args.seed, ("provided", "provided"))
        for row in rows:
            print(f"{row.case_id} {row.kidney} dice={row.dice:.4f}")
    else:
        config = _load_config(args)
        pair = (dataclasses.replace(config, mode=MODE_BASELINE),
                dataclasses.replace(config, mode=MODE_GEODESIC))
        report = compare_modes(cases, pair, args.k, args.seed,
                               progress=lambda msg: print(msg, flush=True))
        for kidney, s in report.summary().items():
            print(f"{kidney}: baseline median {s['baseline_median']:.4f}, "
                  f"proposed median {s['proposed_median']:.4f}, "
                  f"wins {s['wins']} / losses {s['losses']} / ties {s['ties']}")
    json_path = os.path.join(args.out_dir, "report.json")
    csv_path = os.path.join(args.out_dir, "report.csv")
    report.write_json(json_path)
    report.write_csv(csv_path)
    written = [json_path, csv_path]
    if not args.no_figures and not args.pred_dir:
        from geoforest.plots import render_dice_bars, render_improvement
        written += render_dice_bars(report, args.out_dir)
        extra = render_improvement(report, args.out_dir)
        if extra:
            written.append(extra)
    print("wrote " + ", ".join(written))
    return 0


def _cmd_phantom(args) -> int:
    manifest = materialize_suite(args.out_dir, count=args.count,
                                 base_seed=args.seed)
    print(f"wrote {manifest} ({args.count} cases)")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from geoforest.service import SegmentationService, create_app

    service = SegmentationService(args.manifest, model_path=args.model,
                                  config=_load_config(args))
    app = create_app(service)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


_COMMANDS = {
    "geodesic": _cmd_geodesic,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "phantom": _cmd_phantom,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "geodesic" and args.gamma < 0:
        parser.error("--gamma must be >= 0")
    if args.command == "geodesic" and args.d_cap <= 0:
        parser.error("--d-cap must be > 0")
    try:
        return _COMMANDS[args.command](args)
    except (GeoForestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
