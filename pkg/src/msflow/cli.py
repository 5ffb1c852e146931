"""Batch command-line surface: synthesize data, train, evaluate, render
error maps.

    msflow synth --out data/ --count 2 --seed 0
    msflow train --data data/ --out run/ --steps 300
    msflow eval  --checkpoint run/checkpoint.pt --data data/ --out report/ --iters 1,10
    msflow viz   --pred report/pred --gt data/scene_0000 --out maps/

Every command is deterministic given (seed, config, input bytes). Exit
code 0 only on full success; failures print one `error: ...` line on
stderr. MSF_NUM_THREADS caps torch's thread pool.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import torch

from .config import RunConfig
from .dataset import build_sequences, read_ground_truth, write_scene
from .inference import Predictions, evaluate_prediction, predict
from .kitti_io import (
    read_disparity_png,
    read_flow_png,
    write_disparity_png,
    write_flow_png,
)
from .metrics import (
    GroundTruth,
    aggregate_reports,
    occlusion_split,
    outlier_map,
    render_error_map,
    sceneflow_outliers,
)
from .model import SceneFlowModel
from .synthetic import SceneConfig, synth_scene
from .train import Trainer, load_checkpoint


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides: dict[str, str] = {}
    for flag, key in (
        ("seed", "seed"),
        ("steps", "steps"),
        ("combiner", "combiner"),
        ("occ_timing", "occ_timing"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    iters = getattr(args, "iters", None)
    if iters is not None and "," not in str(iters):
        overrides["iterations"] = str(iters)
    cfg.apply_overrides(overrides)
    cfg.validate()
    return cfg


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h, w = (int(v) for v in args.size.split("x"))
    for i in range(args.count):
        scene_cfg = SceneConfig(
            seed=cfg.seed + i, height=h, width=w, static=args.static
        )
        scene = synth_scene(scene_cfg)
        write_scene(scene, out / f"scene_{i:04d}")
        print(f"wrote {out / f'scene_{i:04d}'}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    torch.manual_seed(cfg.seed)
    batches = build_sequences(args.data)
    if not batches:
        raise ValueError(f"no sequences found under {args.data}")
    shape = tuple(batches[0].frames[0].shape[-2:])
    model = SceneFlowModel(cfg.model_config(shape), seed=cfg.seed)
    trainer = Trainer(model, batches, cfg, args.out)
    if args.resume:
        trainer.resume(args.resume)
    result = trainer.run()
    print(
        f"trained {result.steps} steps: total {result.first_total:.4f} -> "
        f"{result.last_total:.4f}; checkpoint {result.checkpoint}"
    )
    return 0


def _eval_iter_counts(arg: str) -> list[int]:
    counts = [int(v) for v in str(arg).split(",") if v.strip()]
    if not counts or any(c < 1 for c in counts):
        raise ValueError(f"bad --iters value {arg!r}")
    return counts


def _read_pred_dir(pred_dir: Path) -> Predictions:
    d1, _ = read_disparity_png(pred_dir / "disp_01.png")
    d2, _ = read_disparity_png(pred_dir / "disp2_01.png")
    fl, _ = read_flow_png(pred_dir / "flow_01.png")
    return Predictions(d1=d1, d2=d2, fl=fl)


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if args.pred:
        model, ckpt_cfg = None, cfg
    else:
        if not args.checkpoint:
            raise ValueError("either --checkpoint or --pred is required")
        model, ckpt_cfg, _ = load_checkpoint(args.checkpoint)
    combiner = args.combiner or ckpt_cfg.combiner
    counts = _eval_iter_counts(args.iters if args.iters else ckpt_cfg.iterations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    batches = build_sequences(args.data, max_frames=3)
    if not batches:
        raise ValueError(f"no sequences found under {args.data}")

    results: dict[str, dict[str, float]] = {}
    lines: list[str] = []
    for n in counts:
        reports = []
        for batch in batches:
            gt = read_ground_truth(batch.scene_dir, k=1)
            if args.inject_gt:
                pred = Predictions(d1=gt.d1, d2=gt.d2, fl=gt.fl)
            elif args.pred:
                pred = _read_pred_dir(Path(args.pred) / Path(batch.scene_dir).name)
            else:
                pred = predict(model, batch.triplet_a(), batch.cam, n)
            reports.append(evaluate_prediction(pred, gt, combiner))
            if args.save_pred and n == counts[-1]:
                pdir = out / "pred" / Path(batch.scene_dir).name
                pdir.mkdir(parents=True, exist_ok=True)
                write_disparity_png(pdir / "disp_01.png", pred.d1)
                write_disparity_png(pdir / "disp2_01.png", pred.d2)
                write_flow_png(pdir / "flow_01.png", pred.fl)
            if args.viz and n == counts[-1]:
                _write_error_maps(pred, gt, combiner, out / "maps" / Path(batch.scene_dir).name)
        agg = aggregate_reports(reports)
        results[f"N={n}"] = agg.as_dict()
        lines.append(f"[N={n}]")
        lines.append(agg.as_text().rstrip())
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    (out / "metrics.json").write_text(json.dumps(results, indent=2) + "\n")
    print((out / "metrics.txt").read_text().rstrip())
    return 0


def _component_maps(pred: Predictions, gt: GroundTruth, combiner: str):
    d1 = outlier_map(pred.d1, gt.d1, gt.valid_d1_occ, "disparity", combiner)
    d2 = outlier_map(pred.d2, gt.d2, gt.valid_d2_occ, "disparity", combiner)
    fl = outlier_map(pred.fl, gt.fl, gt.valid_fl_occ, "flow", combiner)
    joint = gt.valid_d1_occ & gt.valid_d2_occ & gt.valid_fl_occ
    sf = sceneflow_outliers(d1, d2, fl, joint)
    return {"d1": d1, "d2": d2, "fl": fl, "sf": sf}, joint


def _write_error_maps(pred: Predictions, gt: GroundTruth, combiner: str, out_dir: Path) -> None:
    import cv2

    out_dir.mkdir(parents=True, exist_ok=True)
    maps, joint = _component_maps(pred, gt, combiner)
    _, occ_set = occlusion_split(gt)
    for name, outliers in maps.items():
        img = render_error_map(outliers, joint, occ_set)
        cv2.imwrite(str(out_dir / f"{name}_error.png"), img[..., ::-1])


def cmd_viz(args: argparse.Namespace) -> int:
    pred_dir = Path(args.pred)
    d1, _ = read_disparity_png(pred_dir / "disp_01.png")
    d2, _ = read_disparity_png(pred_dir / "disp2_01.png")
    fl, _ = read_flow_png(pred_dir / "flow_01.png")
    gt = read_ground_truth(args.gt, k=1)
    _write_error_maps(Predictions(d1=d1, d2=d2, fl=fl), gt, args.combiner or "and", Path(args.out))
    print(f"wrote error maps to {args.out}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="plain-text key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic scenes")
    _add_common(p)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--size", default="64x128")
    p.add_argument("--static", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset directory")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--iters", default=None)
    p.add_argument("--occ-timing", dest="occ_timing", choices=("final", "all"), default=None)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or stored predictions")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--pred", default=None, help="evaluate prediction PNGs instead of a model")
    p.add_argument("--data", required=True)
    p.add_argument("--iters", default=None, help="comma-separated iteration counts")
    p.add_argument("--combiner", choices=("and", "or"), default=None)
    p.add_argument("--viz", action="store_true", help="write per-frame error maps")
    p.add_argument("--save-pred", dest="save_pred", action="store_true")
    p.add_argument("--inject-gt", dest="inject_gt", action="store_true",
                   help="use ground truth as the prediction (pipeline check)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="error maps from prediction files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--combiner", choices=("and", "or"), default=None)
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv: list[str] | None = None) -> int:
    threads = os.environ.get("MSF_NUM_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single-line machine-parsable failure contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
