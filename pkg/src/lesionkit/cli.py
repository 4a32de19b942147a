"""Command-line interface: synth, train, eval, infer, recist, pseudomask.

Exit codes: 0 ok, 2 bad configuration, 3 bad data, 4 numeric failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .autodiff import OptimizerConfig
from .data import LesionDataset, SynthConfig, synth_generate
from .data.preprocess import TARGET_INPLANE_MM
from .errors import ConfigError, DataError, NumericError
from .geometry import (
    RecistMeasurement,
    estimate_recist,
    mask_to_contour,
    pseudo_mask,
    read_mask_pgm,
    write_mask_pgm,
)
from .ontology import wce_weights


def _build_network(cfg, n_tags):
    from .model import LesionNetwork

    return LesionNetwork(
        cfgmod.backbone_config(cfg),
        cfgmod.head_config(cfg),
        n_tags=n_tags,
        seed=cfg["seed"],
        ablation=cfgmod.ablation_flags(cfg),
    )


def _load_trained(checkpoint_path, dataset, override_cfg=None):
    ckpt = Path(checkpoint_path)
    cfg_path = ckpt.with_suffix(".ini")
    if override_cfg is not None:
        cfg = override_cfg
    elif cfg_path.exists():
        cfg = cfgmod.load_config_file(cfg_path)
    else:
        raise ConfigError(f"no config next to checkpoint ({cfg_path} missing)")
    net = _build_network(cfg, n_tags=len(dataset.ontology))
    net.load(ckpt)
    bp, bn, _ = wce_weights(dataset.tag_counts("train"), min_count=cfg["min_tag_count"])
    net.set_tag_context(dataset.ontology, bp, bn)
    return net, cfg


# -- subcommands --------------------------------------------------------------


def cmd_synth(args):
    cfg = cfgmod.resolve(args, sections=("synth", "run"))
    out = synth_generate(cfgmod.synth_config(cfg), seed=cfg["seed"], out_dir=args.out)
    print(f"wrote synthetic dataset to {out}")
    return 0


def cmd_train(args):
    from .data import AugmentConfig  # noqa: F401 - via augment_config
    from .model import train_network

    cfg = cfgmod.resolve(
        args, sections=("backbone", "heads", "optim", "augment", "ablation", "run")
    )
    dataset = LesionDataset(args.dataset)
    net = _build_network(cfg, n_tags=len(dataset.ontology))
    bp, bn, _ = wce_weights(dataset.tag_counts("train"), min_count=cfg["min_tag_count"])
    net.set_tag_context(dataset.ontology, bp, bn)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = train_network(
        net,
        dataset,
        cfgmod.optimizer_config(cfg),
        seed=cfg["seed"],
        batch_size=cfg["batch_size"],
        augment_cfg=cfgmod.augment_config(cfg),
        log_path=out_dir / "train_log.txt",
        progress=args.progress,
        warmup_steps=cfg["warmup_steps"],
        grad_clip=cfg["grad_clip"],
    )
    ckpt = out_dir / "model.ckpt"
    net.save(ckpt)
    cfgmod.save_config_file(ckpt.with_suffix(".ini"), cfg)
    print(f"checkpoint: {ckpt}")
    print(lines[-1])
    return 0


def cmd_eval(args):
    from .evaluation import EvalReport, FP_RATES, evaluate_network, froc

    dataset = LesionDataset(args.dataset)
    if args.predictions:
        report = _eval_from_predictions(args, dataset)
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --predictions")
        cfg = cfgmod.resolve(args, sections=("run",)) if args.config else None
        net, cfg = _load_trained(args.checkpoint, dataset, override_cfg=cfg)
        report = evaluate_network(
            net,
            dataset,
            eval_split=cfg["eval_split"],
            calib_split=cfg["calib_split"],
            score_floor=cfg["score_floor"],
        )
    print(report.to_text())
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n")
    if args.csv:
        header = "sens0.5,sens1,sens2,sens4,avg_sens,mean_auc,mean_f1,distance_mm,diam_err_mm"
        path = Path(args.csv)
        if not path.exists():
            path.write_text(header + "\n")
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(report.csv_row() + "\n")
    return 0


def _eval_from_predictions(args, dataset):
    """Detection-only FROC from a JSON-lines prediction file."""
    from .evaluation import EvalReport, FP_RATES, froc

    per_image = {}
    with open(args.predictions, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                key = tuple(rec["sample_key"])
                per_image.setdefault(key, []).append((rec["box"], rec["score"]))
            except (KeyError, ValueError) as exc:
                raise DataError(f"bad prediction line: {exc}") from exc
    detections, gts = [], []
    for key in dataset.sample_keys(args.split):
        sample = dataset.load_sample(key)
        entries = per_image.get(tuple(key), [])
        boxes = np.array([e[0] for e in entries]).reshape(-1, 4)
        scores = np.array([e[1] for e in entries])
        detections.append((boxes, scores))
        gts.append(sample.gt_boxes)
    sens, avg = froc(detections, gts)
    return EvalReport(
        sensitivity={r: sens[float(r)] for r in FP_RATES},
        avg_sensitivity=avg,
        tag_auc={}, mean_tag_auc=float("nan"),
        tag_f1={}, mean_tag_f1=float("nan"), skipped_tags=[],
        mean_distance_mm=float("nan"), mean_diameter_error_mm=float("nan"),
        empty_mask_count=0,
        extra={"source": "predictions-file (detection metrics only)"},
    )


def cmd_infer(args):
    from .data.dataset import canonical_slice_index
    from .model.infer import predictions_for_sample

    dataset = LesionDataset(args.dataset)
    net, cfg = _load_trained(args.checkpoint, dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = dataset.sample_keys(args.split) if args.split else dataset.sample_keys()
    thr = args.score_threshold if args.score_threshold is not None else cfg["score_threshold"]
    names = dataset.ontology.tags
    n_written = 0
    with open(out_dir / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for key in keys:
            sample = dataset.load_sample(key)
            preds = predictions_for_sample(net, sample, score_threshold=thr)
            for i, p in enumerate(preds):
                mask_name = f"mask_{'_'.join(str(k) for k in key)}_{i}.pgm"
                write_mask_pgm(out_dir / mask_name, p.mask)
                record = {
                    "sample_key": list(key),
                    "box": [round(v, 3) for v in p.box],
                    "score": round(p.score, 6),
                    "score_unrefined": round(p.score_unrefined, 6),
                    "tag_scores": [round(float(v), 6) for v in p.tag_scores],
                    "tag_scores_unrefined": [round(float(v), 6) for v in p.tag_scores_unrefined],
                    "top_tags": [
                        names[t]
                        for t in np.nonzero(p.tag_scores >= args.tag_threshold)[0]
                    ],
                    "mask_file": mask_name,
                    "measurement": (
                        None if p.measurement is None else p.measurement.to_record()
                    ),
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                n_written += 1
    print(f"wrote {n_written} predictions to {out_dir / 'predictions.jsonl'}")
    return 0


def cmd_recist(args):
    mask = read_mask_pgm(args.mask)
    if not mask.any():
        raise DataError(f"{args.mask}: mask has no foreground")
    contour = mask_to_contour(mask)
    if len(contour) < 3:
        raise DataError(f"{args.mask}: component too small for a measurement")
    m = estimate_recist(contour, spacing_mm=args.spacing_mm)
    print(m.to_record())
    if getattr(m, "degenerate_short", False):
        print("warning: no perpendicular chord found; short axis degenerate",
              file=sys.stderr)
    return 0


def cmd_pseudomask(args):
    if args.measurement_file:
        text = Path(args.measurement_file).read_text().strip()
    else:
        text = args.measurement
    if not text:
        raise ConfigError("need --measurement or --measurement-file")
    m = RecistMeasurement.from_record(text).validate()
    mask = pseudo_mask(m, (args.height, args.width))
    write_mask_pgm(args.out, mask)
    print(f"wrote {args.out} ({int(mask.sum())} foreground pixels)")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lesionkit",
        description="CT lesion detection, tagging and RECIST measurement, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", help="config file (key = value with sections)")
    cfgmod.add_schema_flags(p, sections=("synth", "run"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for checkpoint and log")
    p.add_argument("--config", help="config file (key = value with sections)")
    p.add_argument("--progress", type=int, default=None,
                   help="print every Nth step line")
    cfgmod.add_schema_flags(
        p, sections=("backbone", "heads", "optim", "augment", "ablation", "run")
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a prediction file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", help="model.ckpt from train")
    p.add_argument("--predictions", help="JSON-lines prediction file (detection only)")
    p.add_argument("--split", default="test", help="split for --predictions mode")
    p.add_argument("--config", help="config file overriding the checkpoint's")
    p.add_argument("--json", help="also write the report as JSON to this path")
    p.add_argument("--csv", help="append one metrics row to this CSV")
    cfgmod.add_schema_flags(p, sections=("run",))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run inference and write predictions + masks")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None, help="restrict to a split")
    p.add_argument("--score-threshold", type=float, default=None)
    p.add_argument("--tag-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("recist", help="estimate a measurement from a mask PGM")
    p.add_argument("mask", help="binary PGM mask file")
    p.add_argument("--spacing-mm", type=float, default=TARGET_INPLANE_MM)
    p.set_defaults(func=cmd_recist)

    p = sub.add_parser("pseudomask", help="rasterize a measurement to a mask PGM")
    p.add_argument("--measurement", help="8 coords + spacing, comma separated")
    p.add_argument("--measurement-file", help="file holding the record")
    p.add_argument("--out", required=True, help="output PGM path")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.set_defaults(func=cmd_pseudomask)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
