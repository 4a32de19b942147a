"""Run configuration: key = value file with sections, overridable by flags.

Every option in the schema becomes a command-line flag on the relevant
subcommand, so --help enumerates the complete configuration surface.
"""

import configparser
from dataclasses import dataclass

from .data.augment import AugmentConfig
from .data.synth import SynthConfig
from .errors import ConfigError
from .model.backbone import BackboneConfig
from .model.heads import HeadConfig
from .model.network import AblationFlags
from .autodiff import OptimizerConfig


@dataclass(frozen=True)
class Option:
    section: str
    name: str
    kind: str  # int | float | bool | str | int_list | float_list | str_list
    default: object
    help: str


SCHEMA = [
    Option("backbone", "stage_widths", "int_list", (16, 32, 64), "channel width per stage"),
    Option("backbone", "blocks_per_stage", "int_list", (2, 2, 2), "conv blocks per stage"),
    Option("backbone", "dense_stages", "bool_list", (False, False, False),
           "dense connectivity per stage"),
    Option("backbone", "pyramid_channels", "int", 64, "feature pyramid width (512 at paper scale)"),
    Option("backbone", "fusion_points", "str_list", ("after_stage_2", "after_pyramid"),
           "cross-slice fusion insertion points"),
    Option("backbone", "fusion_init", "str", "identity", "fusion conv init: identity or random"),
    Option("heads", "anchor_scales", "float_list", (14, 20, 28),
           "anchor scales in pixels (paper scale: 16,24,32,48,96)"),
    Option("heads", "anchor_ratios", "float_list", (0.5, 1.0, 2.0), "anchor aspect ratios (w/h)"),
    Option("heads", "fc_width", "int", 256, "head FC width (2048 at paper scale)"),
    Option("heads", "roi_size", "int", 7, "ROI grid for detection/tagging"),
    Option("heads", "mask_roi_size", "int", 14, "ROI grid for the mask branch"),
    Option("heads", "mask_out", "int", 28, "mask output grid"),
    Option("heads", "rpn_batch", "int", 128, "anchors sampled per image for the RPN loss"),
    Option("heads", "rpn_pre_nms", "int", 1000, "proposals kept before NMS"),
    Option("heads", "rpn_post_nms_train", "int", 300, "proposals kept after NMS (train)"),
    Option("heads", "rpn_post_nms_test", "int", 150, "proposals kept after NMS (test)"),
    Option("heads", "proposal_batch", "int", 64, "proposals sampled per image for head losses"),
    Option("heads", "score_threshold", "float", 0.5, "lesion score threshold at inference"),
    Option("heads", "rhem_k", "int", 3, "hard reliable negatives mined per lesion"),
    Option("heads", "rhem_weight", "float", 2.0, "weight of the hard-negative tag loss"),
    Option("ablation", "srl_stop_gradient", "bool", False,
           "block refinement-loss gradients from entering the branches"),
    Option("optim", "base_lr", "float", 0.004, "base learning rate"),
    Option("optim", "momentum", "float", 0.9, "SGD momentum"),
    Option("optim", "epochs", "int", 40, "training epochs (paper: 8)"),
    Option("optim", "decay_epochs", "int_list", (28, 35),
           "epochs at which the rate decays (paper: 4,6)"),
    Option("optim", "decay_factor", "float", 0.1, "learning-rate decay factor"),
    Option("optim", "batch_size", "int", 2, "samples per step (paper: 8)"),
    Option("optim", "warmup_steps", "int", 50, "linear warmup steps"),
    Option("optim", "grad_clip", "float", 25.0, "global gradient-norm clip (0 disables)"),
    Option("augment", "augment", "bool", True, "enable training augmentation"),
    Option("augment", "scale_min", "float", 0.8, "random resize lower ratio"),
    Option("augment", "scale_max", "float", 1.2, "random resize upper ratio"),
    Option("augment", "translate_px", "int", 8, "random translation range in pixels"),
    Option("augment", "slice_shift", "bool", True, "random slice-index shift"),
    Option("ablation", "no_fusion", "bool", False, "disable cross-slice fusion"),
    Option("ablation", "no_pyramid", "bool", False, "disable the feature pyramid"),
    Option("ablation", "no_detection", "bool", False, "disable the detection branch"),
    Option("ablation", "no_tagging", "bool", False, "disable the tagging branch"),
    Option("ablation", "no_mask", "bool", False, "disable the mask branch"),
    Option("ablation", "no_srl", "bool", False, "disable the score refinement layer"),
    Option("synth", "patients", "int", 20, "synthetic patients"),
    Option("synth", "volumes_per_patient", "int", 2, "volumes per patient"),
    Option("synth", "lesions_min", "int", 1, "minimum lesions per volume"),
    Option("synth", "lesions_max", "int", 3, "maximum lesions per volume"),
    Option("synth", "image_size", "int", 96, "in-plane extent of synthetic volumes"),
    Option("synth", "depth", "int", 9, "slices per synthetic volume"),
    Option("synth", "overlap_probability", "float", 0.0,
           "probability a new lesion may overlap placed ones (must be < 1)"),
    Option("run", "seed", "int", 0, "seed for every random draw"),
    Option("run", "min_tag_count", "int", 1,
           "smallest per-tag positive/negative count kept in the weighted loss (paper: 30)"),
    Option("run", "eval_split", "str", "test", "split evaluated by eval"),
    Option("run", "calib_split", "str", "val", "split used to calibrate tag thresholds"),
    Option("run", "score_floor", "float", 0.05, "low score floor for FROC sweeps"),
]

_BY_NAME = {opt.name: opt for opt in SCHEMA}
assert len(_BY_NAME) == len(SCHEMA), "option names must be unique"


def _parse_value(opt, raw):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if opt.kind == "int":
            return int(raw)
        if opt.kind == "float":
            return float(raw)
        if opt.kind == "bool":
            if isinstance(raw, bool):
                return raw
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if opt.kind == "int_list":
            return tuple(int(v) for v in str(raw).split(",") if v.strip())
        if opt.kind == "float_list":
            return tuple(float(v) for v in str(raw).split(",") if v.strip())
        if opt.kind == "bool_list":
            return tuple(
                _parse_value(Option("", "", "bool", None, ""), v)
                for v in str(raw).split(",") if v.strip()
            )
        if opt.kind == "str_list":
            return tuple(v.strip() for v in str(raw).split(",") if v.strip())
        if opt.kind == "str":
            return str(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {opt.name}: {exc}") from exc
    raise ConfigError(f"unknown option kind {opt.kind}")


def default_config():
    return {opt.name: opt.default for opt in SCHEMA}


def load_config_file(path):
    """Read a sectioned key = value file onto the defaults."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = default_config()
    for section in parser.sections():
        for key, raw in parser[section].items():
            opt = _BY_NAME.get(key)
            if opt is None or opt.section != section:
                raise ConfigError(f"{path}: unknown option [{section}] {key}")
            cfg[key] = _parse_value(opt, raw)
    return cfg


def save_config_file(path, cfg):
    parser = configparser.ConfigParser()
    for opt in SCHEMA:
        if opt.section not in parser:
            parser[opt.section] = {}
        value = cfg[opt.name]
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        parser[opt.section][opt.name] = str(value)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def add_schema_flags(parser, sections):
    for opt in SCHEMA:
        if opt.section not in sections:
            continue
        flag = "--" + opt.name.replace("_", "-")
        if opt.kind == "bool":
            parser.add_argument(
                flag, dest=opt.name, default=None,
                type=str, metavar="BOOL", help=f"{opt.help} (default {opt.default})",
            )
        else:
            parser.add_argument(
                flag, dest=opt.name, default=None,
                help=f"{opt.help} (default {opt.default})",
            )


def resolve(args, sections):
    """defaults <- config file <- explicit flags, for the given sections."""
    cfg = (
        load_config_file(args.config)
        if getattr(args, "config", None)
        else default_config()
    )
    for opt in SCHEMA:
        if opt.section not in sections:
            continue
        raw = getattr(args, opt.name, None)
        if raw is not None:
            cfg[opt.name] = _parse_value(opt, raw)
    return cfg


# -- constructors for the module configs -------------------------------------


def backbone_config(cfg):
    return BackboneConfig(
        stage_widths=cfg["stage_widths"],
        blocks_per_stage=cfg["blocks_per_stage"],
        dense_stages=cfg["dense_stages"],
        pyramid_channels=cfg["pyramid_channels"],
        fusion_points=cfg["fusion_points"],
        fusion_init=cfg["fusion_init"],
    )


def head_config(cfg):
    return HeadConfig(
        anchor_scales=cfg["anchor_scales"],
        anchor_ratios=cfg["anchor_ratios"],
        fc_width=cfg["fc_width"],
        roi_size=cfg["roi_size"],
        mask_roi_size=cfg["mask_roi_size"],
        mask_out=cfg["mask_out"],
        rpn_batch=cfg["rpn_batch"],
        rpn_pre_nms=cfg["rpn_pre_nms"],
        rpn_post_nms_train=cfg["rpn_post_nms_train"],
        rpn_post_nms_test=cfg["rpn_post_nms_test"],
        proposal_batch=cfg["proposal_batch"],
        score_threshold=cfg["score_threshold"],
        rhem_k=cfg["rhem_k"],
        rhem_weight=cfg["rhem_weight"],
        srl_stop_gradient=cfg["srl_stop_gradient"],
    )


def optimizer_config(cfg):
    return OptimizerConfig(
        base_lr=cfg["base_lr"],
        momentum=cfg["momentum"],
        epochs=cfg["epochs"],
        decay_epochs=cfg["decay_epochs"],
        decay_factor=cfg["decay_factor"],
    )


def augment_config(cfg):
    return AugmentConfig(
        enabled=cfg["augment"],
        scale_range=(cfg["scale_min"], cfg["scale_max"]),
        translate_px=cfg["translate_px"],
        slice_shift=cfg["slice_shift"],
    )


def ablation_flags(cfg):
    return AblationFlags(
        no_fusion=cfg["no_fusion"],
        no_pyramid=cfg["no_pyramid"],
        no_detection=cfg["no_detection"],
        no_tagging=cfg["no_tagging"],
        no_mask=cfg["no_mask"],
        no_srl=cfg["no_srl"],
    )


def synth_config(cfg):
    return SynthConfig(
        patients=cfg["patients"],
        volumes_per_patient=cfg["volumes_per_patient"],
        lesions_min=cfg["lesions_min"],
        lesions_max=cfg["lesions_max"],
        image_size=cfg["image_size"],
        depth=cfg["depth"],
        overlap_probability=cfg["overlap_probability"],
    )
