"""Command-line entry point.

Every command reads a key=value config file, writes a manifest echoing the
full effective configuration (so the run is reproducible from the manifest
alone), and exits nonzero with a categorized message on failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__, analysis, backend, datasets, io, networks, training
from .errors import (
    CheckpointError,
    ConfigError,
    NumericError,
    ParseError,
    PointVigError,
)

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_NUMERIC = 4
EXIT_OTHER = 1


# -- config schemas ----------------------------------------------------------

_COMMON = {
    "schema_version": (int, None),
    "seed": (int, 0),
    "out_dir": (str, "run"),
}

_TRAIN_COMMON = {
    "epochs": (int, 50),
    "batch_size": (int, 32),
    "lr_max": (float, 1e-3),
    "lr_min": (float, 1e-5),
    "restart_period": (int, 25),
    "augment": (io.parse_bool, True),
    "target_value": (float, 0.0),
    "time_budget_s": (float, 0.0),   # 0 disables the budget
}

_SCHEMAS = {
    "train-cls": {
        **_COMMON, **_TRAIN_COMMON,
        "n_train": (int, 600),
        "n_test": (int, 120),
        "n_points": (int, 256),
        "data_seed": (int, 0),
        "target_metric": (str, ""),
    },
    "train-seg": {
        **_COMMON, **_TRAIN_COMMON,
        "n_train": (int, 48),
        "n_test": (int, 12),
        "n_points": (int, 2048),
        "data_seed": (int, 0),
        "strategy": (str, "adaptive"),
        "target_metric": (str, ""),
    },
    "eval": {
        **_COMMON,
        "checkpoint": (str, None),
        "n_test": (int, 120),
        "n_points": (int, 0),        # 0 keeps the task default
        "data_seed": (int, 0),
        "batch_size": (int, 32),
    },
    "bench-dilation": {
        **_COMMON,
        "epochs": (int, 20),
        "batch_size": (int, 4),
        "seeds": (str, "0,1,2"),
        "n_train": (int, 48),
        "n_test": (int, 12),
        "n_points": (int, 2048),
        "data_seed": (int, 0),
        "augment": (io.parse_bool, False),
    },
    "analyze-diversity": {
        **_COMMON,
        "checkpoint": (str, None),
        "n_test": (int, 120),
        "n_points": (int, 256),
        "data_seed": (int, 0),
        "batch_size": (int, 32),
        "per_channel": (io.parse_bool, False),
    },
    "count-complexity": {
        **_COMMON,
        "spec": (str, "paper_classification"),
        "n_points": (int, 1024),
        "num_classes": (int, 40),
    },
    "export-features": {
        **_COMMON,
        "checkpoint": (str, None),
        "cloud": (str, ""),           # optional XYZ/PVTN file; synthetic otherwise
        "n_points": (int, 0),
        "data_seed": (int, 0),
    },
}


# -- helpers -----------------------------------------------------------------


def _write_manifest(out_dir, command, cfg):
    lines = [f"command={command}"]
    for key in sorted(cfg):
        lines.append(f"{key}={cfg[key]}")
    lines.append(f"pointvig_version={__version__}")
    lines.append(f"numpy_version={np.__version__}")
    lines.append(f"backend={backend.active_backend()}")
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _build_from_meta(meta):
    task = meta.get("task", "")
    num_classes = int(meta.get("num_classes", 0))
    seed = int(meta.get("seed", 0))
    if task == "classification":
        spec = networks.desk_classification_spec(num_classes)
    elif task == "scene_segmentation":
        spec = networks.desk_segmentation_spec(
            num_classes, strategy=meta.get("strategy", "adaptive"))
    else:
        raise CheckpointError(f"checkpoint declares unknown task {task!r}")
    return networks.build_model(spec, seed=seed)


def _train_cfg(cfg, per_point):
    target = cfg["target_metric"] or None
    return training.TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        lr_max=cfg["lr_max"], lr_min=cfg["lr_min"],
        restart_period=cfg["restart_period"], seed=cfg["seed"],
        augment=cfg["augment"], target_metric=target,
        target_value=cfg["target_value"],
        time_budget_s=cfg["time_budget_s"] or None,
        log_path=os.path.join(cfg["out_dir"], "epochs.csv"),
    )


# -- commands ----------------------------------------------------------------


def _cmd_train_cls(cfg):
    train, test = datasets.make_synthetic_shapes(
        cfg["n_train"], cfg["n_test"], cfg["n_points"], seed=cfg["data_seed"])
    model = networks.build_model(
        networks.desk_classification_spec(len(datasets.SHAPE_CLASSES)),
        seed=cfg["seed"])
    history = training.train(model, train, test, _train_cfg(cfg, False))
    last = history[-1]
    io.save_model(os.path.join(cfg["out_dir"], "model.pvtc"), model, meta={
        "task": "classification",
        "num_classes": len(datasets.SHAPE_CLASSES),
        "seed": cfg["seed"], "epoch": last["epoch"],
        "n_points": cfg["n_points"],
    })
    print(f"train-cls: epoch {last['epoch']} OA {last['OA']:.4f} "
          f"mAcc {last['mAcc']:.4f}")
    return 0


def _cmd_train_seg(cfg):
    train, test = datasets.make_synthetic_scenes(
        cfg["n_train"], cfg["n_test"], cfg["n_points"], seed=cfg["data_seed"])
    model = networks.build_model(
        networks.desk_segmentation_spec(len(datasets.SCENE_CLASSES),
                                        strategy=cfg["strategy"]),
        seed=cfg["seed"])
    history = training.train(model, train, test, _train_cfg(cfg, True))
    last = history[-1]
    io.save_model(os.path.join(cfg["out_dir"], "model.pvtc"), model, meta={
        "task": "scene_segmentation",
        "num_classes": len(datasets.SCENE_CLASSES),
        "strategy": cfg["strategy"],
        "seed": cfg["seed"], "epoch": last["epoch"],
        "n_points": cfg["n_points"],
    })
    print(f"train-seg: epoch {last['epoch']} OA {last['OA']:.4f} "
          f"mIoU {last['mIoU']:.4f}")
    return 0


def _cmd_eval(cfg):
    model = None
    meta = io.load_checkpoint(cfg["checkpoint"])[0]
    model = _build_from_meta(meta)
    io.load_model(cfg["checkpoint"], model)
    per_point = model.spec.is_segmentation
    n_points = cfg["n_points"] or int(meta.get("n_points", 256))
    if per_point:
        _, test = datasets.make_synthetic_scenes(
            1, cfg["n_test"], n_points, seed=cfg["data_seed"])
    else:
        n_cls = len(datasets.SHAPE_CLASSES)
        _, test = datasets.make_synthetic_shapes(
            n_cls, cfg["n_test"], n_points, seed=cfg["data_seed"])
    metrics = training.evaluate(model, test, model.spec.num_classes,
                                batch_size=cfg["batch_size"],
                                per_point=per_point)
    io.write_csv(os.path.join(cfg["out_dir"], "metrics.csv"),
                 ["OA", "mAcc", "mIoU"],
                 [[f"{metrics['OA']:.6f}", f"{metrics['mAcc']:.6f}",
                   f"{metrics['mIoU']:.6f}"]])
    print(f"eval: OA {metrics['OA']:.4f} mAcc {metrics['mAcc']:.4f} "
          f"mIoU {metrics['mIoU']:.4f}")
    return 0


def _cmd_bench_dilation(cfg):
    seeds = [int(s) for s in cfg["seeds"].split(",") if s.strip()]
    rows = []
    for strategy in ("uniform", "random", "adaptive"):
        for seed in seeds:
            train, test = datasets.make_synthetic_scenes(
                cfg["n_train"], cfg["n_test"], cfg["n_points"],
                seed=cfg["data_seed"])
            model = networks.build_model(
                networks.desk_segmentation_spec(len(datasets.SCENE_CLASSES),
                                                strategy=strategy),
                seed=seed)
            tc = training.TrainConfig(
                epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=seed,
                augment=cfg["augment"])
            history = training.train(model, train, test, tc)
            miou = history[-1]["mIoU"]
            rows.append([strategy, seed, f"{miou:.6f}"])
            print(f"bench-dilation: {strategy} seed={seed} mIoU {miou:.4f}")
    io.write_csv(os.path.join(cfg["out_dir"], "dilation.csv"),
                 ["strategy", "seed", "mIoU"], rows)
    return 0


def _cmd_analyze_diversity(cfg):
    meta = io.load_checkpoint(cfg["checkpoint"])[0]
    model = _build_from_meta(meta)
    io.load_model(cfg["checkpoint"], model)
    n_cls = len(datasets.SHAPE_CLASSES)
    _, test = datasets.make_synthetic_shapes(
        n_cls, cfg["n_test"], cfg["n_points"], seed=cfg["data_seed"])
    report = analysis.diversity_profile(model, test,
                                        batch_size=cfg["batch_size"],
                                        per_channel=cfg["per_channel"])
    path = os.path.join(cfg["out_dir"], "diversity.csv")
    report.to_csv(path)
    print(f"analyze-diversity: wrote {len(report.rows)} rows to {path}")
    return 0


_SPEC_BUILDERS = {
    "paper_classification": networks.paper_classification_spec,
    "desk_classification": networks.desk_classification_spec,
    "desk_segmentation": networks.desk_segmentation_spec,
    "scene_segmentation": networks.scene_segmentation_spec,
}


def _cmd_count_complexity(cfg):
    try:
        builder = _SPEC_BUILDERS[cfg["spec"]]
    except KeyError:
        raise ConfigError(
            f"unknown spec {cfg['spec']!r}; expected one of {sorted(_SPEC_BUILDERS)}"
        )
    model = networks.build_model(builder(cfg["num_classes"]), seed=cfg["seed"])
    reference = None
    if cfg["spec"] == "paper_classification":
        reference = {"params": 1.5e6, "flops": 0.6e9}
    report = analysis.complexity_report(model, cfg["n_points"], reference)
    path = os.path.join(cfg["out_dir"], "complexity.txt")
    with open(path, "w") as fh:
        fh.write(report + "\n")
    print(report)
    return 0


def _cmd_export_features(cfg):
    meta = io.load_checkpoint(cfg["checkpoint"])[0]
    model = _build_from_meta(meta)
    io.load_model(cfg["checkpoint"], model)
    n_points = cfg["n_points"] or int(meta.get("n_points", 256))
    if cfg["cloud"]:
        clouds = [io.load_cloud(cfg["cloud"], n_points=n_points,
                                seed=cfg["data_seed"])]
    elif model.spec.is_segmentation:
        _, clouds = datasets.make_synthetic_scenes(1, 1, n_points,
                                                   seed=cfg["data_seed"])
    else:
        n_cls = len(datasets.SHAPE_CLASSES)
        _, clouds = datasets.make_synthetic_shapes(n_cls, n_cls, n_points,
                                                   seed=cfg["data_seed"])
    capture = {}
    model.forward(clouds, mode="eval", capture=capture)
    path = os.path.join(cfg["out_dir"], "features.pvtn")
    io.save_tensor(path, capture["head_input"])
    print(f"export-features: wrote {capture['head_input'].shape} to {path}")
    return 0


_COMMANDS = {
    "train-cls": _cmd_train_cls,
    "train-seg": _cmd_train_seg,
    "eval": _cmd_eval,
    "bench-dilation": _cmd_bench_dilation,
    "analyze-diversity": _cmd_analyze_diversity,
    "count-complexity": _cmd_count_complexity,
    "export-features": _cmd_export_features,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pointvig",
        description="Point-cloud graph-convolution training and analysis",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--backend", choices=("numba", "numpy", "auto"),
                        default=None, help="force a compute backend")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="key=value config file")
    args = parser.parse_args(argv)

    try:
        if args.backend:
            backend.set_backend(args.backend)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _run(args)
    finally:
        if args.backend:
            backend.set_backend(None)


def _run(args) -> int:
    try:
        cfg = io.parse_config(args.config, _SCHEMAS[args.command])
        if cfg["schema_version"] != 1:
            raise ConfigError(
                f"unsupported schema_version {cfg['schema_version']}"
            )
        os.makedirs(cfg["out_dir"], exist_ok=True)
        _write_manifest(cfg["out_dir"], args.command, cfg)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, ParseError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"error[checkpoint]: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NumericError as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PointVigError, OSError) as exc:
        print(f"error[runtime]: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
