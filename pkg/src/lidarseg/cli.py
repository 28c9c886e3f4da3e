"""``lidarseg`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
Log verbosity comes from ``LIDARSEG_LOG`` (e.g. ``INFO``, ``DEBUG``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import PipelineConfig, default_config_toml
from .errors import ConfigError, LidarSegError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("lidarseg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, output_help: str):
    p.add_argument("--config", type=Path, help="TOML configuration file")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--jobs", type=int, help="worker processes (overrides config parallelism)")
    p.add_argument("--output", type=Path, required=True, help=output_help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lidarseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lidarseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="ground filter and cluster velodyne frames")
    _common(p, "output directory")
    p.add_argument("--input", type=Path, required=True, help="directory of velodyne .bin frames")
    p.add_argument("--ply", action="store_true", help="also write cluster-colored PLY files")

    p = sub.add_parser("extract", help="per-cluster features with ground-truth classes")
    _common(p, "features CSV to write")
    p.add_argument("--preprocessed", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True, help="KITTI label_2 directory")
    p.add_argument("--calib", type=Path, required=True, help="KITTI calib directory")

    p = sub.add_parser("train", help="train a classifier on a features CSV")
    _common(p, "model file to write")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--classifier", choices=["tree", "svm", "mlp"])
    p.add_argument("--undersample", action="store_true", default=None)

    p = sub.add_parser("evaluate", help="score a model on preprocessed frames")
    _common(p, "report directory")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--preprocessed", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--calib", type=Path, required=True)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("run-all", help="preprocess, split, extract, train and evaluate")
    _common(p, "run directory")
    p.add_argument("--input", type=Path, required=True,
                   help="KITTI object root containing velodyne/, label_2/, calib/")
    p.add_argument("--classifier", choices=["tree", "svm", "mlp"])
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("synth", help="write a synthetic KITTI-layout dataset")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    sub.add_parser("default-config", help="print the default TOML configuration")
    return parser


def load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        config.parallelism = args.jobs
    if getattr(args, "classifier", None):
        config.classifier.kind = args.classifier
    if getattr(args, "undersample", None):
        config.classifier.undersample = True
    if getattr(args, "threshold", None) is not None:
        config.threshold = args.threshold
    if getattr(args, "ply", False):
        config.output.write_ply = True
    return config.validate()


def _run(args) -> int:
    from . import pipeline

    if args.command == "default-config":
        sys.stdout.write(default_config_toml())
        return EXIT_OK
    if args.command == "synth":
        from .synthetic import write_kitti_layout

        ids = write_kitti_layout(args.output, args.frames, args.seed)
        print(f"wrote {len(ids)} frames to {args.output}")
        return EXIT_OK

    config = load_config(args)
    jobs = config.parallelism
    if args.command == "preprocess":
        stage = pipeline.run_preprocess(args.input, config, args.output, jobs)
        pipeline.write_manifest(args.output, "preprocess", config,
                                [p.stem for p in pipeline.list_frames(args.input)], [stage])
        print(f"preprocessed {stage.info['frames']} frames, {len(stage.failures)} failed")
    elif args.command == "extract":
        stage = pipeline.run_extract(args.preprocessed, args.labels, args.calib, args.output,
                                     config, jobs)
        pipeline.write_manifest(args.output.parent, "extract", config, [], [stage])
        print(f"wrote {args.output}: {stage.info['class_counts']}")
    elif args.command == "train":
        stage = pipeline.run_train(args.features, config, args.output)
        pipeline.write_manifest(args.output.parent, "train", config, [str(args.features)], [stage])
        print(f"wrote {args.output} (training accuracy {stage.info['training_accuracy']:.3f})")
    elif args.command == "evaluate":
        stage = pipeline.run_evaluate(args.model, args.preprocessed, args.labels, args.calib,
                                      args.output, config, jobs)
        pipeline.write_manifest(args.output, "evaluate", config, [], [stage])
        print(_fmt_acc(stage.info))
    elif args.command == "run-all":
        stages, error = pipeline.run_all(args.input, config, args.output, jobs)
        for s in stages:
            print(f"{s.name:<11} {s.status:<8} {s.ms:9.1f} ms")
        if error is not None:
            raise error
        print(_fmt_acc(stages[-1].info))
    return EXIT_OK


def _fmt_acc(info: dict) -> str:
    def f(v):
        return "n/a" if v is None else f"{v:.3f}"

    return (f"frame accuracy {f(info.get('total_frame_accuracy'))}, "
            f"labeled accuracy {f(info.get('labeled_accuracy'))}")


def main(argv=None) -> int:
    level = logging.getLevelName(os.environ.get("LIDARSEG_LOG", "WARNING").upper())
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"lidarseg: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LidarSegError, OSError) as exc:
        print(f"lidarseg: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
