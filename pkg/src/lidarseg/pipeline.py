"""Pipeline stages: preprocess -> extract -> train -> evaluate.

Every stage reads and writes plain files so each one can be rerun on its own.
Frames are processed independently (optionally on a process pool) and merged
in sorted frame order, so ``jobs`` never changes an artifact.

Layout of a preprocess directory::

    preprocess.json            velodyne directory and processed frame ids
    frames/<id>.csv            point_index,is_ground,cluster_id
    ply/<id>.ply               optional, cluster-colored cloud
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .classifiers import (
    TrainingSet,
    deserialize_model,
    predict_batch,
    serialize_model,
    train_mlp,
    train_svm,
    train_tree,
    undersample,
)
from .clustering import dbscan, mean_shift_cluster
from .config import PipelineConfig
from .errors import EmptyInputError, LidarSegError, ModelFormatError
from .evaluation import FrameReport, confusion, report_json, summary_csv
from .features import extract_features, read_feature_csv, write_feature_csv
from .ground_filter import csf_filter, ransac_filter
from .kitti_io import (
    PointClass,
    export_cluster_ply,
    label_points,
    parse_calibration,
    parse_label_file,
    read_velodyne,
)

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# bookkeeping


@dataclass
class StageResult:
    name: str
    outputs: list = field(default_factory=list)
    warnings: int = 0
    failures: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    ms: float = 0.0
    status: str = "ok"


def write_atomic(path: Path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        data = data.encode()
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def write_manifest(out_dir: Path, command: str, config: PipelineConfig, inputs,
                   stages: list[StageResult], extra: dict | None = None) -> Path:
    """Atomically write ``manifest.json`` listing every file the run produced."""
    out_dir = Path(out_dir)
    outputs = sorted({str(Path(p).resolve().relative_to(out_dir.resolve()))
                      for s in stages for p in s.outputs} | {"manifest.json"})
    doc = {
        "tool": "lidarseg",
        "version": __version__,
        "command": command,
        "config": config.to_dict(),
        "inputs": list(inputs),
        "stages": [
            {"name": s.name, "status": s.status, "ms": round(max(s.ms, 0.0), 3),
             "warnings": s.warnings, "failures": s.failures, **s.info}
            for s in stages
        ],
        "outputs": outputs,
    }
    if extra:
        doc.update(extra)
    return write_atomic(out_dir / "manifest.json", json.dumps(doc, indent=2) + "\n")


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(_star, [(fn, it) for it in items]))


def _star(packed):
    fn, args = packed
    return fn(*args)


def frame_seed(seed: int, frame_id: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(frame_id.encode())]).generate_state(1)[0])


def list_frames(velodyne_dir: Path) -> list[Path]:
    return sorted(Path(velodyne_dir).glob("*.bin"))


def resolve_kitti_root(root) -> dict:
    """Locate velodyne/label_2/calib under ``root`` (or ``root/training``)."""
    root = Path(root)
    if not (root / "velodyne").is_dir() and (root / "training" / "velodyne").is_dir():
        root = root / "training"
    return {"velodyne": root / "velodyne", "labels": root / "label_2", "calib": root / "calib"}


# --------------------------------------------------------------------------
# preprocess


def preprocess_frame(path: str, config: PipelineConfig):
    """Ground filter + cluster one frame. Returns ``(frame_id, is_ground,
    cluster_ids, warnings)`` with cluster ids over the full frame (-1 for
    ground and noise)."""
    cloud = read_velodyne(path)
    gf = config.ground_filter
    if gf.method == "csf":
        part = csf_filter(cloud, gf.cloth)
    else:
        part = ransac_filter(cloud, gf.ransac, frame_seed(config.seed, cloud.frame_id))
    nonground = cloud.subset(part.nonground_indices)
    cl = config.clustering
    if cl.method == "meanshift":
        assign = mean_shift_cluster(nonground, cl.meanshift)
    else:
        assign = dbscan(nonground, cl.dbscan.eps, cl.dbscan.min_samples)
    cluster_ids = np.full(len(cloud), -1, dtype=np.int64)
    cluster_ids[part.nonground_indices] = assign.labels
    return cloud.frame_id, part.mask(), cluster_ids, part.warnings + cloud.clamped_intensities


def _safe_preprocess(path: str, config: PipelineConfig):
    try:
        return preprocess_frame(path, config)
    except (LidarSegError, OSError, ValueError) as exc:
        return Path(path).stem, None, None, f"{type(exc).__name__}: {exc}"


def frame_csv(is_ground: np.ndarray, cluster_ids: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point_index", "is_ground", "cluster_id"])
    w.writerows(zip(range(len(cluster_ids)), is_ground.astype(int).tolist(), cluster_ids.tolist()))
    return buf.getvalue()


def read_frame_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if rows.size == 0:
        return np.zeros(0, dtype=bool), np.zeros(0, dtype=np.int64)
    return rows[:, 1].astype(bool), rows[:, 2]


def run_preprocess(velodyne_dir, config: PipelineConfig, out_dir, jobs: int | None = None,
                   frames: list[Path] | None = None) -> StageResult:
    t0 = time.perf_counter()
    velodyne_dir, out_dir = Path(velodyne_dir), Path(out_dir)
    paths = frames if frames is not None else list_frames(velodyne_dir)
    if not paths:
        raise EmptyInputError(f"no velodyne .bin frames in {velodyne_dir}")
    jobs = jobs or config.parallelism
    results = _map(_safe_preprocess, [(str(p), config) for p in paths], jobs)

    stage = StageResult("preprocess")
    done = []
    for frame_id, is_ground, cluster_ids, extra in results:
        if is_ground is None:
            stage.failures[frame_id] = extra
            log.error("frame %s failed: %s", frame_id, extra)
            continue
        stage.warnings += extra
        stage.outputs.append(write_atomic(out_dir / "frames" / f"{frame_id}.csv",
                                          frame_csv(is_ground, cluster_ids)))
        if config.output.write_ply:
            cloud = read_velodyne(velodyne_dir / f"{frame_id}.bin")
            stage.outputs.append(write_atomic(out_dir / "ply" / f"{frame_id}.ply",
                                              export_cluster_ply(cloud, cluster_ids)))
        done.append(frame_id)
    if not done:
        raise EmptyInputError(f"all {len(paths)} frames failed to preprocess")
    index = {"velodyne_dir": str(velodyne_dir.resolve()), "frames": done,
             "failures": stage.failures}
    stage.outputs.append(write_atomic(out_dir / "preprocess.json", json.dumps(index, indent=2) + "\n"))
    stage.info["frames"] = len(done)
    stage.ms = (time.perf_counter() - t0) * 1e3
    return stage


def load_preprocess_index(pre_dir) -> dict:
    path = Path(pre_dir) / "preprocess.json"
    if not path.exists():
        raise EmptyInputError(f"{pre_dir} has no preprocess.json; run preprocess first")
    return json.loads(path.read_text())


# --------------------------------------------------------------------------
# extract


def cluster_class(truth: np.ndarray) -> PointClass:
    """Ground-truth class for a cluster: Ignored when more than half the
    points are Ignored, otherwise the most common labeled class (ties to the
    lowest class code)."""
    counts = np.bincount(truth, minlength=len(PointClass))
    ignored = counts[PointClass.IGNORED]
    if ignored * 2 > len(truth) or ignored == len(truth):
        return PointClass.IGNORED
    return PointClass(int(np.argmax(counts[:PointClass.IGNORED])))


def _load_truth(frame_id: str, cloud, labels_dir: Path, calib_dir: Path):
    label_path = labels_dir / f"{frame_id}.txt"
    calib_path = calib_dir / f"{frame_id}.txt"
    if not label_path.exists() or not calib_path.exists():
        return None
    labels = parse_label_file(label_path.read_text())
    calib = parse_calibration(calib_path.read_text())
    return label_points(cloud, labels, calib)


def extract_frame(frame_id: str, velodyne_dir: str, pre_dir: str, labels_dir: str,
                  calib_dir: str, config: PipelineConfig):
    """Feature rows for one frame, or ``None`` when its labels are missing."""
    cloud = read_velodyne(Path(velodyne_dir) / f"{frame_id}.bin")
    truth = _load_truth(frame_id, cloud, Path(labels_dir), Path(calib_dir))
    if truth is None:
        return None
    _, cluster_ids = read_frame_csv(Path(pre_dir) / "frames" / f"{frame_id}.csv")
    rows = []
    min_size = config.clustering.min_cluster_size
    for cid in range(int(cluster_ids.max(initial=-1)) + 1):
        members = np.flatnonzero(cluster_ids == cid)
        if len(members) < min_size:
            continue
        fv = extract_features(cloud.points[members], config.features.eigen_mode)
        rows.append((fv, cluster_class(truth[members])))
    return rows


def run_extract(pre_dir, labels_dir, calib_dir, out_csv, config: PipelineConfig,
                jobs: int | None = None, frame_ids: list[str] | None = None) -> StageResult:
    t0 = time.perf_counter()
    index = load_preprocess_index(pre_dir)
    ids = sorted(frame_ids if frame_ids is not None else index["frames"])
    jobs = jobs or config.parallelism
    results = _map(extract_frame, [(fid, index["velodyne_dir"], str(pre_dir), str(labels_dir),
                                    str(calib_dir), config) for fid in ids], jobs)
    stage = StageResult("extract")
    all_rows = []
    for fid, rows in zip(ids, results):
        if rows is None:
            stage.warnings += 1
            log.warning("frame %s: labels or calibration missing, skipped", fid)
            continue
        all_rows.extend(rows)
    stage.outputs.append(write_atomic(Path(out_csv), write_feature_csv(all_rows)))
    counts = {c.name: sum(1 for _, k in all_rows if k is c) for c in PointClass}
    stage.info["class_counts"] = counts
    stage.ms = (time.perf_counter() - t0) * 1e3
    return stage


# --------------------------------------------------------------------------
# train


def train_model(data: TrainingSet, config: PipelineConfig, history: list | None = None):
    cc = config.classifier
    mode = config.features.eigen_mode
    if cc.kind == "tree":
        return train_tree(data, cc.tree.max_depth, cc.tree.min_leaf, eigen_mode=mode)
    if cc.kind == "svm":
        return train_svm(data, cc.svm.C, cc.svm.epochs, config.seed, cc.svm.batch_size,
                         eigen_mode=mode)
    m = cc.mlp
    return train_mlp(data, m.epochs, m.dropout_rate, m.learning_rate, m.batch_size,
                     config.seed, m.hidden_layers, eigen_mode=mode, history=history)


def run_train(features_csv, config: PipelineConfig, model_out) -> StageResult:
    t0 = time.perf_counter()
    model_out = Path(model_out)
    X, y = read_feature_csv(Path(features_csv).read_text())
    data = TrainingSet.from_rows(X, y)
    counts_in = {c.name: n for c, n in data.class_counts.items()}
    if config.classifier.undersample:
        data = undersample(data, config.seed)
    history: list = []
    model = train_model(data, config, history)
    cls, _ = predict_batch(model, data.X)
    report = {
        "kind": config.classifier.kind,
        "class_counts_input": counts_in,
        "class_counts_trained": {c.name: n for c, n in data.class_counts.items()},
        "rows": len(data),
        "training_accuracy": float(np.mean(cls == data.y)),
    }
    if model.kind == "mlp":
        report["training_loss"] = history[-1] if history else None
        report["param_counts"] = model.param_counts()
    stage = StageResult("train")
    stage.outputs.append(write_atomic(model_out, serialize_model(model)))
    report_path = model_out.with_name(model_out.stem + "_train_report.json")
    stage.outputs.append(write_atomic(report_path, json.dumps(report, indent=2) + "\n"))
    stage.info["training_accuracy"] = report["training_accuracy"]
    stage.ms = (time.perf_counter() - t0) * 1e3
    return stage


# --------------------------------------------------------------------------
# evaluate


def evaluate_frame(frame_id: str, model_bytes: bytes, velodyne_dir: str, pre_dir: str,
                   labels_dir: str, calib_dir: str, config: PipelineConfig):
    """Per-point ``(truth, predicted)`` for one frame; ``None`` if unlabeled."""
    model = deserialize_model(model_bytes)
    cloud = read_velodyne(Path(velodyne_dir) / f"{frame_id}.bin")
    truth = _load_truth(frame_id, cloud, Path(labels_dir), Path(calib_dir))
    if truth is None:
        return None
    _, cluster_ids = read_frame_csv(Path(pre_dir) / "frames" / f"{frame_id}.csv")
    predicted = np.full(len(cloud), int(PointClass.IGNORED), dtype=np.int64)
    cids = [c for c in range(int(cluster_ids.max(initial=-1)) + 1)
            if np.count_nonzero(cluster_ids == c) >= config.clustering.min_cluster_size]
    if cids:
        X = np.array([extract_features(cloud.points[cluster_ids == c], model.eigen_mode).as_array()
                      for c in cids])
        cls, conf = predict_batch(model, X)
        for c, k, p in zip(cids, cls, conf):
            if p >= config.threshold:
                predicted[cluster_ids == c] = k
    return truth.astype(np.int64), predicted


def run_evaluate(model_path, pre_dir, labels_dir, calib_dir, out_dir, config: PipelineConfig,
                 jobs: int | None = None, frame_ids: list[str] | None = None) -> StageResult:
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    model_bytes = Path(model_path).read_bytes()
    model = deserialize_model(model_bytes)
    if model.eigen_mode != config.features.eigen_mode:
        raise ModelFormatError(
            f"model was trained on {model.eigen_mode!r} features, config asks for "
            f"{config.features.eigen_mode!r}"
        )
    index = load_preprocess_index(pre_dir)
    ids = sorted(frame_ids if frame_ids is not None else index["frames"])
    jobs = jobs or config.parallelism
    results = _map(evaluate_frame, [(fid, model_bytes, index["velodyne_dir"], str(pre_dir),
                                     str(labels_dir), str(calib_dir), config) for fid in ids], jobs)
    stage = StageResult("evaluate")
    reports = []
    for fid, res in zip(ids, results):
        if res is None:
            stage.warnings += 1
            continue
        truth, predicted = res
        reports.append(FrameReport.from_confusion(fid, confusion(truth, predicted)))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point_index", "truth", "predicted"])
        w.writerows(zip(range(len(truth)), truth.tolist(), predicted.tolist()))
        stage.outputs.append(write_atomic(out_dir / "predictions" / f"{fid}.csv", buf.getvalue()))
    if not reports:
        raise EmptyInputError("no labeled frames to evaluate")
    extra = {"model_kind": model.kind, "threshold": config.threshold}
    stage.outputs.append(write_atomic(out_dir / "report.json", report_json(reports, extra)))
    stage.outputs.append(write_atomic(out_dir / "summary.csv", summary_csv(reports)))
    if config.output.figures:
        from .evaluation import aggregate
        from .plotting import plot_confusion, plot_frame_accuracy

        stage.outputs.append(plot_confusion(aggregate(reports).confusion,
                                            out_dir / "figures" / "confusion.png"))
        stage.outputs.append(plot_frame_accuracy(reports, out_dir / "figures" / "frame_accuracy.png"))
    agg = json.loads((out_dir / "report.json").read_text())["aggregate"]
    stage.info["labeled_accuracy"] = agg["labeled_accuracy"]
    stage.info["total_frame_accuracy"] = agg["total_frame_accuracy"]
    stage.ms = (time.perf_counter() - t0) * 1e3
    return stage


# --------------------------------------------------------------------------
# run-all


def split_frames(frame_ids: list[str], ratio, seed: int) -> tuple[list[str], list[str]]:
    """Seeded split by frame; ``round(n * a / (a + b))`` frames go to training."""
    a, b = ratio
    ids = sorted(frame_ids)
    n_train = int(round(len(ids) * a / (a + b)))
    order = np.random.default_rng(seed).permutation(len(ids))
    train = sorted(ids[i] for i in order[:n_train])
    val = sorted(ids[i] for i in order[n_train:])
    return train, val


def run_all(input_root, config: PipelineConfig, out_dir, jobs: int | None = None,
            labels_dir=None, calib_dir=None) -> tuple[list[StageResult], Exception | None]:
    """Full pipeline; returns the stage results and the error that stopped it,
    if any. The manifest is written either way."""
    out_dir = Path(out_dir)
    dirs = resolve_kitti_root(input_root)
    labels_dir = Path(labels_dir) if labels_dir else dirs["labels"]
    calib_dir = Path(calib_dir) if calib_dir else dirs["calib"]
    frames = list_frames(dirs["velodyne"])
    pre_dir = out_dir / "preprocess"
    model_path = out_dir / "model" / f"{config.classifier.kind}.lseg"
    split = {}

    def do_split():
        t0 = time.perf_counter()
        done = load_preprocess_index(pre_dir)["frames"]
        train, val = split_frames(done, config.split, config.seed)
        split.update(train=train, validation=val)
        s = StageResult("split", info={"train": len(train), "validation": len(val)})
        s.outputs.append(write_atomic(out_dir / "split.json", json.dumps(split, indent=2) + "\n"))
        s.ms = (time.perf_counter() - t0) * 1e3
        return s

    def do_extract():
        s = run_extract(pre_dir, labels_dir, calib_dir, out_dir / "features" / "train.csv",
                        config, jobs, split["train"])
        v = run_extract(pre_dir, labels_dir, calib_dir, out_dir / "features" / "validation.csv",
                        config, jobs, split["validation"])
        s.outputs += v.outputs
        s.warnings += v.warnings
        s.ms += v.ms
        s.info["validation_class_counts"] = v.info["class_counts"]
        return s

    steps = [
        ("preprocess", lambda: run_preprocess(dirs["velodyne"], config, pre_dir, jobs, frames)),
        ("split", do_split),
        ("extract", do_extract),
        ("train", lambda: run_train(out_dir / "features" / "train.csv", config, model_path)),
        ("evaluate", lambda: run_evaluate(model_path, pre_dir, labels_dir, calib_dir,
                                          out_dir / "evaluation", config, jobs,
                                          split["validation"])),
    ]
    stages: list[StageResult] = []
    error = None
    for name, step in steps:
        if error is not None:
            stages.append(StageResult(name, status="skipped"))
            continue
        t0 = time.perf_counter()
        try:
            stages.append(step())
        except Exception as exc:  # recorded in the manifest, re-raised by the caller
            log.error("stage %s failed: %s", name, exc)
            stages.append(StageResult(name, status="failed",
                                      ms=(time.perf_counter() - t0) * 1e3,
                                      info={"error": f"{type(exc).__name__}: {exc}"}))
            error = exc
    write_manifest(out_dir, "run-all", config, [p.stem for p in frames], stages,
                   {"failed_stage": next((s.name for s in stages if s.status == "failed"), None)})
    return stages, error
