"""Named experiment pipelines with reproducible manifests.

``run_experiment`` executes one pipeline into an artifacts directory and
writes a ``manifest.txt`` capturing every resolved config value and seed;
re-running from that manifest reproduces every output file byte for
byte.  Stages run sequentially and outputs are written atomically
(temp file then rename), so a crashed run never leaves half files.
"""

from __future__ import annotations

import logging
import os
import statistics
import tempfile

import numpy as np

from . import dataset, ensemble, forest
from .cnn import INPUT_SIZE, build_network, save_network, train
from .config import Config, dump_config
from .imaging import load_gray, resize_bilinear, save_gray
from .labels import CLASSIFICATION_CLASSES, detection_token
from .metrics import compute_metrics, emit_heatmap
from .segmentation import FeatureRecord, preprocess_slice

log = logging.getLogger(__name__)

PIPELINES = (
    "volume-rf-detection",
    "volume-rf-classification",
    "cnn-stack-detection",
    "cnn-stack-classification",
)

# Feature columns fed to the volume models; crop dimensions stay in the
# CSV for provenance but are not model inputs by default.
RF_FEATURES_3 = ("area_total", "area_segmented", "area_csf")
RF_FEATURES_5 = ("area_total", "area_segmented", "area_csf", "crop_w", "crop_h")


class PipelineError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def atomic_write_text(path, text):
    _atomic_write(path, text.encode("utf-8"))


def _atomic_write(path, data):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_file(path):
    """Context manager handing out a temp path, renamed on success."""

    class _Ctx:
        def __enter__(self_inner):
            directory = os.path.dirname(os.path.abspath(path))
            fd, self_inner.tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
            os.close(fd)
            return self_inner.tmp

        def __exit__(self_inner, exc_type, exc, tb):
            if exc_type is None:
                os.replace(self_inner.tmp, path)
            elif os.path.exists(self_inner.tmp):
                os.unlink(self_inner.tmp)
            return False

    return _Ctx()


def extract_corpus_features(refs, seg_cfg, processed_dir=None):
    """Measure every slice; optionally mirror processed crops to disk."""
    records = []
    for ref in refs:
        image = load_gray(ref.path)
        processed, feats = preprocess_slice(image, seg_cfg)
        if processed_dir is not None:
            class_dir = os.path.join(processed_dir, ref.label.token)
            os.makedirs(class_dir, exist_ok=True)
            save_gray(processed, os.path.join(class_dir, os.path.basename(ref.path)))
        records.append(
            FeatureRecord.from_features(
                ref.patient_id, ref.session_id, ref.layer_index, ref.label, feats
            )
        )
    return records


def feature_matrix(records, columns, task):
    """(x, y) arrays from feature records; labels follow the task axis."""
    x = np.asarray([[getattr(r, c) for c in columns] for r in records], dtype=np.float64)
    if task == "detection":
        y = [detection_token(r.label) for r in records]
        classes = ["non", "dem"]
    else:
        y = [r.label.token for r in records]
        classes = [c.token for c in CLASSIFICATION_CLASSES]
    return x, y, classes


def _task_of(pipeline):
    return "detection" if pipeline.endswith("detection") else "classification"


def run_experiment(cfg_map, out_dir):
    """Execute the configured pipeline; returns the artifacts directory."""
    cfg = Config(cfg_map)
    pipeline = cfg.get_str("pipeline", "")
    if pipeline not in PIPELINES:
        raise ValueError(f"pipeline must be one of {PIPELINES}, got {pipeline!r}")
    root = cfg.get_str("data.root", "")
    if not root or not os.path.isdir(root):
        raise FileNotFoundError(f"data.root {root!r} is not a directory")
    os.makedirs(out_dir, exist_ok=True)

    if pipeline.startswith("volume-rf"):
        _run_volume_rf(cfg, _task_of(pipeline), root, out_dir)
    else:
        _run_cnn_stack(cfg, _task_of(pipeline), root, out_dir)

    unknown = cfg.unknown_keys()
    if unknown:
        log.warning("unused config keys: %s", ", ".join(unknown))
    atomic_write_text(os.path.join(out_dir, "manifest.txt"), _manifest_text(cfg))
    return out_dir


def _manifest_text(cfg):
    return dump_config(cfg.resolved())


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise PipelineError(name, exc) from exc


def _run_volume_rf(cfg, task, root, out_dir):
    seed = cfg.get_int("seed", 0)
    repeats = cfg.get_int("rf.repeats", 1)
    n_features = cfg.get_int("rf.n_features", 3)
    columns = RF_FEATURES_3 if n_features == 3 else RF_FEATURES_5
    seg_cfg = cfg.segmentation()
    pattern = cfg.dataset_pattern()
    window = cfg.dataset_window()

    refs = _stage("ingest", dataset.ingest, root, pattern, window)
    refs = _stage("balance", dataset.balance, refs, task, seed)
    records = _stage("features", extract_corpus_features, refs, seg_cfg)
    with atomic_file(os.path.join(out_dir, "features.csv")) as tmp:
        dataset.write_features(tmp, records)

    by_path = dict(zip([r.path for r in refs], records))
    results = []
    for i in range(repeats):
        rep_seed = seed + i
        spec = cfg.split_spec("dataset.rf_split", (0.8, 0.2), rep_seed)
        if len(spec.fractions) != 2:
            raise ValueError(f"dataset.rf_split needs two fractions, got {spec.fractions}")
        train_refs, test_refs = _stage("split", dataset.split_by_patient, refs, spec)
        x_train, y_train, classes = feature_matrix(
            [by_path[r.path] for r in train_refs], columns, task
        )
        x_test, y_test, _ = feature_matrix([by_path[r.path] for r in test_refs], columns, task)
        model = _stage("fit", forest.fit, x_train, y_train, cfg.forest(rep_seed), classes)
        preds = [forest.predict(model, row) for row in x_test]
        report, confusion = compute_metrics(y_test, preds, classes)
        results.append((rep_seed, model, report, confusion))
        log.info(
            "repeat %d: accuracy %.4f weighted F1 %.4f (oob %.4f)",
            i,
            report.accuracy,
            report.weighted_f1,
            model.oob_score if model.oob_score is not None else float("nan"),
        )

    _, model0, report0, confusion0 = results[0]
    with atomic_file(os.path.join(out_dir, "model.nsprf")) as tmp:
        forest.serialize(model0, tmp)
    emit_heatmap(confusion0, os.path.join(out_dir, "confusion.pgm"))

    lines = [f"pipeline volume-rf-{task}", f"repeats {repeats}"]
    for i, (rep_seed, model, report, _) in enumerate(results):
        oob = f"{model.oob_score:.6f}" if model.oob_score is not None else "none"
        lines.append(
            f"repeat {i} seed {rep_seed} accuracy {report.accuracy:.6f} "
            f"weighted_f1 {report.weighted_f1:.6f} oob {oob}"
        )
    if repeats > 1:
        accs = [r.accuracy for _, _, r, _ in results]
        f1s = [r.weighted_f1 for _, _, r, _ in results]
        lines.append(
            f"accuracy min {min(accs):.6f} mean {statistics.fmean(accs):.6f} "
            f"max {max(accs):.6f} stddev {statistics.pstdev(accs):.6f}"
        )
        lines.append(
            f"weighted_f1 min {min(f1s):.6f} mean {statistics.fmean(f1s):.6f} "
            f"max {max(f1s):.6f} stddev {statistics.pstdev(f1s):.6f}"
        )
    lines.extend(report0.lines())
    atomic_write_text(os.path.join(out_dir, "metrics.txt"), "\n".join(lines) + "\n")


def _load_training_pairs(refs, task, class_tokens):
    pairs = []
    for ref in refs:
        img = load_gray(ref.path)
        if img.height != INPUT_SIZE or img.width != INPUT_SIZE:
            img = resize_bilinear(img, INPUT_SIZE, INPUT_SIZE)
        token = detection_token(ref.label) if task == "detection" else ref.label.token
        pairs.append((img, class_tokens.index(token)))
    return pairs


def _run_cnn_stack(cfg, task, root, out_dir):
    seed = cfg.get_int("seed", 0)
    seg_cfg = cfg.segmentation()
    pattern = cfg.dataset_pattern()
    window = cfg.dataset_window()
    train_cfg = cfg.train(seed)
    min_loss = seg_cfg.min_brain_loss
    n_classes = 2 if task == "detection" else 3
    class_tokens = ["non", "dem"] if task == "detection" else [
        c.token for c in CLASSIFICATION_CLASSES
    ]

    refs = _stage("ingest", dataset.ingest, root, pattern, window)
    refs = _stage("balance", dataset.balance, refs, task, seed)
    spec = cfg.split_spec("dataset.cnn_split", (0.6, 0.2, 0.2), seed)
    train_refs, val_refs, test_refs = _stage("split", dataset.split_by_patient, refs, spec)
    train_refs = _stage(
        "filter", dataset.filter_training_slices, train_refs, min_loss, seg_cfg
    )
    val_refs = _stage("filter", dataset.filter_training_slices, val_refs, min_loss, seg_cfg)
    log.info(
        "cnn-stack-%s: %d train / %d val / %d test slices after filtering",
        task,
        len(train_refs),
        len(val_refs),
        len(test_refs),
    )

    net = build_network(n_classes=n_classes, seed=seed)
    train_pairs = _stage("load", _load_training_pairs, train_refs, task, class_tokens)
    val_pairs = _stage("load", _load_training_pairs, val_refs, task, class_tokens)
    history = _stage("train-cnn", train, net, train_pairs, val_pairs, train_cfg)
    with atomic_file(os.path.join(out_dir, "cnn.nspcnn")) as tmp:
        save_network(net, tmp)

    hist_lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
    for h in history:
        hist_lines.append(
            f"{h['epoch']},{h['train_loss']:.6f},{h['train_acc']:.6f},"
            f"{h.get('val_loss', float('nan')):.6f},{h.get('val_acc', float('nan')):.6f}"
        )
    atomic_write_text(os.path.join(out_dir, "cnn_history.csv"), "\n".join(hist_lines) + "\n")

    # the stack dataset aggregates every scan over its full, unfiltered
    # slice set (the filter shapes network training only)
    scans = _stage("aggregate", ensemble.aggregate_corpus, net, refs)
    stack_csv = os.path.join(out_dir, "stack.csv")
    with atomic_file(stack_csv) as tmp:
        ensemble.write_stack_csv(tmp, scans, task)

    model, report, confusion, n_train, n_test = _stage(
        "train-stack",
        ensemble.train_stack,
        stack_csv,
        cfg.forest(seed),
        split_seed=seed,
        train_fraction=cfg.get_float("stack.train_fraction", 0.7),
    )
    with atomic_file(os.path.join(out_dir, "stack.nsprf")) as tmp:
        forest.serialize(model, tmp)
    emit_heatmap(confusion, os.path.join(out_dir, "confusion.pgm"))

    lines = [
        f"pipeline cnn-stack-{task}",
        f"scans_train {n_train}",
        f"scans_test {n_test}",
    ]
    lines.extend(report.lines())
    atomic_write_text(os.path.join(out_dir, "metrics.txt"), "\n".join(lines) + "\n")
