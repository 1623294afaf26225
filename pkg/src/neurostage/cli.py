"""Command-line surface tying the pipeline stages together.

Every subcommand accepts ``--config`` (flat key=value file) and
``--seed``; the seed flag overrides the config's ``seed`` key.  See the
README for a worked end-to-end example on a generated phantom corpus.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import dataset, ensemble, forest, ood, phantoms
from .cnn import build_network, classes_for_head, load_network, save_network, train
from .config import Config, load_config
from .experiment import (
    atomic_file,
    atomic_write_text,
    extract_corpus_features,
    feature_matrix,
    run_experiment,
)
from .imaging import load_gray
from .labels import CLASSIFICATION_CLASSES, UNSURE_TOKEN, detection_token
from .metrics import compute_metrics, emit_heatmap

log = logging.getLogger(__name__)

PREDICTION_HEADER = ["patient", "session", "layer", "outcome", "confidence"]


def _cfg_from(args) -> Config:
    mapping = load_config(args.config) if args.config else {}
    if getattr(args, "seed", None) is not None:
        mapping["seed"] = str(args.seed)
    return Config(mapping)


def _ingest(cfg, root):
    return dataset.ingest(root, cfg.dataset_pattern(), cfg.dataset_window())


def cmd_gen_phantoms(args):
    n = phantoms.generate_corpus(
        args.out,
        patients_per_class=args.patients_per_class,
        scans_per_patient=args.scans_per_patient,
        slices_per_scan=args.slices_per_scan,
        seed=args.seed if args.seed is not None else 0,
    )
    print(f"wrote {n} phantom slices under {args.out}")


def cmd_preprocess(args):
    cfg = _cfg_from(args)
    refs = _ingest(cfg, args.root)
    records = extract_corpus_features(refs, cfg.segmentation(), processed_dir=args.processed_dir)
    with atomic_file(args.out_features) as tmp:
        dataset.write_features(tmp, records)
    print(f"measured {len(records)} slices -> {args.out_features}")


def cmd_filter(args):
    cfg = _cfg_from(args)
    seg_cfg = cfg.segmentation()
    refs = _ingest(cfg, args.root)
    kept = dataset.filter_training_slices(refs, seg_cfg.min_brain_loss, seg_cfg)
    with atomic_file(args.out) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "patient", "session", "layer", "label"])
            for r in kept:
                writer.writerow([r.path, r.patient_id, r.session_id, r.layer_index, r.label.token])
    print(f"kept {len(kept)} of {len(refs)} slices -> {args.out}")


def cmd_train_rf(args):
    cfg = _cfg_from(args)
    seed = cfg.get_int("seed", 0)
    records = dataset.read_features(args.features)
    columns = (
        ("area_total", "area_segmented", "area_csf")
        if cfg.get_int("rf.n_features", 3) == 3
        else ("area_total", "area_segmented", "area_csf", "crop_w", "crop_h")
    )
    repeats = args.repeats if args.repeats is not None else cfg.get_int("rf.repeats", 1)
    accs, f1s = [], []
    first = None
    for i in range(repeats):
        spec = cfg.split_spec("dataset.rf_split", (0.8, 0.2), seed + i)
        train_recs, test_recs = dataset.split_by_patient(records, spec)
        x_tr, y_tr, classes = feature_matrix(train_recs, columns, args.task)
        x_te, y_te, _ = feature_matrix(test_recs, columns, args.task)
        model = forest.fit(x_tr, y_tr, cfg.forest(seed + i), classes)
        preds = [forest.predict(model, row) for row in x_te]
        report, confusion = compute_metrics(y_te, preds, classes)
        accs.append(report.accuracy)
        f1s.append(report.weighted_f1)
        if first is None:
            first = (model, report, confusion)
    model, report, confusion = first
    with atomic_file(args.out_model) as tmp:
        forest.serialize(model, tmp)
    if args.heatmap:
        emit_heatmap(confusion, args.heatmap)
    for line in report.lines():
        print(line)
    if repeats > 1:
        print(
            f"accuracy min {min(accs):.6f} mean {float(np.mean(accs)):.6f} max {max(accs):.6f}"
        )
        print(f"weighted_f1 min {min(f1s):.6f} mean {float(np.mean(f1s)):.6f} max {max(f1s):.6f}")
    print(f"model -> {args.out_model}")


def _class_tokens(task):
    return ["non", "dem"] if task == "detection" else [c.token for c in CLASSIFICATION_CLASSES]


def cmd_train_cnn(args):
    from .experiment import _load_training_pairs

    cfg = _cfg_from(args)
    seed = cfg.get_int("seed", 0)
    seg_cfg = cfg.segmentation()
    tokens = _class_tokens(args.task)
    refs = _ingest(cfg, args.root)
    refs = dataset.balance(refs, args.task, seed)
    spec = cfg.split_spec("dataset.cnn_split", (0.6, 0.2, 0.2), seed)
    train_refs, val_refs, _test_refs = dataset.split_by_patient(refs, spec)
    if not args.no_filter:
        train_refs = dataset.filter_training_slices(train_refs, seg_cfg.min_brain_loss, seg_cfg)
        val_refs = dataset.filter_training_slices(val_refs, seg_cfg.min_brain_loss, seg_cfg)
    net = build_network(n_classes=len(tokens), seed=seed)
    history = train(
        net,
        _load_training_pairs(train_refs, args.task, tokens),
        _load_training_pairs(val_refs, args.task, tokens),
        cfg.train(seed),
    )
    with atomic_file(args.out_model) as tmp:
        save_network(net, tmp)
    for h in history:
        extra = f" val_loss {h['val_loss']:.4f} val_acc {h['val_acc']:.4f}" if "val_loss" in h else ""
        print(f"epoch {h['epoch']} train_loss {h['train_loss']:.4f} train_acc {h['train_acc']:.4f}{extra}")
    print(f"weights -> {args.out_model}")


def _require_network(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(b"NSPRF"):
        raise SystemExit(
            "confidence gating applies to the network only: forest probabilities are a "
            "second-stage vote and do not track the network's own confidence. "
            f"{path} is a forest model; pass the network weight file instead."
        )
    return load_network(path)


def cmd_stack(args):
    cfg = _cfg_from(args)
    seed = cfg.get_int("seed", 0)
    net = load_network(args.model)
    task = "detection" if net.n_classes == 2 else "classification"
    refs = _ingest(cfg, args.root)
    scans = ensemble.aggregate_corpus(net, refs)
    with atomic_file(args.out_csv) as tmp:
        ensemble.write_stack_csv(tmp, scans, task)
    model, report, confusion, n_train, n_test = ensemble.train_stack(
        args.out_csv,
        cfg.forest(seed),
        split_seed=seed,
        train_fraction=cfg.get_float("stack.train_fraction", 0.7),
    )
    with atomic_file(args.out_model) as tmp:
        forest.serialize(model, tmp)
    if args.heatmap:
        emit_heatmap(confusion, args.heatmap)
    print(f"stack head trained on {n_train} scans, tested on {n_test}")
    for line in report.lines():
        print(line)


def cmd_predict(args):
    cfg = _cfg_from(args)
    net = _require_network(args.model)
    tokens = classes_for_head(net.n_classes)
    gate_cfg = None
    if args.ood_cutoff is not None:
        base = cfg.ood()
        gate_cfg = ood.OodConfig(
            cutoff=args.ood_cutoff,
            scan_unsure_fraction=args.unsure_policy
            if args.unsure_policy is not None
            else base.scan_unsure_fraction,
        )
    refs = _ingest(cfg, args.root)
    rows = []
    per_scan = {}
    for ref in refs:
        image = load_gray(ref.path)
        if gate_cfg is None:
            idx, conf = ood.slice_confidence(net, image)
            outcome = tokens[idx]
        else:
            gp = ood.gate(net, image, gate_cfg)
            outcome, conf = gp.outcome, gp.confidence
        rows.append([ref.patient_id, ref.session_id, ref.layer_index, outcome, f"{conf:.6f}"])
        per_scan.setdefault(ref.scan_id, []).append(image)
    with atomic_file(args.out) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(PREDICTION_HEADER)
            writer.writerows(rows)
    print(f"{len(rows)} slice predictions -> {args.out}")
    if args.out_scans:
        scan_cfg = gate_cfg if gate_cfg is not None else ood.OodConfig(cutoff=1e-9)
        with atomic_file(args.out_scans) as tmp:
            with open(tmp, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["patient", "session", "outcome", "confidence"])
                for sid in sorted(per_scan):
                    gp = ood.gate_scan(net, per_scan[sid], scan_cfg)
                    writer.writerow([sid[0], sid[1], gp.outcome, f"{gp.confidence:.6f}"])
        print(f"scan summaries -> {args.out_scans}")


def _pgm_files_under(root):
    found = []
    for dirpath, _dirnames, filenames in os.walk(root):
        for name in sorted(filenames):
            if name.lower().endswith(".pgm"):
                found.append(os.path.join(dirpath, name))
    return sorted(found)


def cmd_calibrate_ood(args):
    net = _require_network(args.model)
    id_files = _pgm_files_under(args.id_root)
    ood_files = _pgm_files_under(args.ood_root)
    if not id_files or not ood_files:
        raise SystemExit("both --id-root and --ood-root must contain .pgm slices")
    report = ood.calibrate(
        net,
        [load_gray(p) for p in id_files],
        [load_gray(p) for p in ood_files],
    )
    text = "\n".join(report.lines()) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    print(text, end="")


def cmd_evaluate(args):
    cfg = _cfg_from(args)
    refs = _ingest(cfg, args.root)
    truth_by_key = {(r.patient_id, r.session_id, str(r.layer_index)): r.label for r in refs}
    with open(args.predictions, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PREDICTION_HEADER:
            raise SystemExit(f"{args.predictions}: unexpected header {header}")
        rows = list(reader)
    outcomes = {row[3] for row in rows}
    task = "classification" if outcomes & {"verymild", "mild"} else "detection"
    classes = _class_tokens(task)

    truths, preds = [], []
    n_unsure = 0
    n_total = 0
    n_correct = 0
    for patient, session, layer, outcome, _conf in rows:
        key = (patient, session, layer)
        if key not in truth_by_key:
            raise SystemExit(f"no ground truth for slice {key}")
        label = truth_by_key[key]
        truth_token = detection_token(label) if task == "detection" else label.token
        n_total += 1
        if outcome == UNSURE_TOKEN:
            n_unsure += 1  # counted as incorrect in overall accuracy
            continue
        truths.append(truth_token)
        preds.append(outcome)
        if outcome == truth_token:
            n_correct += 1
    report, confusion = compute_metrics(truths, preds, classes)
    lines = [
        f"slices {n_total}",
        f"unsure {n_unsure} ({n_unsure / n_total:.4f} flagged)" if n_total else "unsure 0",
        f"overall_accuracy {n_correct / n_total:.6f} (unsure counted incorrect)"
        if n_total
        else "overall_accuracy 0",
        "-- labelled slices only --",
    ]
    lines.extend(report.lines())
    text = "\n".join(lines) + "\n"
    if args.out_metrics:
        atomic_write_text(args.out_metrics, text)
    if args.heatmap:
        emit_heatmap(confusion, args.heatmap)
    print(text, end="")


def cmd_run(args):
    mapping = load_config(args.config)
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    out = run_experiment(mapping, args.out)
    print(f"artifacts -> {out}")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="neurostage",
        description="Dementia staging from 2D brain-scan slices.",
    )
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        return p

    p = add("gen-phantoms", cmd_gen_phantoms, "write a synthetic labelled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--patients-per-class", type=int, default=10)
    p.add_argument("--scans-per-patient", type=int, default=1)
    p.add_argument("--slices-per-scan", type=int, default=20)

    p = add("preprocess", cmd_preprocess, "measure slices into a feature CSV")
    p.add_argument("--root", required=True)
    p.add_argument("--out-features", required=True)
    p.add_argument("--processed-dir", help="also write processed crops here")

    p = add("filter", cmd_filter, "apply the brain-loss slice filter")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)

    p = add("train-rf", cmd_train_rf, "train the volume-based forest")
    p.add_argument("--features", required=True)
    p.add_argument("--task", choices=("detection", "classification"), default="detection")
    p.add_argument("--out-model", required=True)
    p.add_argument("--repeats", type=int, help="repeated evaluation with distinct seeds")
    p.add_argument("--heatmap", help="write the confusion heatmap here")

    p = add("train-cnn", cmd_train_cnn, "train the slice network")
    p.add_argument("--root", required=True)
    p.add_argument("--task", choices=("detection", "classification"), default="classification")
    p.add_argument("--out-model", required=True)
    p.add_argument("--no-filter", action="store_true", help="skip the brain-loss filter")

    p = add("stack", cmd_stack, "aggregate scan votes and train the forest head")
    p.add_argument("--model", required=True, help="network weight file")
    p.add_argument("--root", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--heatmap")

    p = add("predict", cmd_predict, "per-slice predictions, optionally gated")
    p.add_argument("--model", required=True, help="network weight file")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ood-cutoff", type=float, help="confidence cutoff for unsure outcomes")
    p.add_argument(
        "--unsure-policy",
        type=float,
        help="scan-level unsure fraction (used with --out-scans)",
    )
    p.add_argument("--out-scans", help="also write per-scan outcomes here")

    p = add("calibrate-ood", cmd_calibrate_ood, "compare confidence on two corpora")
    p.add_argument("--model", required=True)
    p.add_argument("--id-root", required=True)
    p.add_argument("--ood-root", required=True)
    p.add_argument("--out")

    p = add("evaluate", cmd_evaluate, "score a prediction report against truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--out-metrics")
    p.add_argument("--heatmap")

    p = add("run", cmd_run, "run a named pipeline from a config file")
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "run" and not args.config:
        parser.error("run requires --config")
    args.fn(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
