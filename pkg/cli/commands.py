"""
Command-line entry points.

Every command reads the same JSON config (a "train" section plus an optional
"tracker" section, or flat training keys), writes all artifacts under --out
with stable names, and records a command_manifest.json next to them.
"""
import argparse
import csv
import logging
import os
from dataclasses import asdict, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from detector import UNKNOWN, load_checkpoint
from evaluation import (
    append_csv_row,
    cluster_embeddings,
    detection_report,
    embedding_report,
    estimate_k_elbow,
    match_by_score,
    predict_scenes,
    read_report,
    tracking_metrics,
    unknown_gt_embeddings,
    write_report,
    MetricReport,
)
from synthdata import (
    CategorySpec,
    DatasetBuilder,
    ParallelSceneGenerator,
    TeacherConfig,
    Scene,
    generate_sequence,
    group_sequences,
    load_dataset,
    make_teacher,
)
from synthdata.constants import ANNOTATION_FILE, KNOWN
from tracker import DetectorSource, GroundTruthSource, TrackerConfig, gt_frame_tracks, run, write_mot
from trainer import MANIFEST_FILE, METRIC_REPORT_FILE, RunManifest, TrainConfig, load_train_config, train
from utils import logger, setup_logger
from utils.errors import SchemaError
from utils.helper import apply_thread_cap, load_json_file, merge_config, resolve_threads, save_json_file

COMMAND_MANIFEST = "command_manifest.json"
COMMANDS = ("gen-data", "train", "eval-detect", "eval-embed", "discover", "track", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="owdet", description="Open-world detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default="", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="Override the config seed")
        p.add_argument("--out", required=True, help="Output directory")
        return p

    add("gen-data", "Generate train/val/sequence splits")

    p = add("train", "Train a detector")
    p.add_argument("--dataset", default=None, help="Dataset directory from gen-data")
    p.add_argument("--checkpoint", default=None, help="Resume from this checkpoint")
    p.add_argument("--no-progress", action="store_true", help="Disable progress bars")
    p.add_argument("--teacher-features", default=None, metavar="DIR",
                   help="Read teacher feature maps from DIR (one <image_id>.npy each) instead of the oracle")

    for name, help_text in (("eval-detect", "mAP, per-class AP and U-Recall"),
                            ("eval-embed", "Class-discovery quality on unknown gt boxes")):
        p = add(name, help_text)
        p.add_argument("--checkpoint", nargs="+", required=True, help="One or more checkpoints")
        p.add_argument("--dataset", default=None)
        if name == "eval-detect":
            p.add_argument("--include-all-unknown", action="store_true",
                           help="Count every prediction toward U-Recall")
        else:
            p.add_argument("--k", type=int, default=None, help="Cluster count (default: unknown categories)")

    p = add("discover", "Cluster unknown detections into new classes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--k", type=int, default=None, help="Cluster count (default: unknown categories)")
    p.add_argument("--estimate-k", type=int, default=None, metavar="K_MAX",
                   help="Pick k with an elbow scan up to K_MAX (experimental)")

    p = add("track", "Track synthetic sequences")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", default=None)
    group.add_argument("--oracle", action="store_true", help="Ground-truth boxes with teacher embeddings")
    p.add_argument("--dataset", default=None)
    p.add_argument("--teacher-features", default=None, metavar="DIR",
                   help="With --oracle, embed ground-truth boxes with the feature maps in DIR")

    p = sub.add_parser("report", help="Compare training runs")
    p.add_argument("runs", nargs="+", help="Run directories holding manifest.json")
    p.add_argument("--out", required=True)
    return parser


def load_tracker_config(path: str) -> TrackerConfig:
    """Tracker section of a config file, defaults otherwise."""
    raw = load_json_file(path) if path else {}
    section = raw.get("tracker", {}) if isinstance(raw, dict) else {}
    try:
        return TrackerConfig(**merge_config(asdict(TrackerConfig()), section, path="tracker"))
    except SchemaError as e:
        raise SchemaError(str(e), path=path)
    except (TypeError, ValueError) as e:
        raise SchemaError(f"invalid tracker config ({e})", path=path)


def with_offline_teacher(cfg: TrainConfig, feature_dir: str) -> TrainConfig:
    """Copy of cfg whose teacher reads precomputed maps from feature_dir."""
    teacher = TeacherConfig(**{**asdict(cfg.teacher), "kind": "offline", "feature_dir": feature_dir})
    return replace(cfg, teacher=teacher)


def load_split(cfg: TrainConfig, dataset: Optional[str], split: str) -> Tuple[List[Scene], List[CategorySpec]]:
    """
    Scenes of one split, read from a gen-data directory or generated from the config.

    Args:
        cfg: Training config supplying seed, scene spec and split sizes
        dataset: gen-data output directory, a single split directory, or None
        split: "val" or "sequences"

    Returns:
        (scenes, category roster)
    """
    if dataset:
        path = os.path.join(dataset, split)
        if not os.path.exists(os.path.join(path, ANNOTATION_FILE)):
            path = dataset
        data = load_dataset(path)
        return data.scenes, data.roster

    data = cfg.data
    if split == "sequences":
        frames: List[Scene] = []
        first_id = data.num_train + data.num_val
        for sequence_id in range(data.num_sequences):
            frames.extend(generate_sequence(cfg.seed, cfg.scene, data.sequence_length, data.max_speed,
                                            sequence_id=sequence_id, first_image_id=first_id + len(frames)))
        return frames, cfg.scene.roster
    ids = list(range(data.num_train, data.num_train + data.num_val))
    scenes = ParallelSceneGenerator(max_processes=resolve_threads(1)).generate(cfg.seed, cfg.scene, ids)
    return scenes, cfg.scene.roster


def _known_ids(roster: Sequence[CategorySpec]) -> List[int]:
    return sorted(c.id for c in roster if c.split == KNOWN)


def _check_classes(model, roster: Sequence[CategorySpec], path: str) -> None:
    known = len(_known_ids(roster))
    if model.config.num_classes != known:
        raise SchemaError(f"checkpoint predicts {model.config.num_classes} classes, dataset has {known} known", path=path)


def _run_label(checkpoint: str) -> str:
    parent = os.path.basename(os.path.dirname(os.path.abspath(checkpoint)))
    return f"{parent}/{os.path.splitext(os.path.basename(checkpoint))[0]}"


def _report_paths(out: str, checkpoints: Sequence[str]) -> List[str]:
    if len(checkpoints) == 1:
        return [os.path.join(out, METRIC_REPORT_FILE)]
    return [os.path.join(out, f"metric_report_{i}.json") for i in range(len(checkpoints))]


def _fresh_csv(path: str) -> str:
    if os.path.exists(path):
        os.remove(path)
    return path


def cmd_gen_data(args: argparse.Namespace, cfg: TrainConfig) -> dict:
    builder = DatasetBuilder(args.out, cfg.scene, cfg.data, max_processes=resolve_threads(1))
    summary = builder.build(cfg.seed)
    for name, counts in summary.items():
        print(f"{name}: {counts['images']} images, {counts['annotations']} annotations "
              f"({counts['known']} known, {counts['unknown']} unknown)")
    save_json_file(summary, os.path.join(args.out, "summary.json"))
    return {"summary": summary}


def cmd_train(args: argparse.Namespace, cfg: TrainConfig) -> dict:
    manifest = train(cfg)
    return {"manifest": os.path.join(cfg.out_dir, MANIFEST_FILE), "best_epoch": manifest.best_epoch}


def cmd_eval_detect(args: argparse.Namespace, cfg: TrainConfig) -> dict:
    scenes, roster = load_split(cfg, args.dataset, "val")
    csv_path = _fresh_csv(os.path.join(args.out, "eval_detect.csv"))
    written = []
    for checkpoint, path in zip(args.checkpoint, _report_paths(args.out, args.checkpoint)):
        model, _ = load_checkpoint(checkpoint)
        _check_classes(model, roster, checkpoint)
        predictions = predict_scenes(model, scenes, cfg.eval_batch_size)
        report = detection_report(scenes, predictions, _known_ids(roster),
                                  include_all_unknown=args.include_all_unknown, seed=cfg.seed)
        report.config = cfg.result_dict()
        written.append(write_report(report, path))
        append_csv_row(report, csv_path, _run_label(checkpoint))
        logger.info(f"{checkpoint}: mAP {report.map:.4f}, U-Recall {report.u_recall:.4f}")
    return {"reports": written, "csv": csv_path}


def cmd_eval_embed(args: argparse.Namespace, cfg: TrainConfig) -> dict:
    scenes, roster = load_split(cfg, args.dataset, "val")
    csv_path = _fresh_csv(os.path.join(args.out, "eval_embed.csv"))
    written = []
    for checkpoint, path in zip(args.checkpoint, _report_paths(args.out, args.checkpoint)):
        model, _ = load_checkpoint(checkpoint)
        embeddings, labels = unknown_gt_embeddings(model, scenes, cfg.eval_batch_size)
        report, score = embedding_report(embeddings, labels, k=args.k, seed=cfg.seed)
        report.config = cfg.result_dict()
        written.append(write_report(report, path))
        append_csv_row(report, csv_path, _run_label(checkpoint))
        logger.info(f"{checkpoint}: NMI {score.nmi:.4f}, purity {score.purity:.4f} "
                    f"over {score.num_instances} unknown instances (k={score.k})")
    return {"reports": written, "csv": csv_path}


def unknown_detections(model, scenes: Sequence[Scene], batch_size: int) -> List[dict]:
    """
    Every detection labeled unknown, with its embedding and the hidden category
    of the unknown gt box it overlaps one-to-one at IoU >= 0.5 (None otherwise).
    """
    predictions = predict_scenes(model, scenes, batch_size)
    found = []
    for scene, instances in zip(scenes, predictions):
        unknown = [inst for inst in instances if inst.label == UNKNOWN]
        gt = scene.unknown_records
        matched = dict(match_by_score([u.box for u in unknown], [u.objectness for u in unknown],
                                      [r.box for r in gt], 0.5))
        for i, inst in enumerate(unknown):
            found.append({
                "image_id": scene.image_id,
                "box": inst.box.to_xywh(),
                "objectness": inst.objectness,
                "embedding": np.asarray(inst.embedding, dtype=np.float64),
                "category_id": gt[matched[i]].category_id if i in matched else None,
            })
    return found


def cmd_discover(args: argparse.Namespace, cfg: TrainConfig) -> dict:
    scenes, roster = load_split(cfg, args.dataset, "val")
    model, _ = load_checkpoint(args.checkpoint)
    found = unknown_detections(model, scenes, cfg.eval_batch_size)
    if not found:
        raise SchemaError("no unknown detections to cluster", path=args.checkpoint)

    embeddings = np.stack([d["embedding"] for d in found])
    if args.estimate_k:
        k = estimate_k_elbow(embeddings, min(args.estimate_k, len(found)), seed=cfg.seed)
        logger.warning(f"Elbow scan picked k={k}; this estimate is experimental")
    else:
        k = args.k or sum(1 for c in roster if c.split != KNOWN)
    k = min(k, len(found))
    clusters = cluster_embeddings(embeddings, k, seed=cfg.seed)

    assignments = [
        {key: d[key] for key in ("image_id", "box", "objectness", "category_id")} | {"cluster": int(c)}
        for d, c in zip(found, clusters)
    ]
    path = os.path.join(args.out, "discovery.json")
    save_json_file({"k": k, "assignments": assignments}, path)
    logger.info(f"Clustered {len(found)} unknown detections into {k} groups")

    outputs = {"assignments": path, "k": k}
    matched = [i for i, d in enumerate(found) if d["category_id"] is not None]
    labels = np.asarray([found[i]["category_id"] for i in matched], dtype=np.int64)
    if len(np.unique(labels)) >= 2 and len(matched) >= k:
        report, _ = embedding_report(embeddings[matched], labels, k=k, seed=cfg.seed)
        report.config = cfg.result_dict()
        outputs["report"] = write_report(report, os.path.join(args.out, METRIC_REPORT_FILE))
    return outputs


def cmd_track(args: argparse.Namespace, cfg: TrainConfig) -> dict:
    tracker_cfg = load_tracker_config(args.config)
    frames, roster = load_split(cfg, args.dataset, "sequences")
    if args.oracle:
        source = GroundTruthSource(make_teacher(cfg.teacher, num_categories=max(c.id for c in roster) + 1))
    else:
        model, _ = load_checkpoint(args.checkpoint)
        source = DetectorSource(model)

    track_dir = os.path.join(args.out, "tracks")
    switches, idf1, precision, recall = 0, [], [], []
    for sequence_id, sequence in sorted(group_sequences(frames).items()):
        result = run(sequence, source, tracker_cfg)
        write_mot(result.rows, os.path.join(track_dir, f"seq_{sequence_id:03d}.txt"))
        save_json_file([log.to_dict() for log in result.logs],
                       os.path.join(track_dir, f"seq_{sequence_id:03d}_log.json"))
        score = tracking_metrics(result.frames, gt_frame_tracks(sequence))
        switches += score.id_switches
        idf1.append(score.idf1_like)
        precision.append(score.precision)
        recall.append(score.recall)

    report = MetricReport(
        seed=cfg.seed,
        id_switches=switches,
        idf1_like=float(np.mean(idf1)) if idf1 else 0.0,
        track_precision=float(np.mean(precision)) if precision else 0.0,
        track_recall=float(np.mean(recall)) if recall else 0.0,
        config={"train": cfg.result_dict(), "tracker": asdict(tracker_cfg)},
    )
    path = write_report(report, os.path.join(args.out, METRIC_REPORT_FILE))
    logger.info(f"Tracked {len(idf1)} sequences: {switches} id switches, idf1_like {report.idf1_like:.4f}")
    return {"report": path, "tracks": track_dir}


ABLATION_COLUMNS = ("run", "refine", "transfer", "seed", "map", "u_recall", "unknown_nmi", "unknown_purity", "best_epoch")


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def plot_loss_curves(manifests: Dict[str, RunManifest], path: str) -> str:
    """One panel per loss term, one line per run."""
    terms = ("total", "detection", "refine", "transfer")
    fig, axes = plt.subplots(1, len(terms), figsize=(4 * len(terms), 3.2))
    for ax, term in zip(axes, terms):
        for name, manifest in manifests.items():
            curve = manifest.loss_curves.get(term, [])
            if curve:
                ax.plot(range(1, len(curve) + 1), curve, marker="o", label=name)
        ax.set_title(term)
        ax.set_xlabel("epoch")
    axes[0].legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def cmd_report(args: argparse.Namespace, cfg: TrainConfig) -> dict:
    manifests: Dict[str, RunManifest] = {}
    rows = []
    for run_dir in args.runs:
        manifest = RunManifest.load(os.path.join(run_dir, MANIFEST_FILE))
        report = read_report(os.path.join(run_dir, METRIC_REPORT_FILE))
        name = os.path.basename(os.path.normpath(run_dir))
        manifests[name] = manifest
        rows.append({
            "run": name,
            "refine": manifest.config.get("enable_refine"),
            "transfer": manifest.config.get("enable_transfer"),
            "seed": manifest.seed,
            "map": report.map,
            "u_recall": report.u_recall,
            "unknown_nmi": report.unknown_nmi,
            "unknown_purity": report.unknown_purity,
            "best_epoch": manifest.best_epoch,
        })

    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "ablation.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        writer.writerows({k: ("" if row[k] is None else row[k]) for k in ABLATION_COLUMNS} for row in rows)

    md_path = os.path.join(args.out, "ablation.md")
    lines = ["| " + " | ".join(ABLATION_COLUMNS) + " |", "|" + "---|" * len(ABLATION_COLUMNS)]
    lines += ["| " + " | ".join(_fmt(row[k]) for k in ABLATION_COLUMNS) + " |" for row in rows]
    with open(md_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")

    plot_path = plot_loss_curves(manifests, os.path.join(args.out, "loss_curves.png"))
    logger.info(f"Compared {len(rows)} runs: {md_path}")
    return {"table": csv_path, "markdown": md_path, "plot": plot_path, "rows": len(rows)}


HANDLERS: Dict[str, Callable[[argparse.Namespace, TrainConfig], dict]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval-detect": cmd_eval_detect,
    "eval-embed": cmd_eval_embed,
    "discover": cmd_discover,
    "track": cmd_track,
    "report": cmd_report,
}


def _command_record(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "no_progress")}


def run_command(args: argparse.Namespace) -> int:
    """
    Execute a parsed command and write its manifest.

    Returns:
        0 on success, 1 when the command failed
    """
    os.makedirs(args.out, exist_ok=True)
    level = getattr(logging, os.environ.get("LOG_LEVEL", "INFO").upper(), logging.INFO)
    setup_logger(log_dir=os.path.join(args.out, "logs"), level=level, log_name=args.command)
    manifest_path = os.path.join(args.out, COMMAND_MANIFEST)
    record = {"command": args.command, "arguments": _command_record(args)}
    try:
        cfg = load_train_config(
            getattr(args, "config", ""),
            seed=getattr(args, "seed", None),
            out_dir=args.out,
            dataset_dir=getattr(args, "dataset", None) if args.command == "train" else None,
            resume_from=getattr(args, "checkpoint", None) if args.command == "train" else None,
            progress=False if getattr(args, "no_progress", False) else None,
            threads=resolve_threads(),
        )
        if getattr(args, "teacher_features", None):
            cfg = with_offline_teacher(cfg, args.teacher_features)
        apply_thread_cap(cfg.threads)
        record.update(config_hash=cfg.hash(), seed=cfg.seed)
        outputs = HANDLERS[args.command](args, cfg)
    except Exception as e:
        logger.error(f"Command '{args.command}' failed: {e}")
        save_json_file({**record, "status": "error", "error": str(e)}, manifest_path)
        return 1

    save_json_file({**record, "status": "ok", "outputs": outputs}, manifest_path)
    logger.info(f"Command '{args.command}' finished; manifest at {manifest_path}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run_command(args)
