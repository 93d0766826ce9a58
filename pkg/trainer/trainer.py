"""
Combined-objective training.

total = lambda_det * detection + lambda_refine * refine + lambda_transfer * transfer

Refine and transfer switch on after warmup_epochs so candidate selection
works on trained rather than random objectness.
"""
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import torch
from tqdm import tqdm

from detector import (
    BatchTargets,
    DenseDetector,
    assign_targets,
    decode_batch,
    detection_loss,
    gather_boxes,
    gather_category_logits,
    image_to_tensor,
    load_checkpoint,
    save_checkpoint,
)
from detector.losses import check_finite
from embed_transfer import (
    TeacherFeatureMap,
    TEACHER,
    collect_transfer_instances,
    roi_pool_teacher,
    similarity_matrix,
    transfer_loss,
)
from evaluation import (
    MetricReport,
    detection_report,
    embedding_report,
    predict_scenes,
    unknown_gt_embeddings,
    write_report,
)
from geometry import Box, BinaryMask, iou_matrix
from synthdata import (
    ParallelSceneGenerator,
    Scene,
    load_dataset,
    make_rng,
    make_teacher,
    oracle_segmenter,
)
from unknown_refine import (
    KNOWN_OVERLAP_IOU,
    build_pseudo_targets,
    gather_candidate_cells,
    refine_loss,
    select_unknown_candidates,
    unknown_category_loss,
)
from utils import logger
from utils.errors import DegenerateInput, NonFinite, SchemaError
from utils.helper import apply_thread_cap, load_json_file, resolve_threads, save_json_file
from .config import TrainConfig

# Stream tag for batch shuffling
SHUFFLE_STREAM = 7

MANIFEST_FILE = "manifest.json"
METRIC_REPORT_FILE = "metric_report.json"
BEST_CHECKPOINT = "best.pt"
LAST_CHECKPOINT = "last.pt"


@dataclass
class TrainSample:
    """One training image with everything the three losses need."""

    image_id: int
    image: torch.Tensor
    known_gt: List[Tuple[Box, int]]
    masks: List[BinaryMask]
    teacher: TeacherFeatureMap

    @property
    def known_boxes(self) -> List[Box]:
        return [box for box, _ in self.known_gt]


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    epochs_completed: int
    best_epoch: int
    best_u_recall: float
    best_map: float = 0.0
    loss_curves: Dict[str, List[float]] = field(default_factory=dict)
    val_curves: Dict[str, List[float]] = field(default_factory=dict)
    metric_report_path: str = ""
    checkpoint_path: str = ""
    config: dict = field(default_factory=dict)

    def save(self, path: str) -> str:
        save_json_file(asdict(self), path)
        return path

    @classmethod
    def load(cls, path: str) -> "RunManifest":
        if not os.path.exists(path):
            raise SchemaError("run manifest not found", path=path)
        try:
            return cls(**load_json_file(path))
        except TypeError as e:
            raise SchemaError(f"invalid run manifest ({e})", path=path)


def prepare_samples(scenes: List[Scene], cfg: TrainConfig, dtype: torch.dtype = torch.float32) -> List[TrainSample]:
    """
    Attach oracle masks and teacher features (oracle or offline, per
    cfg.teacher.kind) to scenes.

    Only known-category annotations become detection targets; unknown objects
    stay in the images and reach training only through masks and teacher features.
    """
    teacher = make_teacher(cfg.teacher, num_categories=max(c.id for c in cfg.scene.roster) + 1)
    samples = []
    for scene in scenes:
        samples.append(TrainSample(
            image_id=scene.image_id,
            image=image_to_tensor(scene.image, dtype),
            known_gt=[(r.box, r.category_id) for r in scene.known_records],
            masks=oracle_segmenter(scene.records, cfg.segmenter, scene.image_id),
            teacher=teacher.extract(scene.image_id, scene.image, scene.records),
        ))
    return samples


def _weighted(term: str, weight: float, value: torch.Tensor) -> torch.Tensor:
    return check_finite(term, weight * value)


def train_step(model: DenseDetector, optimizer: torch.optim.Optimizer, batch: List[TrainSample],
               cfg: TrainConfig, epoch: int) -> Dict[str, float]:
    """
    One gradient-descent update on the combined objective.

    Args:
        model: Detector (updated in place)
        optimizer: Optimizer over the model parameters
        batch: Training samples
        cfg: Training configuration
        epoch: Current epoch, used for the refine/transfer warmup

    Returns:
        Loss breakdown: total, detection (and its objectness/category/box
        parts), refine (and its refine_box/refine_unknown parts), transfer,
        plus pair and instance counts

    Raises:
        NonFinite: naming the term that became NaN or Inf
    """
    model.train()
    images = torch.stack([s.image for s in batch])
    out = model(images)
    image_size = out.image_size
    det_cfg = model.config

    maps = [assign_targets(s.known_gt, det_cfg, image_size) for s in batch]
    targets = BatchTargets.stack(maps, dtype=out.box_offsets.dtype)

    refine_on = cfg.enable_refine and epoch >= cfg.warmup_epochs
    transfer_on = cfg.enable_transfer and epoch >= cfg.warmup_epochs
    decoded = decode_batch(out, det_cfg) if (refine_on or transfer_on) else [[] for _ in batch]
    candidates = [
        select_unknown_candidates(decoded[i], s.known_boxes, cfg.refine) for i, s in enumerate(batch)
    ]

    zero = out.objectness.sum() * 0.0
    refine_box = zero
    refine_unknown = zero
    ignore = torch.zeros_like(targets.positive)
    extra = torch.zeros_like(targets.positive)
    num_pairs = 0
    if refine_on:
        box_terms, unknown_terms = [], []
        for i, sample in enumerate(batch):
            cands = candidates[i]
            pairs = build_pseudo_targets(
                [decoded[i][j].box for j in cands], sample.masks, cfg.refine,
                candidate_ids=cands, known_gt=sample.known_boxes,
            )
            if not pairs:
                continue
            if sample.known_boxes:
                overlap = iou_matrix([p.target_box for p in pairs], sample.known_boxes)
                assert (overlap < KNOWN_OVERLAP_IOU).all(), "pseudo target overlaps a known gt box"
            cells = gather_candidate_cells(decoded[i], pairs)
            box_terms.append(refine_loss(pairs, gather_boxes(out, i, cells), cfg.refine, image_size))
            # known positives keep their category target
            free = [(row, col) for row, col in cells if not targets.positive[i, row, col]]
            unknown_terms.append(unknown_category_loss(gather_category_logits(out, i, free)))
            marks = extra if cfg.refine.pseudo_objectness else ignore
            for row, col in free:
                marks[i, row, col] = True
            num_pairs += len(pairs)
        if box_terms:
            refine_box = torch.stack(box_terms).sum() / len(batch)
            refine_unknown = torch.stack(unknown_terms).sum() / len(batch)
    refine = refine_box + cfg.refine.lambda_unknown * refine_unknown

    det_total, det_terms = detection_loss(
        out, targets, ignore if ignore.any() else None, extra if extra.any() else None
    )

    transfer = zero
    num_transfer = 0
    if transfer_on:
        students, teachers = [], []
        for i, sample in enumerate(batch):
            tset = collect_transfer_instances(
                sample.known_boxes, decoded[i], candidates[i], out, i, cfg.transfer
            )
            if len(tset) == 0:
                continue
            students.append(tset.embeddings)
            teachers.append(torch.from_numpy(roi_pool_teacher(sample.teacher, tset.boxes)).to(out.embeddings.dtype))
            num_transfer += len(tset)

        if cfg.transfer.cross_image and students:
            pairs_st = [(torch.cat(students), torch.cat(teachers))]
        else:
            pairs_st = list(zip(students, teachers))
        per_set = [
            transfer_loss(similarity_matrix(t, role=TEACHER), similarity_matrix(s), cfg.transfer)
            for s, t in pairs_st
        ]
        if per_set:
            transfer = torch.stack(per_set).sum() / (1 if cfg.transfer.cross_image else len(batch))

    weighted = {
        "detection": _weighted("detection", cfg.lambda_det, det_total),
        "refine": _weighted("refine", cfg.lambda_refine, refine),
        "transfer": _weighted("transfer", cfg.lambda_transfer * cfg.transfer.lambda_transfer, transfer),
    }
    total = check_finite("total", weighted["detection"] + weighted["refine"] + weighted["transfer"])

    if not cfg.all_lambdas_zero:
        optimizer.zero_grad(set_to_none=True)
        total.backward()
        optimizer.step()

    return {
        "total": float(total.detach()),
        "detection": float(det_total.detach()),
        "objectness": float(det_terms["objectness"].detach()),
        "category": float(det_terms["category"].detach()),
        "box": float(det_terms["box"].detach()),
        "refine": float(refine.detach()),
        "refine_box": float(refine_box.detach()),
        "refine_unknown": float(refine_unknown.detach()),
        "transfer": float(transfer.detach()),
        "pairs": float(num_pairs),
        "transfer_instances": float(num_transfer),
    }


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for an epoch under the configured schedule."""
    if cfg.schedule == "step":
        return cfg.lr * cfg.gamma ** (epoch // max(cfg.step_size, 1))
    if cfg.schedule == "cosine" and cfg.epochs > 0:
        return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.lr


def build_optimizer(model: DenseDetector, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


class Trainer:
    """
    Class for running the open-world training loop over synthetic data.
    """

    def __init__(self, cfg: TrainConfig):
        """
        Initialize trainer.

        Args:
            cfg: Training configuration
        """
        self.cfg = cfg
        self.out_dir = cfg.out_dir
        apply_thread_cap(cfg.threads or resolve_threads())
        torch.use_deterministic_algorithms(True, warn_only=True)

        torch.manual_seed(cfg.seed)
        self.model = DenseDetector(cfg.detector)
        self.optimizer = build_optimizer(self.model, cfg)
        self.start_epoch = 0
        self.loss_curves: Dict[str, List[float]] = {}
        self.val_curves: Dict[str, List[float]] = {}
        self.best_u_recall = -1.0
        self.best_map = -1.0
        self.best_epoch = 0
        self.lineage = cfg.hash()
        self.resumed = False

        if cfg.resume_from:
            self._resume(cfg.resume_from)

    def _resume(self, path: str) -> None:
        model, payload = load_checkpoint(path)
        self.model.load_state_dict(model.state_dict())
        if payload.get("optimizer"):
            self.optimizer.load_state_dict(payload["optimizer"])
        extra = payload.get("extra", {})
        self.start_epoch = int(payload["epoch"])
        self.loss_curves = {k: list(v) for k, v in extra.get("loss_curves", {}).items()}
        self.val_curves = {k: list(v) for k, v in extra.get("val_curves", {}).items()}
        self.best_u_recall = float(extra.get("best_u_recall", -1.0))
        self.best_map = float(extra.get("best_map", -1.0))
        self.best_epoch = int(extra.get("best_epoch", 0))
        self.lineage = extra.get("lineage", extra.get("config_hash", self.lineage))
        self.resumed = True
        logger.info(f"Resumed from {path} at epoch {self.start_epoch}")

    def load_scenes(self) -> Tuple[List[Scene], List[Scene]]:
        """Train and validation scenes, read from dataset_dir or generated."""
        if self.cfg.dataset_dir:
            train = load_dataset(os.path.join(self.cfg.dataset_dir, "train")).scenes
            val = load_dataset(os.path.join(self.cfg.dataset_dir, "val")).scenes
            return train, val
        generator = ParallelSceneGenerator(max_processes=self.cfg.threads or resolve_threads(1))
        num_train, num_val = self.cfg.data.num_train, self.cfg.data.num_val
        train = generator.generate(self.cfg.seed, self.cfg.scene, list(range(num_train)))
        val = generator.generate(self.cfg.seed, self.cfg.scene, list(range(num_train, num_train + num_val)))
        return train, val

    def _extra(self) -> dict:
        return {
            "loss_curves": self.loss_curves,
            "val_curves": self.val_curves,
            "best_u_recall": self.best_u_recall,
            "best_map": self.best_map,
            "best_epoch": self.best_epoch,
            "config_hash": self.cfg.hash(),
            "lineage": self.lineage,
        }

    def _batches(self, num_samples: int, epoch: int) -> List[np.ndarray]:
        order = make_rng(self.cfg.seed, SHUFFLE_STREAM, epoch).permutation(num_samples)
        return [order[i:i + self.cfg.batch_size] for i in range(0, num_samples, self.cfg.batch_size)]

    @property
    def first_selectable_epoch(self) -> int:
        """
        Earliest epoch index whose model may become best.pt: the first epoch
        trained with refine/transfer active, or the final epoch of a run that
        ends inside the warmup.
        """
        return min(self.cfg.warmup_epochs, max(self.cfg.epochs - 1, 0))

    def is_better(self, report: MetricReport) -> bool:
        """Higher U-Recall wins, then higher mAP; ties go to the later epoch."""
        return (report.u_recall, report.map) >= (self.best_u_recall, self.best_map)

    def _best_belongs_to_run(self, best_path: str) -> bool:
        """Whether best.pt is the recorded best of the run this one resumes."""
        if not self.resumed or not os.path.exists(best_path):
            return False
        try:
            _, payload = load_checkpoint(best_path)
        except SchemaError:
            return False
        extra = payload.get("extra", {})
        return extra.get("lineage") == self.lineage and int(payload["epoch"]) == self.best_epoch

    def validate(self, val_scenes: List[Scene]) -> MetricReport:
        predictions = predict_scenes(self.model, val_scenes, self.cfg.eval_batch_size)
        return detection_report(val_scenes, predictions, self.cfg.scene.known_ids, seed=self.cfg.seed)

    def train_epoch(self, samples: List[TrainSample], epoch: int) -> Dict[str, float]:
        for group in self.optimizer.param_groups:
            group["lr"] = learning_rate(self.cfg, epoch)

        sums: Dict[str, float] = {}
        batches = self._batches(len(samples), epoch)
        progress = tqdm(batches, desc=f"epoch {epoch + 1}/{self.cfg.epochs}", disable=not self.cfg.progress)
        for indices in progress:
            try:
                breakdown = train_step(self.model, self.optimizer, [samples[i] for i in indices], self.cfg, epoch)
            except NonFinite as e:
                logger.error(f"Aborting run at epoch {epoch + 1}: {e}")
                raise
            for key, value in breakdown.items():
                sums[key] = sums.get(key, 0.0) + value
            progress.set_postfix(loss=f"{breakdown['total']:.4f}")
        return {key: value / max(len(batches), 1) for key, value in sums.items()}

    def train(self) -> RunManifest:
        """
        Run all epochs, keep the best post-warmup checkpoint by validation
        U-Recall (then mAP) and write the final metric report and run manifest.

        Returns:
            RunManifest
        """
        cfg = self.cfg
        os.makedirs(self.out_dir, exist_ok=True)
        best_path = os.path.join(self.out_dir, BEST_CHECKPOINT)
        last_path = os.path.join(self.out_dir, LAST_CHECKPOINT)

        train_scenes, val_scenes = self.load_scenes()
        samples = prepare_samples(train_scenes, cfg)
        logger.info(f"Training on {len(samples)} scenes, validating on {len(val_scenes)} "
                    f"(refine={cfg.enable_refine}, transfer={cfg.enable_transfer})")

        if not self._best_belongs_to_run(best_path):
            if self.start_epoch:
                logger.info(f"No best checkpoint of this run in {self.out_dir}; selection restarts at "
                            f"epoch {self.start_epoch}")
                self.best_u_recall, self.best_map = -1.0, -1.0
            self.best_epoch = self.start_epoch
            save_checkpoint(best_path, self.model, self.start_epoch, self.optimizer, self._extra())

        for epoch in range(self.start_epoch, cfg.epochs):
            start = time.time()
            means = self.train_epoch(samples, epoch)
            for key, value in means.items():
                self.loss_curves.setdefault(key, []).append(value)

            report = self.validate(val_scenes)
            self.val_curves.setdefault("u_recall", []).append(report.u_recall)
            self.val_curves.setdefault("map", []).append(report.map)
            logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: loss {means.get('total', 0.0):.4f}, "
                        f"U-Recall {report.u_recall:.4f}, mAP {report.map:.4f} ({time.time() - start:.1f}s)")

            if epoch >= self.first_selectable_epoch and self.is_better(report):
                self.best_u_recall = report.u_recall
                self.best_map = report.map
                self.best_epoch = epoch + 1
                save_checkpoint(best_path, self.model, epoch + 1, self.optimizer, self._extra())
            save_checkpoint(last_path, self.model, epoch + 1, self.optimizer, self._extra())

        return self.finish(val_scenes, best_path)

    def finish(self, val_scenes: List[Scene], best_path: str) -> RunManifest:
        """Evaluate the best checkpoint and write the metric report and manifest."""
        cfg = self.cfg
        best_model, _ = load_checkpoint(best_path)
        predictions = predict_scenes(best_model, val_scenes, cfg.eval_batch_size)
        report = detection_report(val_scenes, predictions, cfg.scene.known_ids, seed=cfg.seed)

        embeddings, labels = unknown_gt_embeddings(best_model, val_scenes, cfg.eval_batch_size)
        try:
            embed, _ = embedding_report(embeddings, labels, seed=cfg.seed)
            report = report.merge(embed)
        except DegenerateInput as e:
            logger.warning(f"Skipping discovery metrics: {e}")
        report.config = cfg.result_dict()

        report_path = write_report(report, os.path.join(self.out_dir, METRIC_REPORT_FILE))
        manifest = RunManifest(
            config_hash=cfg.hash(),
            seed=cfg.seed,
            epochs_completed=max(cfg.epochs, self.start_epoch),
            best_epoch=self.best_epoch,
            best_u_recall=max(self.best_u_recall, 0.0),
            best_map=max(self.best_map, 0.0),
            loss_curves=self.loss_curves,
            val_curves=self.val_curves,
            metric_report_path=report_path,
            checkpoint_path=best_path,
            config=cfg.result_dict(),
        )
        manifest.save(os.path.join(self.out_dir, MANIFEST_FILE))
        logger.info(f"Run manifest written to {os.path.join(self.out_dir, MANIFEST_FILE)}")
        return manifest


def train(cfg: TrainConfig) -> RunManifest:
    """Train a detector end to end and return its manifest."""
    return Trainer(cfg).train()
