import json
import os
import time

import numpy as np
import pytest
import torch

from detector import DenseDetector, DetectorConfig, image_to_tensor, load_checkpoint
from embed_transfer import TransferConfig
from evaluation import MetricReport, read_report
from geometry import BinaryMask
from synthdata import DataConfig, SegmenterConfig, generate_scene, oracle_teacher
from trainer import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    MANIFEST_FILE,
    METRIC_REPORT_FILE,
    RunManifest,
    TrainConfig,
    TrainSample,
    Trainer,
    build_optimizer,
    learning_rate,
    load_train_config,
    prepare_samples,
    train,
    train_step,
)
from unknown_refine import RefineConfig, unknown_category_loss
from utils.errors import NonFinite, SchemaError
from utils.helper import file_sha256


@pytest.fixture
def train_config(small_spec, tmp_path):
    def make(**overrides) -> TrainConfig:
        values = dict(
            seed=0,
            epochs=2,
            batch_size=3,
            warmup_epochs=0,
            eval_batch_size=8,
            detector=DetectorConfig(stride=4, num_classes=2, embed_dim=4, channels=[4, 8]),
            scene=small_spec,
            data=DataConfig(num_train=6, num_val=4),
            out_dir=str(tmp_path / "run"),
            progress=False,
            threads=1,
        )
        values.update(overrides)
        return TrainConfig(**values)
    return make


def batch_for(cfg: TrainConfig, min_known: int = 2):
    """Generated scenes holding at least min_known known objects in total."""
    scenes, known = [], 0
    image_id = 0
    while len(scenes) < 3 or known < min_known:
        scene = generate_scene(cfg.seed, cfg.scene, image_id)
        scenes.append(scene)
        known += len(scene.known_records)
        image_id += 1
    return prepare_samples(scenes, cfg)


def fresh_model(cfg: TrainConfig):
    torch.manual_seed(0)
    model = DenseDetector(cfg.detector)
    return model, build_optimizer(model, cfg)


def snapshot(model) -> dict:
    return {k: v.clone() for k, v in model.state_dict().items()}


def unchanged(model, before: dict) -> bool:
    return all(torch.equal(v, before[k]) for k, v in model.state_dict().items())


def test_prepare_samples_keeps_only_known_targets(train_config):
    cfg = train_config()
    scenes = [generate_scene(0, cfg.scene, i) for i in range(8)]
    samples = prepare_samples(scenes, cfg)
    known_ids = set(cfg.scene.known_ids)
    for scene, sample in zip(scenes, samples):
        assert all(category in known_ids for _, category in sample.known_gt)
        assert len(sample.known_gt) == len(scene.known_records)
        assert len(sample.masks) == len(scene.records)


def test_all_lambdas_zero_leaves_parameters_unchanged(train_config):
    cfg = train_config(lambda_det=0.0, lambda_refine=0.0, lambda_transfer=0.0)
    model, optimizer = fresh_model(cfg)
    before = snapshot(model)
    breakdown = train_step(model, optimizer, batch_for(cfg), cfg, epoch=0)
    assert unchanged(model, before)
    assert breakdown["total"] == 0.0


def test_detection_step_updates_parameters(train_config):
    cfg = train_config()
    model, optimizer = fresh_model(cfg)
    before = snapshot(model)
    breakdown = train_step(model, optimizer, batch_for(cfg), cfg, epoch=0)
    assert not unchanged(model, before)
    assert breakdown["total"] > 0
    assert set(breakdown) == {"total", "detection", "objectness", "category", "box",
                              "refine", "refine_box", "refine_unknown", "transfer", "pairs",
                              "transfer_instances"}


def single_candidate_setup(train_config, **refine):
    """
    Blank 32 x 32 image whose detector fires an 8 x 8 box at every cell and
    whose only mask covers the box of cell (3, 3); category logits start at (2, -2).
    """
    cfg = train_config(lambda_det=0.0, lambda_transfer=0.0, enable_transfer=False, lr=0.1,
                       refine=RefineConfig(max_candidates=64, **refine))
    torch.manual_seed(0)
    model = DenseDetector(cfg.detector).double()
    with torch.no_grad():
        for head, bias in ((model.objectness_head, [5.0]),
                           (model.box_head, [float(np.log(np.e - 1.0))] * 4),
                           (model.category_head, [2.0, -2.0])):
            head.weight.zero_()
            head.bias.copy_(torch.tensor(bias, dtype=torch.float64))
    image = np.zeros((32, 32, 3), dtype=np.uint8)
    cells = np.zeros((32, 32), dtype=bool)
    cells[10:18, 10:18] = True
    sample = TrainSample(
        image_id=0,
        image=image_to_tensor(image, torch.float64),
        known_gt=[],
        masks=[BinaryMask(cells)],
        teacher=oracle_teacher(image, [], cfg.teacher, num_categories=4),
    )
    return cfg, model, sample


def unknown_term_at(model, sample, row: int = 3, col: int = 3) -> float:
    with torch.no_grad():
        return unknown_category_loss(model(sample.image[None]).cat_logits[0, row:row + 1, col]).item()


def test_matched_candidate_is_pulled_toward_unknown(train_config):
    cfg, model, sample = single_candidate_setup(train_config)
    before = unknown_term_at(model, sample)
    breakdown = train_step(model, optimizer=build_optimizer(model, cfg), batch=[sample], cfg=cfg, epoch=0)
    assert breakdown["pairs"] == 1.0
    assert breakdown["refine_box"] == pytest.approx(0.0, abs=1e-9)
    assert breakdown["refine_unknown"] == pytest.approx(before)
    assert unknown_term_at(model, sample) < before


def test_lambda_unknown_zero_keeps_category_head(train_config):
    cfg, model, sample = single_candidate_setup(train_config, lambda_unknown=0.0)
    before = snapshot(model)
    breakdown = train_step(model, build_optimizer(model, cfg), [sample], cfg, epoch=0)
    assert breakdown["pairs"] == 1.0 and breakdown["refine_unknown"] > 0
    assert torch.equal(model.category_head.bias, before["category_head.bias"])


@pytest.mark.parametrize("pseudo_objectness", [True, False])
def test_matched_cell_objectness_target(train_config, pseudo_objectness):
    cfg, model, sample = single_candidate_setup(train_config, pseudo_objectness=pseudo_objectness)
    breakdown = train_step(model, build_optimizer(model, cfg), [sample], cfg, epoch=0)
    negative = 5.0 + np.log1p(np.exp(-5.0))
    if pseudo_objectness:
        expected = (63 * negative + np.log1p(np.exp(-5.0))) / 64
    else:
        expected = negative
    assert breakdown["objectness"] == pytest.approx(expected)


def test_disabled_refine_contributes_nothing(train_config):
    cfg = train_config(enable_refine=False)
    model, optimizer = fresh_model(cfg)
    breakdown = train_step(model, optimizer, batch_for(cfg), cfg, epoch=0)
    assert breakdown["refine"] == 0.0 and breakdown["pairs"] == 0.0


def test_warmup_defers_auxiliary_losses(train_config):
    cfg = train_config(warmup_epochs=2)
    model, optimizer = fresh_model(cfg)
    breakdown = train_step(model, optimizer, batch_for(cfg), cfg, epoch=1)
    assert breakdown["refine"] == 0.0 and breakdown["transfer_instances"] == 0.0


def test_transfer_toggle_removes_its_gradient(train_config):
    transfer = TransferConfig(include_candidates=False, cross_image=True)
    weights = dict(lambda_det=0.0, lambda_refine=0.0, lambda_transfer=1.0, transfer=transfer)

    cfg = train_config(enable_transfer=True, **weights)
    model, optimizer = fresh_model(cfg)
    before = snapshot(model)
    breakdown = train_step(model, optimizer, batch_for(cfg), cfg, epoch=0)
    assert breakdown["transfer_instances"] >= 2
    assert breakdown["transfer"] > 0
    assert not unchanged(model, before)

    cfg = train_config(enable_transfer=False, **weights)
    model, optimizer = fresh_model(cfg)
    before = snapshot(model)
    breakdown = train_step(model, optimizer, batch_for(cfg), cfg, epoch=0)
    assert breakdown["transfer"] == 0.0
    assert unchanged(model, before)


def test_non_finite_loss_names_term(train_config):
    cfg = train_config(enable_refine=False, enable_transfer=False)
    model, optimizer = fresh_model(cfg)
    batch = batch_for(cfg)
    batch[0].image = torch.full_like(batch[0].image, float("nan"))
    with pytest.raises(NonFinite) as info:
        train_step(model, optimizer, batch, cfg, epoch=0)
    assert info.value.term == "objectness"


def test_learning_rate_schedules(train_config):
    cosine = train_config(lr=0.1, epochs=4, schedule="cosine")
    assert learning_rate(cosine, 0) == pytest.approx(0.1)
    assert learning_rate(cosine, 2) == pytest.approx(0.05)
    stepped = train_config(lr=0.1, schedule="step", step_size=2, gamma=0.5)
    assert [learning_rate(stepped, e) for e in range(5)] == pytest.approx([0.1, 0.1, 0.05, 0.05, 0.025])
    assert learning_rate(train_config(lr=0.1, schedule="constant"), 7) == 0.1


def test_zero_epochs_writes_manifest(train_config):
    cfg = train_config(epochs=0)
    manifest = train(cfg)
    assert manifest.epochs_completed == 0
    assert manifest.config_hash == cfg.hash()
    assert manifest.loss_curves == {}
    for name in (MANIFEST_FILE, METRIC_REPORT_FILE, BEST_CHECKPOINT):
        assert os.path.exists(os.path.join(cfg.out_dir, name))
    assert RunManifest.load(os.path.join(cfg.out_dir, MANIFEST_FILE)) == manifest


def test_tiny_run_and_report(train_config):
    cfg = train_config()
    manifest = train(cfg)
    assert manifest.epochs_completed == 2
    assert len(manifest.loss_curves["total"]) == 2
    assert len(manifest.val_curves["u_recall"]) == 2
    assert 1 <= manifest.best_epoch <= 2
    assert all(np.isfinite(manifest.loss_curves["total"]))
    report = read_report(manifest.metric_report_path)
    report.validate()
    assert report.config == cfg.result_dict()
    assert os.path.exists(os.path.join(cfg.out_dir, LAST_CHECKPOINT))


def test_default_tiny_run_finishes_within_a_minute(tmp_path):
    cfg = TrainConfig(epochs=1, data=DataConfig(num_train=8, num_val=8),
                      out_dir=str(tmp_path / "tiny"), progress=False, threads=1)
    start = time.perf_counter()
    manifest = train(cfg)
    assert manifest.epochs_completed == 1
    assert time.perf_counter() - start < 60.0


def test_best_checkpoint_comes_after_warmup(train_config):
    cfg = train_config(epochs=3, warmup_epochs=2)
    manifest = train(cfg)
    assert manifest.best_epoch == 3
    _, payload = load_checkpoint(os.path.join(cfg.out_dir, BEST_CHECKPOINT))
    assert payload["epoch"] == manifest.best_epoch


def test_run_ending_inside_warmup_keeps_final_epoch(train_config):
    manifest = train(train_config(epochs=2, warmup_epochs=5))
    assert manifest.best_epoch == 2


def test_selection_prefers_u_recall_then_map_then_later_epoch(train_config):
    trainer = Trainer(train_config())
    trainer.best_u_recall, trainer.best_map = 0.5, 0.2
    assert trainer.is_better(MetricReport(u_recall=0.5, map=0.2))
    assert trainer.is_better(MetricReport(u_recall=0.5, map=0.3))
    assert trainer.is_better(MetricReport(u_recall=0.6, map=0.0))
    assert not trainer.is_better(MetricReport(u_recall=0.5, map=0.1))
    assert not trainer.is_better(MetricReport(u_recall=0.4, map=0.9))


def test_fresh_run_rewrites_stale_best_checkpoint(train_config):
    train(train_config(epochs=2))
    cfg = train_config(seed=7, epochs=0)
    manifest = train(cfg)
    _, payload = load_checkpoint(os.path.join(cfg.out_dir, BEST_CHECKPOINT))
    assert payload["epoch"] == 0
    assert payload["extra"]["config_hash"] == manifest.config_hash == cfg.hash()


def test_resume_keeps_best_checkpoint_of_its_own_run(train_config):
    head = train(train_config(epochs=1))
    cfg = train_config(epochs=2, resume_from=os.path.join(train_config().out_dir, LAST_CHECKPOINT))
    trainer = Trainer(cfg)
    assert trainer._best_belongs_to_run(os.path.join(cfg.out_dir, BEST_CHECKPOINT))
    assert trainer.best_epoch == head.best_epoch == 1


def test_rerun_writes_identical_metric_report(train_config, tmp_path):
    first = train(train_config(out_dir=str(tmp_path / "a")))
    second = train(train_config(out_dir=str(tmp_path / "b")))
    again = train(train_config(out_dir=str(tmp_path / "a")))
    digest = file_sha256(first.metric_report_path)
    assert file_sha256(second.metric_report_path) == digest
    assert file_sha256(again.metric_report_path) == digest


def test_same_seed_gives_identical_curves(train_config, tmp_path):
    first = train(train_config(out_dir=str(tmp_path / "a")))
    second = train(train_config(out_dir=str(tmp_path / "b")))
    assert first.loss_curves == second.loss_curves
    assert first.val_curves == second.val_curves


def test_resume_reproduces_tail(train_config, tmp_path):
    full = train(train_config(epochs=3, out_dir=str(tmp_path / "full")))
    head = train_config(epochs=1, out_dir=str(tmp_path / "head"))
    train(head)
    resumed = train(train_config(
        epochs=3,
        out_dir=str(tmp_path / "tail"),
        resume_from=os.path.join(head.out_dir, LAST_CHECKPOINT),
    ))
    for key, curve in full.loss_curves.items():
        assert resumed.loss_curves[key] == pytest.approx(curve, rel=1e-6, abs=1e-9)


def test_trainer_rejects_missing_resume_checkpoint(train_config, tmp_path):
    with pytest.raises(FileNotFoundError):
        Trainer(train_config(resume_from=str(tmp_path / "missing.pt")))


def test_load_train_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"train": {"epochs": 3, "detector": {"embed_dim": 8}}, "tracker": {}}))
    cfg = load_train_config(str(path), seed=5, out_dir=None)
    assert (cfg.epochs, cfg.detector.embed_dim, cfg.seed) == (3, 8, 5)
    assert cfg.out_dir == TrainConfig().out_dir


def test_unknown_config_key_names_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"detector": {"embed_dimension": 8}}))
    with pytest.raises(SchemaError) as info:
        load_train_config(str(path))
    assert info.value.path == str(path)
    assert "detector.embed_dimension" in str(info.value)


def test_config_hash_ignores_location_keys():
    base = TrainConfig()
    moved = TrainConfig(out_dir="elsewhere", dataset_dir="data", progress=False, threads=2)
    assert base.hash() == moved.hash()
    assert base.hash() != TrainConfig(seed=1).hash()


def test_invalid_config_values():
    with pytest.raises(ValueError):
        TrainConfig(lambda_refine=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(detector=DetectorConfig(num_classes=3))


@pytest.mark.slow
@pytest.mark.parametrize("enable_refine,enable_transfer", [(False, False), (True, False), (False, True), (True, True)])
def test_ablation_runs_complete(enable_refine, enable_transfer, tmp_path):
    cfg = TrainConfig(
        epochs=4,
        data=DataConfig(num_train=64, num_val=32),
        enable_refine=enable_refine,
        enable_transfer=enable_transfer,
        out_dir=str(tmp_path / f"r{int(enable_refine)}t{int(enable_transfer)}"),
        progress=False,
    )
    manifest = train(cfg)
    report = read_report(manifest.metric_report_path)
    report.validate()
    assert report.unknown_nmi is None or 0.0 <= report.unknown_nmi <= 1.0


ABLATION_SEEDS = (0, 1, 2)


def arm_report(tmp_path, seed: int, name: str, **arm):
    """Metric report of one ablation arm on the default synthetic benchmark."""
    cfg = TrainConfig(
        seed=seed,
        epochs=10,
        data=DataConfig(num_train=500, num_val=100),
        out_dir=str(tmp_path / f"{name}-{seed}"),
        progress=False,
        **arm,
    )
    return read_report(train(cfg).metric_report_path)


@pytest.mark.slow
def test_transfer_raises_unknown_nmi(tmp_path):
    gains = []
    for seed in ABLATION_SEEDS:
        base = arm_report(tmp_path, seed, "base", enable_refine=False, enable_transfer=False)
        transfer = arm_report(tmp_path, seed, "transfer", enable_refine=False, enable_transfer=True)
        gains.append((transfer.unknown_nmi or 0.0) - (base.unknown_nmi or 0.0))
    assert np.mean(gains) >= 0.15


@pytest.mark.slow
@pytest.mark.parametrize("drop_prob,min_gain", [(0.0, 0.05), (0.5, 0.02)])
def test_refine_raises_unknown_recall(tmp_path, drop_prob, min_gain):
    segmenter = SegmenterConfig(radius=0, drop_prob=drop_prob)
    gains = []
    for seed in ABLATION_SEEDS:
        base = arm_report(tmp_path, seed, "base", enable_refine=False, enable_transfer=False, segmenter=segmenter)
        refine = arm_report(tmp_path, seed, "refine", enable_refine=True, enable_transfer=False, segmenter=segmenter)
        gains.append(refine.u_recall - base.u_recall)
    assert np.mean(gains) >= min_gain
