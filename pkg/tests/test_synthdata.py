import json
from itertools import combinations

import numpy as np
import pytest

from embed_transfer import OfflineTeacher, roi_pool_teacher
from geometry import Box, BinaryMask, iou, mask_to_box
from synthdata import (
    AnnotationRecord,
    CategorySpec,
    OracleTeacher,
    ParallelSceneGenerator,
    SceneSpec,
    SegmenterConfig,
    TeacherConfig,
    category_prototypes,
    default_roster,
    generate_scene,
    generate_sequence,
    group_sequences,
    load_dataset,
    make_rng,
    make_teacher,
    oracle_segmenter,
    oracle_teacher,
    reflect_position,
    serialize_dataset,
    validate_roster,
)
from synthdata.constants import ANNOTATION_FILE, DATASET_FORMAT_VERSION
from synthdata.scenes import make_background, place_sprites
from synthdata.sequences import SEQUENCE_STREAM
from utils.errors import PlacementFailure, SchemaError
from utils.helper import file_sha256


def simulate_bounce(start: float, velocity: float, steps: int, span: float) -> float:
    position = start
    for _ in range(steps):
        position += velocity
        if position > span:
            position, velocity = 2 * span - position, -velocity
        elif position < 0:
            position, velocity = -position, -velocity
    return position


def record(box: Box, category_id: int, split: str = "UNKNOWN") -> AnnotationRecord:
    cells = np.zeros((64, 64), dtype=bool)
    cells[int(box.y1):int(box.y2), int(box.x1):int(box.x2)] = True
    return AnnotationRecord(box=box, category_id=category_id, split=split, mask=BinaryMask(cells))


def test_default_roster_is_four_known_four_unknown():
    roster = default_roster()
    validate_roster(roster)
    assert sorted(c.id for c in roster if c.split == "KNOWN") == [0, 1, 2, 3]
    assert len([c for c in roster if c.split == "UNKNOWN"]) == 4


def test_roster_validation(small_roster):
    duplicate = small_roster + [CategorySpec(0, "again", "ring", "red", True, "UNKNOWN")]
    with pytest.raises(ValueError):
        validate_roster(duplicate)
    same_look = small_roster + [CategorySpec(9, "twin", "disc", "red", False, "UNKNOWN")]
    with pytest.raises(ValueError):
        validate_roster(same_look)


def test_generate_scene_is_deterministic():
    spec = SceneSpec()
    assert generate_scene(5, spec, 3) == generate_scene(5, spec, 3)
    assert generate_scene(5, spec, 3) != generate_scene(5, spec, 4)


def test_generate_scene_invariants():
    spec = SceneSpec()
    for seed in range(100):
        scene = generate_scene(seed, spec)
        assert scene.image.shape == (64, 64, 3) and scene.image.dtype == np.uint8
        assert spec.instance_range[0] <= len(scene.records) <= spec.instance_range[1]
        for r in scene.records:
            assert mask_to_box(r.mask) == r.box
            assert r.split == spec.categories[r.category_id].split
            assert spec.size_range[0] - 1 <= max(r.box.width, r.box.height) <= spec.size_range[1]


def test_placement_failure():
    spec = SceneSpec(image_size=(32, 32), instance_range=(6, 6), size_range=(30, 32), max_pair_iou=0.0)
    with pytest.raises(PlacementFailure):
        generate_scene(0, spec)


def test_segmenter_identity_and_drop():
    scene = generate_scene(1, SceneSpec())
    masks = oracle_segmenter(scene.records, SegmenterConfig())
    assert masks == [r.mask for r in scene.records]
    assert oracle_segmenter(scene.records, SegmenterConfig(drop_prob=1.0)) == []


def test_segmenter_dilation_grows_box_by_at_most_one():
    for seed in range(10):
        scene = generate_scene(seed, SceneSpec())
        for r, mask in zip(scene.records, oracle_segmenter(scene.records, SegmenterConfig(radius=1))):
            grown = mask_to_box(mask)
            assert r.box.x1 - 1 <= grown.x1 <= r.box.x1
            assert r.box.y1 - 1 <= grown.y1 <= r.box.y1
            assert r.box.x2 <= grown.x2 <= r.box.x2 + 1
            assert r.box.y2 <= grown.y2 <= r.box.y2 + 1


def test_segmenter_is_deterministic():
    scene = generate_scene(2, SceneSpec())
    cfg = SegmenterConfig(radius=-1, drop_prob=0.5, seed=3)
    assert oracle_segmenter(scene.records, cfg, 7) == oracle_segmenter(scene.records, cfg, 7)


def test_teacher_same_category_cosine_is_one_without_noise():
    image = np.zeros((64, 64, 3), dtype=np.uint8)
    boxes = [Box(0, 0, 16, 16), Box(32, 32, 48, 52)]
    f = oracle_teacher(image, [record(boxes[0], 5), record(boxes[1], 5)], TeacherConfig(sigma=0.0))
    pooled = roi_pool_teacher(f, boxes)
    assert float(pooled[0] @ pooled[1]) == pytest.approx(1.0)


def test_teacher_cross_category_cosine_is_prototype_dot():
    image = np.zeros((64, 64, 3), dtype=np.uint8)
    boxes = [Box(0, 0, 16, 16), Box(32, 32, 48, 52)]
    f = oracle_teacher(image, [record(boxes[0], 4), record(boxes[1], 6)], TeacherConfig(sigma=0.0))
    pooled = roi_pool_teacher(f, boxes)
    prototypes = category_prototypes(8)
    assert float(pooled[0] @ pooled[1]) == pytest.approx(float(prototypes[4] @ prototypes[6]), abs=1e-9)
    assert f.features.shape == (16, 16, 16)


def test_prototypes_are_orthonormal():
    prototypes = category_prototypes(8)
    assert prototypes.shape == (9, 16)
    assert np.allclose(prototypes @ prototypes.T, np.eye(9), atol=1e-9)


def test_teacher_overlaps_do_not_depend_on_record_order():
    image = np.zeros((64, 64, 3), dtype=np.uint8)
    records = [record(Box(0, 0, 24, 24), 4), record(Box(12, 12, 36, 36), 6)]
    cfg = TeacherConfig(sigma=0.0)
    forward = oracle_teacher(image, records, cfg)
    backward = oracle_teacher(image, records[::-1], cfg)
    assert np.array_equal(forward.features, backward.features)
    prototypes = category_prototypes(8)
    # Cell (4, 4) has its center (18, 18) inside both boxes
    assert np.allclose(forward.features[4, 4], prototypes[4] + prototypes[6])
    pooled = roi_pool_teacher(forward, [r.box for r in records])
    assert float(pooled[0] @ prototypes[4]) > float(pooled[0] @ prototypes[6])


def test_teacher_within_category_more_similar_with_noise():
    spec = SceneSpec()
    within, cross = [], []
    for seed in range(100):
        scene = generate_scene(seed, spec)
        f = oracle_teacher(scene.image, scene.records, TeacherConfig(), image_id=seed)
        pooled = roi_pool_teacher(f, [r.box for r in scene.records])
        for i in range(len(scene.records)):
            for j in range(i + 1, len(scene.records)):
                same = scene.records[i].category_id == scene.records[j].category_id
                (within if same else cross).append(float(pooled[i] @ pooled[j]))
    assert within and cross
    assert np.mean(within) > np.mean(cross)


def test_make_teacher_follows_kind(tmp_path):
    assert isinstance(make_teacher(TeacherConfig(), num_categories=8), OracleTeacher)
    offline = make_teacher(TeacherConfig(kind="offline", feature_dir=str(tmp_path), stride=8), num_categories=8)
    assert isinstance(offline, OfflineTeacher) and offline.stride == 8
    with pytest.raises(ValueError):
        TeacherConfig(kind="offline")
    with pytest.raises(ValueError):
        TeacherConfig(kind="learned")


def test_reflect_position_matches_step_simulation():
    rng = make_rng(61)
    for _ in range(50):
        span = float(rng.uniform(5, 40))
        start = float(rng.uniform(0, span))
        velocity = float(rng.uniform(-2, 2))
        for t in (0, 1, 7, 30, 95):
            assert reflect_position(start, velocity, t, span) == pytest.approx(
                simulate_bounce(start, velocity, t, span), abs=1e-9)
    assert reflect_position(3.0, 1.0, 10, 0.0) == 0.0


def test_sequence_single_frame_and_zero_velocity():
    spec = SceneSpec()
    assert len(generate_sequence(0, spec, 1)) == 1
    frames = generate_sequence(0, spec, 5, max_speed=0.0)
    assert all(f.records == frames[0].records for f in frames)
    with pytest.raises(ValueError):
        generate_sequence(0, spec, 0)


def test_sequence_tracks_are_consistent():
    spec = SceneSpec()
    frames = generate_sequence(4, spec, 30, max_speed=2.0, sequence_id=2, first_image_id=100)
    assert [f.image_id for f in frames] == list(range(100, 130))
    assert all(f.sequence_id == 2 for f in frames)
    first = {r.track_id: r for r in frames[0].records}
    for prev, frame in zip(frames, frames[1:]):
        previous = {r.track_id: r for r in prev.records}
        assert set(previous) == {r.track_id for r in frame.records}
        for r in frame.records:
            assert r.category_id == first[r.track_id].category_id
            assert r.box.width == first[r.track_id].box.width
            assert abs(r.box.x1 - previous[r.track_id].box.x1) <= 3
            assert abs(r.box.y1 - previous[r.track_id].box.y1) <= 3
            assert mask_to_box(r.mask) == r.box


def test_standard_sequences_respect_overlap_rules():
    spec = SceneSpec()
    for sequence_id in range(20):
        for frame in generate_sequence(0, spec, 30, max_speed=2.0, sequence_id=sequence_id):
            for a, b in combinations(frame.records, 2):
                overlap = iou(a.box, b.box)
                assert overlap <= spec.max_pair_iou
                if a.category_id == b.category_id:
                    assert overlap == 0.0


def test_lone_object_follows_reflection_formula():
    spec = SceneSpec(instance_range=(1, 1))
    frames = generate_sequence(3, spec, 60, max_speed=2.0, sequence_id=1)
    # Same stream and draw order as the generator: background, layout, velocity
    rng = make_rng(3, SEQUENCE_STREAM, 1)
    make_background(spec, rng)
    sprites, starts = place_sprites(spec, rng)
    velocity = rng.uniform(-2.0, 2.0, size=(1, 2))[0]
    (x0, y0), (w, h) = starts[0], sprites[0].size
    first = frames[0].records[0].box
    dx, dy = first.x1 - x0, first.y1 - y0
    for t, frame in enumerate(frames):
        x = reflect_position(x0, velocity[0], t, spec.image_size[1] - w)
        y = reflect_position(y0, velocity[1], t, spec.image_size[0] - h)
        box = frame.records[0].box
        assert (box.x1, box.y1) == (np.floor(x + 0.5) + dx, np.floor(y + 0.5) + dy)


def test_dataset_round_trip(tmp_path):
    spec = SceneSpec()
    scenes = [generate_scene(0, spec, i) for i in range(4)]
    scenes += generate_sequence(0, spec, 3, first_image_id=4)
    serialize_dataset(scenes, str(tmp_path), spec.roster)
    loaded = load_dataset(str(tmp_path))
    assert loaded.scenes == scenes
    assert loaded.roster == spec.roster
    assert list(group_sequences(loaded.scenes)) == [0]


def test_empty_dataset(tmp_path):
    serialize_dataset([], str(tmp_path))
    payload = json.loads((tmp_path / ANNOTATION_FILE).read_text())
    assert payload["images"] == [] and payload["info"]["format_version"] == DATASET_FORMAT_VERSION
    assert len(load_dataset(str(tmp_path))) == 0


def test_out_of_roster_category_rejected(tmp_path):
    serialize_dataset([generate_scene(0, SceneSpec())], str(tmp_path))
    path = tmp_path / ANNOTATION_FILE
    payload = json.loads(path.read_text())
    payload["annotations"][0]["category_id"] = 42
    path.write_text(json.dumps(payload))
    with pytest.raises(SchemaError) as info:
        load_dataset(str(tmp_path))
    assert info.value.path == str(path)


def test_mask_box_disagreement_rejected(tmp_path):
    serialize_dataset([generate_scene(0, SceneSpec())], str(tmp_path))
    path = tmp_path / ANNOTATION_FILE
    payload = json.loads(path.read_text())
    payload["annotations"][0]["bbox"][0] += 1
    path.write_text(json.dumps(payload))
    with pytest.raises(SchemaError):
        load_dataset(str(tmp_path))


def test_serialization_is_byte_identical(tmp_path):
    spec = SceneSpec()
    for name in ("a", "b"):
        serialize_dataset([generate_scene(9, spec, i) for i in range(3)], str(tmp_path / name))
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert file_sha256(str(tmp_path / "a" / rel)) == file_sha256(str(tmp_path / "b" / rel))


def test_parallel_generation_matches_serial():
    spec = SceneSpec()
    ids = list(range(6))
    parallel = ParallelSceneGenerator(max_processes=2).generate(3, spec, ids)
    assert parallel == [generate_scene(3, spec, i) for i in ids]
    assert ParallelSceneGenerator().generate(3, spec, []) == []
