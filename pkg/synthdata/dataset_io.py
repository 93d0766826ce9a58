"""
COCO-style dataset files.

Layout of a dataset directory:

    annotations.json   images / annotations / categories / tracks
    images/<id>.png    lossless RGB images
    masks/<id>.png     one binary mask per annotation (0 / 255)

Annotation boxes are stored as [x, y, w, h]. Sequence frames carry
``sequence_id`` and ``frame_index`` on their image entry and ``track_id``
on their annotations; ``tracks`` lists (sequence_id, track_id, category_id).
"""
import os
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from PIL import Image

from geometry import Box, BinaryMask, mask_to_box
from utils import logger
from utils.errors import EmptyMask, SchemaError
from utils.helper import load_json_file, save_json_file
from .constants import ANNOTATION_FILE, IMAGE_DIR, MASK_DIR, DATASET_FORMAT_VERSION
from .scenes import AnnotationRecord, CategorySpec, Scene, default_roster, validate_roster

TOP_LEVEL_KEYS = ("images", "annotations", "categories")


@dataclass
class Dataset:
    scenes: List[Scene]
    roster: List[CategorySpec]

    def __len__(self) -> int:
        return len(self.scenes)

    @property
    def num_annotations(self) -> int:
        return sum(len(s.records) for s in self.scenes)


def _write_png(array: np.ndarray, path: str) -> None:
    Image.fromarray(array).save(path, format="PNG")


def _read_png(path: str, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.array(img.convert(mode))
    except FileNotFoundError:
        raise
    except OSError as e:
        raise SchemaError(f"unreadable image ({e})", path=path)


def serialize_dataset(scenes: Sequence[Scene], path: str,
                      roster: Sequence[CategorySpec] = None) -> str:
    """
    Write scenes to a dataset directory.

    Args:
        scenes: Scenes to store
        path: Output directory
        roster: Category roster (defaults to default_roster())

    Returns:
        Path of the annotation file
    """
    roster = list(roster) if roster is not None else default_roster()
    validate_roster(roster)
    os.makedirs(os.path.join(path, IMAGE_DIR), exist_ok=True)
    os.makedirs(os.path.join(path, MASK_DIR), exist_ok=True)

    images, annotations, tracks = [], [], {}
    ann_id = 0
    for scene in scenes:
        height, width = scene.image.shape[:2]
        file_name = f"{IMAGE_DIR}/{scene.image_id:06d}.png"
        _write_png(scene.image, os.path.join(path, file_name))

        entry = {"id": scene.image_id, "file_name": file_name, "height": height, "width": width}
        if scene.sequence_id is not None:
            entry["sequence_id"] = scene.sequence_id
            entry["frame_index"] = scene.frame_index
        images.append(entry)

        for record in scene.records:
            mask_file = f"{MASK_DIR}/{ann_id:06d}.png"
            _write_png(record.mask.cells.astype(np.uint8) * 255, os.path.join(path, mask_file))
            annotation = {
                "id": ann_id,
                "image_id": scene.image_id,
                "category_id": record.category_id,
                "bbox": record.box.to_xywh(),
                "area": record.box.area,
                "mask_file": mask_file,
            }
            if record.track_id is not None:
                annotation["track_id"] = record.track_id
                key = (scene.sequence_id, record.track_id)
                tracks[key] = {"sequence_id": scene.sequence_id, "track_id": record.track_id,
                               "category_id": record.category_id}
            annotations.append(annotation)
            ann_id += 1

    payload = {
        "info": {"format_version": DATASET_FORMAT_VERSION},
        "images": images,
        "annotations": annotations,
        "categories": [c.to_dict() for c in roster],
    }
    if tracks:
        payload["tracks"] = [tracks[key] for key in sorted(tracks, key=lambda k: (k[0] or 0, k[1]))]

    annotation_path = os.path.join(path, ANNOTATION_FILE)
    save_json_file(payload, annotation_path)
    logger.info(f"Wrote {len(images)} images and {len(annotations)} annotations to {path}")
    return annotation_path


def _parse_categories(raw: list, path: str) -> List[CategorySpec]:
    roster = []
    for item in raw:
        try:
            roster.append(CategorySpec(
                id=int(item["id"]), name=item["name"], shape_kind=item["shape"],
                color=item["color"], textured=bool(item["textured"]), split=item["split"],
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"invalid category entry {item} ({e})", path=path)
    try:
        validate_roster(roster)
    except ValueError as e:
        raise SchemaError(str(e), path=path)
    return roster


def load_dataset(path: str) -> Dataset:
    """
    Read a dataset directory written by serialize_dataset.

    Args:
        path: Dataset directory

    Returns:
        Dataset with scenes ordered as in the annotation file

    Raises:
        SchemaError: on missing keys, unknown category ids, or masks that
            disagree with their boxes
    """
    annotation_path = os.path.join(path, ANNOTATION_FILE)
    payload = load_json_file(annotation_path)
    if not isinstance(payload, dict) or any(k not in payload for k in TOP_LEVEL_KEYS):
        raise SchemaError(f"annotation file must contain keys {TOP_LEVEL_KEYS}", path=annotation_path)

    roster = _parse_categories(payload["categories"], annotation_path)
    categories: Dict[int, CategorySpec] = {c.id: c for c in roster}

    records_by_image: Dict[int, List[AnnotationRecord]] = {}
    for ann in payload["annotations"]:
        try:
            image_id, category_id = int(ann["image_id"]), int(ann["category_id"])
            box = Box.from_xywh(ann["bbox"])
            mask_file = ann["mask_file"]
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"invalid annotation entry {ann} ({e})", path=annotation_path)
        if category_id not in categories:
            raise SchemaError(f"annotation {ann.get('id')} has category id {category_id} outside the roster",
                              path=annotation_path)

        mask = BinaryMask(_read_png(os.path.join(path, mask_file), "L") > 0)
        try:
            mask_box = mask_to_box(mask)
        except EmptyMask:
            raise SchemaError(f"mask {mask_file} is empty", path=annotation_path)
        if mask_box != box:
            raise SchemaError(f"mask {mask_file} box {mask_box.as_tuple()} disagrees with bbox {ann['bbox']}",
                              path=annotation_path)

        category = categories[category_id]
        track_id = ann.get("track_id")
        records_by_image.setdefault(image_id, []).append(AnnotationRecord(
            box=box, category_id=category_id, split=category.split, mask=mask,
            track_id=None if track_id is None else int(track_id),
        ))

    scenes = []
    for entry in payload["images"]:
        try:
            image_id = int(entry["id"])
            image = _read_png(os.path.join(path, entry["file_name"]), "RGB")
            height, width = int(entry["height"]), int(entry["width"])
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"invalid image entry {entry} ({e})", path=annotation_path)
        if image.shape[:2] != (height, width):
            raise SchemaError(f"image {entry['file_name']} is {image.shape[:2]}, expected {(height, width)}",
                              path=annotation_path)
        scenes.append(Scene(
            image_id=image_id,
            image=image,
            records=records_by_image.pop(image_id, []),
            sequence_id=entry.get("sequence_id"),
            frame_index=entry.get("frame_index"),
        ))

    if records_by_image:
        raise SchemaError(f"annotations reference unknown image ids {sorted(records_by_image)}",
                          path=annotation_path)

    logger.info(f"Loaded {len(scenes)} images from {path}")
    return Dataset(scenes=scenes, roster=roster)


def group_sequences(scenes: Sequence[Scene]) -> Dict[int, List[Scene]]:
    """Frames grouped by sequence id and ordered by frame index."""
    grouped: Dict[int, List[Scene]] = {}
    for scene in scenes:
        if scene.sequence_id is None:
            continue
        grouped.setdefault(scene.sequence_id, []).append(scene)
    return {k: sorted(v, key=lambda s: s.frame_index) for k, v in sorted(grouped.items())}
