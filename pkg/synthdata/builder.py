import os
import time
import multiprocessing
from dataclasses import dataclass
from typing import Dict, List, Optional

from utils import logger
from .dataset_io import serialize_dataset
from .scenes import Scene, SceneSpec, generate_scene
from .sequences import generate_sequence


class ParallelSceneGenerator:
    """Class for generating many scenes in parallel with a deterministic result order"""

    def __init__(self, max_processes: Optional[int] = None):
        """
        Initialize the parallel generator

        Args:
            max_processes: Maximum number of parallel processes (defaults to CPU count)
        """
        self.max_processes = max_processes

    def generate(self, seed: int, spec: SceneSpec, image_ids: List[int]) -> List[Scene]:
        """
        Generate one scene per image id

        Args:
            seed: Base seed
            spec: Scene specification
            image_ids: Ids to generate; each selects its own random stream

        Returns:
            Scenes in image_ids order
        """
        if not image_ids:
            logger.warning("No image ids provided for scene generation")
            return []

        max_processes = self.max_processes or multiprocessing.cpu_count()
        max_processes = min(max_processes, len(image_ids))

        logger.info(f"Generating {len(image_ids)} scenes with {max_processes} processes")
        start_time = time.time()

        jobs = [(seed, spec, image_id) for image_id in image_ids]
        if max_processes <= 1:
            scenes = [generate_scene(*job) for job in jobs]
        else:
            with multiprocessing.Pool(processes=max_processes) as pool:
                scenes = pool.starmap(generate_scene, jobs)

        logger.info(f"Scene generation completed in {time.time() - start_time:.2f} seconds")
        return scenes


@dataclass
class DataConfig:
    num_train: int = 500
    num_val: int = 100
    num_sequences: int = 20
    sequence_length: int = 30
    max_speed: float = 2.0


class DatasetBuilder:
    """
    Class for generating the train / val / sequence splits on disk.
    """

    def __init__(self, output_dir: str, spec: SceneSpec, data: DataConfig,
                 max_processes: Optional[int] = None):
        """
        Initialize dataset builder.

        Args:
            output_dir: Directory that receives one sub-directory per split
            spec: Scene specification
            data: Split sizes
            max_processes: Cap on generation processes
        """
        self.output_dir = output_dir
        self.spec = spec
        self.data = data
        self.generator = ParallelSceneGenerator(max_processes=max_processes)

    def build_splits(self, seed: int) -> Dict[str, List[Scene]]:
        """Generate every split in memory; image ids are unique across splits."""
        train_ids = list(range(self.data.num_train))
        val_ids = list(range(self.data.num_train, self.data.num_train + self.data.num_val))
        splits = {
            "train": self.generator.generate(seed, self.spec, train_ids),
            "val": self.generator.generate(seed, self.spec, val_ids),
        }

        first_id = self.data.num_train + self.data.num_val
        frames: List[Scene] = []
        for sequence_id in range(self.data.num_sequences):
            frames.extend(generate_sequence(
                seed, self.spec, self.data.sequence_length, self.data.max_speed,
                sequence_id=sequence_id, first_image_id=first_id + len(frames),
            ))
        splits["sequences"] = frames
        return splits

    def build(self, seed: int) -> Dict[str, dict]:
        """
        Generate and write every split.

        Args:
            seed: Base seed

        Returns:
            Per-split summary with path, image count and annotation counts
        """
        logger.info(f"Building dataset in {self.output_dir} with seed {seed}")
        summary = {}
        for name, scenes in self.build_splits(seed).items():
            split_dir = os.path.join(self.output_dir, name)
            serialize_dataset(scenes, split_dir, self.spec.roster)
            records = [r for s in scenes for r in s.records]
            summary[name] = {
                "path": split_dir,
                "images": len(scenes),
                "annotations": len(records),
                "known": sum(1 for r in records if r.is_known),
                "unknown": sum(1 for r in records if not r.is_known),
            }
            logger.info(f"Split '{name}': {summary[name]['images']} images, "
                        f"{summary[name]['annotations']} annotations")
        return summary
