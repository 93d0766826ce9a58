from dataclasses import asdict, dataclass, field
from typing import Optional

from detector import DetectorConfig
from embed_transfer import TransferConfig
from synthdata import DataConfig, SceneSpec, SegmenterConfig, TeacherConfig
from unknown_refine import RefineConfig
from utils.errors import SchemaError
from utils.helper import config_hash, load_json_file, merge_config

OPTIMIZERS = ("sgd", "adam")
SCHEDULES = ("constant", "step", "cosine")

# Keys that only say where a run lives; they do not change its results
LOCATION_KEYS = ("out_dir", "dataset_dir", "resume_from", "progress", "threads")


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 8
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.0
    optimizer: str = "sgd"
    schedule: str = "cosine"
    step_size: int = 4
    gamma: float = 0.5
    warmup_epochs: int = 2
    lambda_det: float = 1.0
    lambda_refine: float = 1.0
    lambda_transfer: float = 1.0
    enable_refine: bool = True
    enable_transfer: bool = True
    eval_batch_size: int = 32
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    data: DataConfig = field(default_factory=DataConfig)
    out_dir: str = "runs/default"
    dataset_dir: str = ""
    resume_from: str = ""
    progress: bool = True
    threads: Optional[int] = None

    def __post_init__(self):
        for name in ("lambda_det", "lambda_refine", "lambda_transfer"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got '{self.optimizer}'")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got '{self.schedule}'")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        known = len(self.scene.known_ids)
        if self.detector.num_classes != known:
            raise ValueError(
                f"detector.num_classes ({self.detector.num_classes}) must equal the "
                f"number of known categories ({known})"
            )
        height, width = self.scene.image_size
        if height % self.detector.stride or width % self.detector.stride:
            raise ValueError(f"Image size {self.scene.image_size} is not divisible by stride {self.detector.stride}")

    @property
    def all_lambdas_zero(self) -> bool:
        return self.lambda_det == 0 and self.lambda_refine == 0 and self.lambda_transfer == 0

    def to_dict(self) -> dict:
        return asdict(self)

    def result_dict(self) -> dict:
        """Config without run-location keys; this is what is hashed and echoed in reports."""
        return {k: v for k, v in self.to_dict().items() if k not in LOCATION_KEYS}

    def hash(self) -> str:
        return config_hash(self.result_dict())

    @classmethod
    def from_dict(cls, overrides: dict) -> "TrainConfig":
        """
        Build a config from a (possibly partial) nested mapping.

        Args:
            overrides: Mapping read from a config file

        Returns:
            TrainConfig with defaults for every missing key

        Raises:
            SchemaError: on unknown keys or invalid values
        """
        merged = merge_config(cls().to_dict(), overrides)
        try:
            return cls(
                **{k: v for k, v in merged.items() if k not in _NESTED},
                **{k: factory(**merged[k]) for k, factory in _NESTED.items()},
            )
        except (TypeError, ValueError) as e:
            raise SchemaError(f"invalid training config ({e})")


_NESTED = {
    "detector": DetectorConfig,
    "refine": RefineConfig,
    "transfer": TransferConfig,
    "segmenter": SegmenterConfig,
    "teacher": TeacherConfig,
    "scene": SceneSpec,
    "data": DataConfig,
}


def load_train_config(path: Optional[str] = None, **overrides) -> TrainConfig:
    """
    Read a JSON training config and apply keyword overrides on top.

    Args:
        path: JSON file (defaults only when None or empty)
        overrides: Top-level keys such as seed or out_dir

    Returns:
        TrainConfig
    """
    raw = load_json_file(path) if path else {}
    if not isinstance(raw, dict):
        raise SchemaError("config file must hold a JSON object", path=path)
    raw = dict(raw["train"]) if "train" in raw else {k: v for k, v in raw.items() if k != "tracker"}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.from_dict(raw)
    except SchemaError as e:
        if e.path is None and path:
            raise SchemaError(str(e), path=path)
        raise
