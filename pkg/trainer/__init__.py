from .config import TrainConfig, load_train_config
from .trainer import (
    TrainSample,
    RunManifest,
    Trainer,
    prepare_samples,
    train_step,
    learning_rate,
    build_optimizer,
    train,
    MANIFEST_FILE,
    METRIC_REPORT_FILE,
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
)
