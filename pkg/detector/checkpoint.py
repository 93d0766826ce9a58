"""
Checkpoint container.

A checkpoint is a ``torch.save`` dictionary:

    format_version  int, CHECKPOINT_FORMAT_VERSION
    detector_config dict, DetectorConfig fields
    state_dict      named parameter tensors of DenseDetector
    epoch           int, number of completed epochs
    optimizer       optimizer state dict or None
    extra           dict of plain values (loss curves, best metric, ...)
"""
import os
from typing import Any, Dict, Optional, Tuple

import torch

from utils import logger
from utils.errors import SchemaError
from .constants import CHECKPOINT_FORMAT_VERSION
from .model import DenseDetector, DetectorConfig

REQUIRED_KEYS = ("format_version", "detector_config", "state_dict", "epoch")


def save_checkpoint(path: str, model: DenseDetector, epoch: int = 0,
                    optimizer: Optional[torch.optim.Optimizer] = None,
                    extra: Optional[Dict[str, Any]] = None) -> str:
    """
    Write a checkpoint file.

    Args:
        path: Destination file
        model: Detector to save
        epoch: Completed epochs
        optimizer: Optional optimizer whose state is stored for resuming
        extra: Plain-value metadata

    Returns:
        The path written
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "detector_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "epoch": epoch,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "extra": extra or {},
    }
    torch.save(payload, path)
    logger.info(f"Saved checkpoint (epoch {epoch}) to {path}")
    return path


def load_checkpoint(path: str) -> Tuple[DenseDetector, Dict[str, Any]]:
    """
    Read a checkpoint and rebuild its detector.

    Args:
        path: Checkpoint file

    Returns:
        (model in eval mode, raw payload)
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise SchemaError(f"unreadable checkpoint ({e})", path=path)

    missing = [key for key in REQUIRED_KEYS if key not in payload]
    if missing:
        raise SchemaError(f"checkpoint is missing keys {missing}", path=path)
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise SchemaError(f"unsupported checkpoint version {payload['format_version']}", path=path)

    model = DenseDetector(DetectorConfig(**payload["detector_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
