import os
import json
import hashlib
from typing import Any, Optional

import torch

from .errors import SchemaError


def load_json_file(file_path: str) -> Any:
    """
    Load and parse a JSON file

    Args:
        file_path: Path to the JSON file

    Returns:
        Parsed JSON content
    """
    try:
        with open(file_path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON ({e})", path=file_path)


def save_json_file(data: Any, file_path: str) -> None:
    """
    Save data to a JSON file with sorted keys, so identical data gives identical bytes

    Args:
        data: Data to save
        file_path: Path where to save the JSON file
    """
    directory = os.path.dirname(file_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(file_path, 'w', encoding='utf-8') as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def config_hash(config: Any) -> str:
    """SHA-256 of the canonical JSON form of a config mapping."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_sha256(file_path: str) -> str:
    """Hex digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def resolve_threads(default: Optional[int] = None) -> Optional[int]:
    """
    Read the worker cap from the OWD_THREADS environment variable.

    Args:
        default: Value used when the variable is unset

    Returns:
        Positive thread count, or default
    """
    raw = os.environ.get("OWD_THREADS")
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise SchemaError(f"OWD_THREADS must be an integer, got '{raw}'")
    if value < 1:
        raise SchemaError(f"OWD_THREADS must be positive, got {value}")
    return value


def apply_thread_cap(threads: Optional[int]) -> None:
    """Cap torch intra-op parallelism when a thread count is given."""
    if threads:
        torch.set_num_threads(threads)


def merge_config(defaults: dict, overrides: dict, path: str = "") -> dict:
    """
    Recursively merge a nested override mapping into defaults.

    Args:
        defaults: Mapping holding every allowed key
        overrides: Partial mapping read from a config file
        path: Dotted key prefix used in error messages

    Returns:
        New merged mapping
    """
    merged = dict(defaults)
    for key, value in overrides.items():
        dotted = f"{path}.{key}" if path else key
        if key not in defaults:
            raise SchemaError(f"unknown config key '{dotted}'")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            merged[key] = merge_config(defaults[key], value, dotted)
        else:
            merged[key] = value
    return merged
