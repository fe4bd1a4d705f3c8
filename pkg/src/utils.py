# src/utils.py

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from src.constants import LOG_FILE_PATH, LOG_LEVEL

_logging_ready = False


def setup_logging() -> None:
    """
    Configures logging settings for the application, specifying log file, format, and level.
    Safe to call from every module; only the first call does anything.
    """
    global _logging_ready
    if _logging_ready:
        return
    Path(LOG_FILE_PATH).parent.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        filename=LOG_FILE_PATH,
        filemode="a",
        format="%(asctime)s - %(levelname)s - %(message)s",
        level=getattr(logging, LOG_LEVEL, logging.INFO),
    )
    _logging_ready = True


def canonical_json(payload: Any) -> str:
    """
    Serializes a JSON-compatible payload with sorted keys and no whitespace, so equal
    payloads always produce identical text.

    Args:
        payload: Dicts, lists, strings, numbers, booleans or None.

    Returns:
        str: The canonical JSON text.
    """
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_digest(payload: Any) -> str:
    """Hex SHA-256 of the canonical JSON form of a payload."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def _zigzag(value: int) -> int:
    # SeedSequence only takes non-negative words.
    return 2 * value if value >= 0 else -2 * value - 1


def make_rng(*keys: int) -> np.random.Generator:
    """
    Builds an independent generator keyed by a tuple of integers. The same keys always give
    the same stream; negative keys are allowed.

    Args:
        keys: Seed words, e.g. (scenario_seed, episode, publish_index).

    Returns:
        np.random.Generator: A PCG64 generator.
    """
    words = [_zigzag(int(k)) for k in keys] or [0]
    return np.random.default_rng(np.random.SeedSequence(words))


def wrap_angle(angle: float) -> float:
    """Normalizes an angle to the half-open interval (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def clamp(value: float, lo: float, hi: float) -> float:
    return lo if value < lo else hi if value > hi else value


def as_float_list(values: Iterable[float]) -> list:
    return [float(v) for v in values]
