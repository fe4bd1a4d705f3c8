"""
Semantic terrain rApp: degrades the overhead raster, extracts coarse terrain features, scores
their confidence, gates unreliable cells and packs the result into A1 messages.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Protocol, Tuple

import numpy as np

from src.constants import (
    CONFIDENCE_SIGMA_REF_M,
    GATE_THRESHOLD,
    H_BUILT_M,
    MESSAGE_SCHEMA_VERSION,
    SEMANTIC_COARSE_FACTOR,
)
from src.errors import MessageParseError, MessageVersionError, ScenarioValidationError
from src.utils import canonical_json, make_rng, setup_logging, sha256_digest
from src.worldmodel import WorldMap

setup_logging()
logger = logging.getLogger(__name__)

_NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class SemanticsParams:
    noise_sigma: float = 0.0
    dropout_frac: float = 0.0
    k: int = SEMANTIC_COARSE_FACTOR
    h_built: float = H_BUILT_M
    sigma_ref: float = CONFIDENCE_SIGMA_REF_M
    gate_threshold: float = GATE_THRESHOLD
    seed: int = 0
    force_closed: bool = False

    def __post_init__(self) -> None:
        if self.noise_sigma < 0:
            raise ScenarioValidationError("noise_sigma >= 0")
        if not 0.0 <= self.dropout_frac <= 1.0:
            raise ScenarioValidationError("0 <= dropout_frac <= 1")
        if self.k < 1:
            raise ScenarioValidationError("k >= 1")
        if not self.sigma_ref > 0:
            raise ScenarioValidationError("sigma_ref > 0")
        if not 0.0 <= self.gate_threshold <= 1.0:
            raise ScenarioValidationError("gate threshold in [0, 1]")


@dataclass(frozen=True, eq=False)
class RasterObservation:
    """Overhead height raster as the rApp sees it. Missing cells hold NaN."""

    height_obs: np.ndarray
    noise_sigma: float
    dropout_frac: float

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.height_obs)


@dataclass(frozen=True, eq=False)
class SemanticFeatureMap:
    """
    Per coarse cell features, arrays shaped (cnx, cny). confidence/gate fields stay None until
    attach_confidence() and gate() have run.
    """

    k: int
    density: np.ndarray
    mean_height: np.ndarray
    max_height: np.ndarray
    occlusion: np.ndarray
    all_missing: np.ndarray
    padding: Tuple[int, int] = (0, 0)
    confidence: Optional[np.ndarray] = None
    gate_open: Optional[np.ndarray] = None
    gate_threshold: Optional[float] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.density.shape  # type: ignore[return-value]

    def stacked(self) -> np.ndarray:
        """(cnx, cny, 4) array of density, mean_height, max_height, occlusion."""
        return np.stack([self.density, self.mean_height, self.max_height, self.occlusion], axis=-1)


class FeatureExtractor(Protocol):
    def extract(self, obs: RasterObservation, k: int, h_built: float) -> SemanticFeatureMap:
        ...


def degrade(world: WorldMap, noise_sigma: float, dropout_frac: float, seed: int) -> RasterObservation:
    """
    Simulates a low-quality overhead capture: each cell goes missing with probability
    dropout_frac, otherwise gets Gaussian height noise (clamped at 0).
    """
    if noise_sigma < 0 or not 0.0 <= dropout_frac <= 1.0:
        raise ScenarioValidationError("noise_sigma >= 0 and 0 <= dropout_frac <= 1")
    rng = make_rng(seed, 0x6467)
    shape = world.height.shape
    dropped = rng.random(shape) < dropout_frac
    noise = rng.standard_normal(shape) * noise_sigma
    observed = np.maximum(world.height + noise, 0.0)
    observed[dropped] = np.nan
    return RasterObservation(height_obs=observed, noise_sigma=float(noise_sigma), dropout_frac=float(dropout_frac))


def _blocks(raster: np.ndarray, k: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    nx, ny = raster.shape
    px, py = (-nx) % k, (-ny) % k
    if px or py:
        raster = np.pad(raster, ((0, px), (0, py)), constant_values=0.0)
    cnx, cny = raster.shape[0] // k, raster.shape[1] // k
    blocks = raster.reshape(cnx, k, cny, k).transpose(0, 2, 1, 3).reshape(cnx, cny, k * k)
    return blocks, (px, py)


def _occlusion_index(mean_h: np.ndarray, max_h: np.ndarray) -> np.ndarray:
    cnx, cny = mean_h.shape
    padded = np.pad(max_h, 1, constant_values=np.nan)
    exceed = np.zeros_like(mean_h)
    present = np.zeros_like(mean_h)
    for di, dj in _NEIGHBOR_OFFSETS:
        neighbor = padded[1 + di : 1 + di + cnx, 1 + dj : 1 + dj + cny]
        valid = ~np.isnan(neighbor)
        present += valid
        exceed += valid & (np.nan_to_num(neighbor, nan=-np.inf) > mean_h)
    return np.divide(exceed, present, out=np.zeros_like(mean_h), where=present > 0)


def extract_features(obs: RasterObservation, k: int, h_built: float) -> SemanticFeatureMap:
    """
    Procedural stand-in for the segmentation model. Over each k x k block (missing cells
    excluded): density is the built fraction, mean/max heights are taken over observed cells,
    and the occlusion index is the fraction of neighboring blocks whose max height exceeds this
    block's mean height. Grids not divisible by k are zero-padded.

    Args:
        obs: Degraded raster.
        k: Coarse factor.
        h_built: Height threshold for a cell to count as built.

    Returns:
        SemanticFeatureMap without confidence.
    """
    if k < 1:
        raise ScenarioValidationError("k >= 1")
    blocks, padding = _blocks(obs.height_obs, k)
    if padding != (0, 0):
        logger.warning(f"Raster not divisible by k={k}; zero-padded by {padding}.")
    valid = ~np.isnan(blocks)
    count = valid.sum(axis=-1).astype(np.float64)
    all_missing = count == 0
    safe = np.where(valid, blocks, 0.0)
    built = (valid & (safe >= h_built)).sum(axis=-1)
    density = np.divide(built, count, out=np.zeros_like(count), where=~all_missing)
    mean_h = np.divide(safe.sum(axis=-1), count, out=np.zeros_like(count), where=~all_missing)
    max_h = np.where(all_missing, 0.0, np.where(valid, blocks, -np.inf).max(axis=-1))
    occlusion = _occlusion_index(mean_h, max_h)
    return SemanticFeatureMap(
        k=k,
        density=density,
        mean_height=mean_h,
        max_height=max_h,
        occlusion=occlusion,
        all_missing=all_missing,
        padding=padding,
    )


class ProceduralExtractor:
    """Default FeatureExtractor; a learned model can replace it behind the same interface."""

    def extract(self, obs: RasterObservation, k: int, h_built: float) -> SemanticFeatureMap:
        return extract_features(obs, k, h_built)


def confidence(obs: RasterObservation, k: int, sigma_ref: float = CONFIDENCE_SIGMA_REF_M) -> np.ndarray:
    """
    Per coarse cell reliability: (1 - missing fraction) * exp(-noise_sigma / sigma_ref),
    clamped to [0, 1]. Padding cells count as observed.
    """
    blocks, _ = _blocks(obs.height_obs, k)
    missing_frac = np.isnan(blocks).mean(axis=-1)
    conf = (1.0 - missing_frac) * np.exp(-obs.noise_sigma / sigma_ref)
    return np.clip(conf, 0.0, 1.0)


def attach_confidence(features: SemanticFeatureMap, conf: np.ndarray) -> SemanticFeatureMap:
    if conf.shape != features.shape:
        raise ScenarioValidationError("confidence grid matches feature grid")
    return dataclasses.replace(features, confidence=np.asarray(conf, dtype=np.float64))


def gate(features: SemanticFeatureMap, threshold: float, force_closed: bool = False) -> SemanticFeatureMap:
    """
    Zeroes every cell whose confidence is below threshold and marks it closed; open cells are
    untouched. force_closed closes every cell. Idempotent.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ScenarioValidationError("gate threshold in [0, 1]")
    if features.confidence is None:
        raise ScenarioValidationError("confidence attached before gating")
    is_open = features.confidence >= threshold
    if force_closed:
        is_open = np.zeros_like(is_open)
    zero = lambda a: np.where(is_open, a, 0.0)  # noqa: E731
    return dataclasses.replace(
        features,
        density=zero(features.density),
        mean_height=zero(features.mean_height),
        max_height=zero(features.max_height),
        occlusion=zero(features.occlusion),
        gate_open=is_open,
        gate_threshold=float(threshold),
    )


@dataclass(frozen=True, eq=False)
class A1Message:
    """Gated semantic map as disseminated over A1. Arrays are (cnx, cny)."""

    version: int
    timestamp_ms: int
    gate_threshold: float
    k: int
    density: np.ndarray
    mean_height: np.ndarray
    max_height: np.ndarray
    occlusion: np.ndarray
    confidence: np.ndarray
    gate_open: np.ndarray
    digest: str

    @property
    def shape(self) -> Tuple[int, int]:
        return self.density.shape  # type: ignore[return-value]

    def feature_grid(self) -> np.ndarray:
        """(cnx, cny, 4) array of density, mean_height, max_height, occlusion."""
        return np.stack([self.density, self.mean_height, self.max_height, self.occlusion], axis=-1)

    def to_payload(self) -> Dict[str, Any]:
        payload = _content_payload(
            self.gate_threshold, self.k, self.density, self.mean_height, self.max_height,
            self.occlusion, self.confidence, self.gate_open,
        )
        payload.update({"version": self.version, "timestamp_ms": self.timestamp_ms, "digest": self.digest})
        return payload

    def to_json(self) -> str:
        return canonical_json(self.to_payload())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, A1Message):
            return NotImplemented
        return self.to_payload() == other.to_payload()

    @classmethod
    def from_payload(cls, payload: Any) -> "A1Message":
        if not isinstance(payload, dict):
            raise MessageParseError("A1 payload is not an object")
        version = payload.get("version")
        if version != MESSAGE_SCHEMA_VERSION:
            raise MessageVersionError(f"A1 payload version {version!r}, expected {MESSAGE_SCHEMA_VERSION}")
        try:
            cnx = int(payload["grid"]["cnx"])
            cny = int(payload["grid"]["cny"])
            cells = payload["cells"]
            if len(cells) != cnx * cny:
                raise MessageParseError(f"A1 payload has {len(cells)} cells, expected {cnx * cny}")

            def column(key: str, dtype: Any = np.float64) -> np.ndarray:
                # cells are row-major with y outer; arrays are indexed [x, y]
                return np.array([c[key] for c in cells], dtype=dtype).reshape(cny, cnx).T.copy()

            message = cls(
                version=int(version),
                timestamp_ms=int(payload["timestamp_ms"]),
                gate_threshold=float(payload["gate_threshold"]),
                k=int(payload["k"]),
                density=column("density"),
                mean_height=column("mean_h"),
                max_height=column("max_h"),
                occlusion=column("occl"),
                confidence=column("conf"),
                gate_open=column("gate_open", bool),
                digest=str(payload["digest"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise MessageParseError(f"malformed A1 payload: {e}") from e
        expected = _content_digest(message)
        if expected != message.digest:
            raise MessageParseError("A1 payload digest mismatch")
        return message

    @classmethod
    def from_json(cls, text: str) -> "A1Message":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise MessageParseError(f"malformed A1 payload: {e}") from e
        return cls.from_payload(payload)


def _content_payload(
    gate_threshold: float,
    k: int,
    density: np.ndarray,
    mean_h: np.ndarray,
    max_h: np.ndarray,
    occl: np.ndarray,
    conf: np.ndarray,
    gate_open: np.ndarray,
) -> Dict[str, Any]:
    cnx, cny = density.shape
    cells = []
    for j in range(cny):
        for i in range(cnx):
            cells.append(
                {
                    "density": float(density[i, j]),
                    "mean_h": float(mean_h[i, j]),
                    "max_h": float(max_h[i, j]),
                    "occl": float(occl[i, j]),
                    "conf": float(conf[i, j]),
                    "gate_open": bool(gate_open[i, j]),
                }
            )
    return {"gate_threshold": float(gate_threshold), "k": int(k), "grid": {"cnx": cnx, "cny": cny}, "cells": cells}


def _content_digest(message: A1Message) -> str:
    return sha256_digest(
        _content_payload(
            message.gate_threshold, message.k, message.density, message.mean_height,
            message.max_height, message.occlusion, message.confidence, message.gate_open,
        )
    )


def build_a1(features: SemanticFeatureMap, timestamp_ms: int) -> A1Message:
    """
    Packs a gated feature map into a versioned A1 message. The digest covers the map content
    (not the timestamp), so identical maps share a digest.
    """
    if features.confidence is None or features.gate_open is None or features.gate_threshold is None:
        raise ScenarioValidationError("features gated before A1 dissemination")
    digest = sha256_digest(
        _content_payload(
            features.gate_threshold, features.k, features.density, features.mean_height,
            features.max_height, features.occlusion, features.confidence, features.gate_open,
        )
    )
    return A1Message(
        version=MESSAGE_SCHEMA_VERSION,
        timestamp_ms=int(timestamp_ms),
        gate_threshold=float(features.gate_threshold),
        k=features.k,
        density=features.density.copy(),
        mean_height=features.mean_height.copy(),
        max_height=features.max_height.copy(),
        occlusion=features.occlusion.copy(),
        confidence=features.confidence.copy(),
        gate_open=features.gate_open.copy(),
        digest=digest,
    )


class SemanticRApp:
    """
    Non-RT semantic terrain interpreter. Each publish runs
    degrade -> extract -> confidence -> gate -> build_a1 with its own derived seed.
    """

    def __init__(
        self,
        world: WorldMap,
        params: SemanticsParams,
        scenario_seed: int,
        extractor: Optional[FeatureExtractor] = None,
    ) -> None:
        self.world = world
        self.params = params
        self.scenario_seed = scenario_seed
        self.extractor: FeatureExtractor = extractor or ProceduralExtractor()

    def publish_seed(self, episode_seed: int, index: int) -> int:
        rng = make_rng(self.scenario_seed, self.params.seed, episode_seed, index)
        return int(rng.integers(0, 2**62))

    def publish(self, timestamp_ms: int, episode_seed: int = 0, index: int = 0) -> A1Message:
        p = self.params
        obs = degrade(self.world, p.noise_sigma, p.dropout_frac, self.publish_seed(episode_seed, index))
        features = self.extractor.extract(obs, p.k, p.h_built)
        features = attach_confidence(features, confidence(obs, p.k, p.sigma_ref))
        gated = gate(features, p.gate_threshold, force_closed=p.force_closed)
        message = build_a1(gated, timestamp_ms)
        open_cells = int(gated.gate_open.sum()) if gated.gate_open is not None else 0
        logger.info(
            f"A1 map built at t={timestamp_ms} ms: {open_cells}/{gated.gate_open.size if gated.gate_open is not None else 0} gates open, digest {message.digest[:12]}."
        )
        return message
