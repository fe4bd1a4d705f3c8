"""
Urban world (building-height raster), mission geometry, and scenario loading/validation.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.constants import (
    D_SAFE,
    DEFAULT_PROFILE,
    DEFAULT_SEED,
    GENERATOR_MAX_RETRIES,
    PROFILES_PATH,
    SCENARIO_SCHEMA_VERSION,
    SPAWN_MAX_RETRIES,
)
from src.errors import (
    OutOfBoundsError,
    PlacementError,
    ScenarioParseError,
    ScenarioValidationError,
    SchemaVersionError,
)
from src.utils import make_rng, setup_logging, sha256_digest

if TYPE_CHECKING:
    from src.agentenv import EnvParams
    from src.maddpg import MaddpgConfig
    from src.radio import RadioParams, RadioSite
    from src.ricbus import ClockConfig
    from src.semantics import SemanticsParams

setup_logging()
logger = logging.getLogger(__name__)

Point3 = Tuple[float, float, float]


def _require(condition: bool, invariant: str) -> None:
    if not condition:
        raise ScenarioValidationError(invariant)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in meters. The z range is only meaningful for the start zone."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    z_min: float = 0.0
    z_max: float = 0.0

    def __post_init__(self) -> None:
        _require(self.x_min < self.x_max, "x_min < x_max")
        _require(self.y_min < self.y_max, "y_min < y_max")
        _require(self.z_min <= self.z_max, "box z_min <= z_max")

    def contains_xy(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def overlaps_xy(self, other: "Box") -> bool:
        return (
            self.x_min < other.x_max
            and other.x_min < self.x_max
            and self.y_min < other.y_max
            and other.y_min < self.y_max
        )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def depth(self) -> float:
        return self.y_max - self.y_min


@dataclass(frozen=True)
class Building:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    height: float

    def __post_init__(self) -> None:
        _require(self.x_min < self.x_max, "building x_min < x_max")
        _require(self.y_min < self.y_max, "building y_min < y_max")
        _require(self.height > 0 and math.isfinite(self.height), "building height > 0")


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    cell_size: float
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        _require(self.nx >= 1 and self.ny >= 1, "nx, ny >= 1")
        _require(self.cell_size > 0, "cell_size > 0")


@dataclass(frozen=True, eq=False)
class WorldMap:
    """
    Combined terrain + building height raster. height[i, j] is the cell whose x index is i
    and y index is j; cell (0, 0) has its lower corner at origin.
    """

    nx: int
    ny: int
    cell_size: float
    height: np.ndarray
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        _require(self.nx >= 1 and self.ny >= 1, "nx, ny >= 1")
        _require(self.cell_size > 0, "cell_size > 0")
        raster = np.array(self.height, dtype=np.float64)
        _require(raster.shape == (self.nx, self.ny), "height raster is nx x ny")
        _require(bool(np.all(np.isfinite(raster))), "height values finite")
        _require(bool(np.all(raster >= 0.0)), "height values >= 0")
        raster.setflags(write=False)
        object.__setattr__(self, "height", raster)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def x_max(self) -> float:
        return self.origin[0] + self.nx * self.cell_size

    @property
    def y_max(self) -> float:
        return self.origin[1] + self.ny * self.cell_size

    @property
    def max_height(self) -> float:
        return float(self.height.max())

    def contains(self, x: float, y: float) -> bool:
        return self.origin[0] <= x < self.x_max and self.origin[1] <= y < self.y_max

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        """Index of the cell whose half-open interval [lo, hi) holds (x, y)."""
        if not self.contains(x, y):
            raise OutOfBoundsError(f"point ({x:.3f}, {y:.3f}) outside grid extent")
        i = int(math.floor((x - self.origin[0]) / self.cell_size))
        j = int(math.floor((y - self.origin[1]) / self.cell_size))
        return min(i, self.nx - 1), min(j, self.ny - 1)

    def cell_center(self, i: int, j: int) -> Tuple[float, float]:
        return (
            self.origin[0] + (i + 0.5) * self.cell_size,
            self.origin[1] + (j + 0.5) * self.cell_size,
        )

    def clip_xy(self, x: float, y: float) -> Tuple[float, float]:
        """Clamps a point into the extent (upper edge kept inside the last cell)."""
        inset = self.cell_size * 1e-9
        return (
            min(max(x, self.origin[0]), self.x_max - inset),
            min(max(y, self.origin[1]), self.y_max - inset),
        )

    def digest(self) -> str:
        return sha256_digest(
            {
                "nx": self.nx,
                "ny": self.ny,
                "cell_size": self.cell_size,
                "origin": list(self.origin),
                "height": self.height.tolist(),
            }
        )


@dataclass(frozen=True)
class MissionSpec:
    start_zone: Box
    targets: Tuple[Point3, ...]
    mission_area: Box
    z_min: float
    z_max: float
    reach_tolerance: float
    max_steps: int
    d_safe: float = D_SAFE

    def __post_init__(self) -> None:
        _require(self.z_min < self.z_max, "z_min < z_max")
        _require(self.reach_tolerance > 0, "reach_tolerance > 0")
        _require(self.max_steps >= 1, "max_steps >= 1")
        _require(self.d_safe >= 0, "d_safe >= 0")
        _require(len(self.targets) >= 1, "at least one target")
        area = self.mission_area
        zone = self.start_zone
        _require(
            area.contains_xy(zone.x_min, zone.y_min) and area.contains_xy(zone.x_max, zone.y_max),
            "start_zone inside mission_area",
        )
        for target in self.targets:
            _require(len(target) == 3, "targets are 3D points")
            _require(area.contains_xy(target[0], target[1]), "targets inside mission_area")
            _require(self.z_min <= target[2] <= self.z_max, "target altitude within [z_min, z_max]")

    @property
    def n_agents(self) -> int:
        return len(self.targets)


@dataclass(frozen=True)
class GeneratorSpec:
    """Seeded random rectangular buildings."""

    count: int
    min_size: float = 20.0
    max_size: float = 60.0
    min_height: float = 20.0
    max_height: float = 80.0
    seed: int = 0
    target_clearance: float = 30.0
    site_clearance: float = 10.0

    def __post_init__(self) -> None:
        _require(self.count >= 0, "generator count >= 0")
        _require(0 < self.min_size <= self.max_size, "0 < min_size <= max_size")
        _require(0 < self.min_height <= self.max_height, "0 < min_height <= max_height")


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    world: WorldMap
    grid: GridSpec
    buildings: Tuple[Building, ...]
    mission: MissionSpec
    radio: "RadioParams"
    sites: Tuple["RadioSite", ...]
    semantics: "SemanticsParams"
    env: "EnvParams"
    rl: "MaddpgConfig"
    clocks: "ClockConfig"
    profile: str = DEFAULT_PROFILE
    seed: int = DEFAULT_SEED
    terrain: Optional[np.ndarray] = None
    schema_version: int = SCENARIO_SCHEMA_VERSION
    provenance: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def n_agents(self) -> int:
        return self.mission.n_agents


# -----------------------------------------------------------------------------
# Raster construction and queries
# -----------------------------------------------------------------------------


def rasterize(
    buildings: Sequence[Building],
    nx: int,
    ny: int,
    cell_size: float,
    origin: Tuple[float, float] = (0.0, 0.0),
    terrain: Optional[np.ndarray] = None,
) -> WorldMap:
    """
    Burns building footprints into a height raster. A cell takes the maximum height of the
    buildings whose footprint [x_min, x_max) x [y_min, y_max) contains its center; other cells
    stay at 0. An optional per-cell terrain offset is added on top.

    Args:
        buildings: Building footprints; order does not matter.
        nx, ny: Cell counts.
        cell_size: Meters per cell.
        origin: World coordinates of the lower corner of cell (0, 0).
        terrain: Optional nx x ny array of non-negative ground elevations.

    Returns:
        WorldMap: The immutable raster.
    """
    GridSpec(nx, ny, cell_size, origin)
    cx = origin[0] + (np.arange(nx) + 0.5) * cell_size
    cy = origin[1] + (np.arange(ny) + 0.5) * cell_size
    height = np.zeros((nx, ny), dtype=np.float64)
    for b in buildings:
        in_x = (cx >= b.x_min) & (cx < b.x_max)
        in_y = (cy >= b.y_min) & (cy < b.y_max)
        if not in_x.any() or not in_y.any():
            continue
        mask = np.outer(in_x, in_y)
        height[mask] = np.maximum(height[mask], b.height)
    if terrain is not None:
        offset = np.asarray(terrain, dtype=np.float64)
        _require(offset.shape == (nx, ny), "terrain is nx x ny")
        _require(bool(np.all(np.isfinite(offset)) and np.all(offset >= 0)), "terrain values >= 0")
        height = height + offset
    logger.info(f"Rasterized {len(buildings)} buildings onto a {nx}x{ny} grid ({cell_size} m cells).")
    return WorldMap(nx=nx, ny=ny, cell_size=float(cell_size), height=height, origin=origin)


def height_at(world: WorldMap, x: float, y: float) -> float:
    """
    Height of the cell containing (x, y), nearest-cell lookup with no interpolation.
    Raises OutOfBoundsError outside the extent.
    """
    i, j = world.cell_of(x, y)
    return float(world.height[i, j])


def generate_buildings(
    spec: GeneratorSpec, grid: GridSpec, keep_out: Sequence[Box] = ()
) -> List[Building]:
    """Draws spec.count footprints inside the grid, redrawing any that hit a keep-out box."""
    rng = make_rng(spec.seed, 0x6275)
    x0, y0 = grid.origin
    x_span = grid.nx * grid.cell_size
    y_span = grid.ny * grid.cell_size
    buildings: List[Building] = []
    skipped = 0
    for _ in range(spec.count):
        for _attempt in range(GENERATOR_MAX_RETRIES):
            w = float(rng.uniform(spec.min_size, spec.max_size))
            d = float(rng.uniform(spec.min_size, spec.max_size))
            h = float(rng.uniform(spec.min_height, spec.max_height))
            bx = float(rng.uniform(x0, x0 + max(x_span - w, 0.0)))
            by = float(rng.uniform(y0, y0 + max(y_span - d, 0.0)))
            footprint = Box(bx, by, bx + w, by + d)
            if any(footprint.overlaps_xy(box) for box in keep_out):
                continue
            buildings.append(Building(bx, by, bx + w, by + d, h))
            break
        else:
            skipped += 1
    if skipped:
        logger.warning(f"Building generator skipped {skipped} footprints after {GENERATOR_MAX_RETRIES} retries each.")
    logger.info(f"Generated {len(buildings)} buildings (seed={spec.seed}).")
    return buildings


def spawn_agents(
    mission: MissionSpec, n: int, seed: int, d_safe: Optional[float] = None
) -> List[np.ndarray]:
    """
    Places n agents uniformly inside the start zone with pairwise horizontal separation of at
    least d_safe, by rejection sampling. Altitudes are clamped to [z_min, z_max].

    Args:
        mission: Mission geometry.
        n: Number of agents.
        seed: Placement seed; the same seed always yields the same positions.
        d_safe: Separation override; defaults to mission.d_safe.

    Returns:
        List of float64 arrays (x, y, z).
    """
    if n < 1:
        raise ScenarioValidationError("n >= 1")
    sep = mission.d_safe if d_safe is None else d_safe
    zone = mission.start_zone
    rng = make_rng(seed, 0x7370)
    positions: List[np.ndarray] = []
    for k in range(n):
        for _attempt in range(SPAWN_MAX_RETRIES):
            x = float(rng.uniform(zone.x_min, zone.x_max))
            y = float(rng.uniform(zone.y_min, zone.y_max))
            z = float(rng.uniform(zone.z_min, zone.z_max)) if zone.z_max > zone.z_min else zone.z_min
            z = min(max(z, mission.z_min), mission.z_max)
            if all(math.hypot(x - p[0], y - p[1]) >= sep for p in positions):
                positions.append(np.array([x, y, z], dtype=np.float64))
                break
        else:
            raise PlacementError(
                f"could not place agent {k} of {n} at d_safe={sep} m within {SPAWN_MAX_RETRIES} retries"
            )
    return positions


# -----------------------------------------------------------------------------
# Scenario files
# -----------------------------------------------------------------------------


def load_profiles() -> Dict[str, Any]:
    """Load the QoS profile presets from src/profiles.json."""
    with open(PROFILES_PATH, "r") as f:
        return json.load(f)


def _coerce(value: Any, default: Any, path: str) -> Any:
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool):
                raise TypeError
            if isinstance(value, int):
                return value
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise TypeError
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            out = float(value)
            if not math.isfinite(out):
                raise ValueError
            return out
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
        if isinstance(default, tuple):
            return tuple(_coerce(v, default[0] if default else 0.0, path) for v in value)
    except (TypeError, ValueError):
        raise ScenarioValidationError(f"{path}: expected a value like {default!r}") from None
    return value


def _sample_for(value: Any) -> Any:
    # Type template for required fields, which have no default to copy the type from.
    if isinstance(value, list):
        return (0.0,)
    if isinstance(value, int) and not isinstance(value, bool):
        return 0
    return 0.0


def _build_record(
    cls: Any,
    block: Optional[Dict[str, Any]],
    path: str,
    provenance: List[str],
    presets: Optional[Dict[str, Any]] = None,
    preset_tag: str = "",
) -> Any:
    """
    Builds a frozen parameter dataclass from a JSON block, rejecting unknown keys and filling
    absent fields from presets (if any) or the dataclass defaults. Each filled field is recorded
    in provenance.
    """
    if block is None:
        provenance.append(f"{path}: defaulted")
        block = {}
    if not isinstance(block, dict):
        raise ScenarioParseError(f"{path}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(block) - set(names))
    if unknown:
        raise ScenarioValidationError(f"unknown field '{path}.{unknown[0]}'")
    kwargs: Dict[str, Any] = {}
    for name, f in names.items():
        if f.default is not dataclasses.MISSING:
            default = f.default
        elif f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            default = f.default_factory()  # type: ignore[misc]
        else:
            default = dataclasses.MISSING
        sub_path = f"{path}.{name}"
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build_record(type(default), block.get(name), sub_path, provenance)
            continue
        if name in block:
            sample = default if default is not dataclasses.MISSING else _sample_for(block[name])
            kwargs[name] = _coerce(block[name], sample, sub_path)
        elif presets and name in presets:
            kwargs[name] = _coerce(presets[name], default, sub_path)
            provenance.append(f"{sub_path}: profile:{preset_tag}")
        elif default is dataclasses.MISSING:
            raise ScenarioValidationError(f"missing required field '{sub_path}'")
        else:
            kwargs[name] = default
            if block:
                provenance.append(f"{sub_path}: defaulted")
    return cls(**kwargs)


def _parse_box(block: Any, path: str) -> Box:
    if not isinstance(block, dict):
        raise ScenarioParseError(f"{path}: expected an object")
    return _build_record(Box, block, path, [])


def _point3(value: Any, path: str) -> Point3:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ScenarioValidationError(f"{path}: expected [x, y, z]")
    return tuple(_coerce(v, 0.0, path) for v in value)  # type: ignore[return-value]


def _parse_mission(block: Any, provenance: List[str]) -> MissionSpec:
    if not isinstance(block, dict):
        raise ScenarioParseError("mission: expected an object")
    allowed = {
        "start_zone", "targets", "mission_area", "z_min", "z_max",
        "reach_tolerance", "max_steps", "d_safe", "agents",
    }
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ScenarioValidationError(f"unknown field 'mission.{unknown[0]}'")
    for key in ("start_zone", "targets", "mission_area", "z_min", "z_max", "reach_tolerance", "max_steps"):
        if key not in block:
            raise ScenarioValidationError(f"missing required field 'mission.{key}'")
    targets = block["targets"]
    if not isinstance(targets, list):
        raise ScenarioParseError("mission.targets: expected a list")
    if "agents" in block:
        _require(_coerce(block["agents"], 0, "mission.agents") == len(targets), "targets count equals agent count")
    if "d_safe" not in block:
        provenance.append("mission.d_safe: defaulted")
    return MissionSpec(
        start_zone=_parse_box(block["start_zone"], "mission.start_zone"),
        targets=tuple(_point3(t, "mission.targets") for t in targets),
        mission_area=_parse_box(block["mission_area"], "mission.mission_area"),
        z_min=_coerce(block["z_min"], 0.0, "mission.z_min"),
        z_max=_coerce(block["z_max"], 0.0, "mission.z_max"),
        reach_tolerance=_coerce(block["reach_tolerance"], 0.0, "mission.reach_tolerance"),
        max_steps=_coerce(block["max_steps"], 0, "mission.max_steps"),
        d_safe=_coerce(block.get("d_safe", D_SAFE), 0.0, "mission.d_safe"),
    )


def _parse_radio(block: Any, provenance: List[str]) -> Tuple["RadioParams", Tuple["RadioSite", ...]]:
    from src.radio import RadioParams, RadioSite

    if not isinstance(block, dict):
        raise ScenarioParseError("radio: expected an object")
    unknown = sorted(set(block) - {"params", "sites"})
    if unknown:
        raise ScenarioValidationError(f"unknown field 'radio.{unknown[0]}'")
    params = _build_record(RadioParams, block.get("params"), "radio.params", provenance)
    raw_sites = block.get("sites")
    if not isinstance(raw_sites, list) or not raw_sites:
        raise ScenarioValidationError("radio.sites: at least one site")
    sites = tuple(_build_record(RadioSite, s, "radio.sites", []) for s in raw_sites)
    ids = [s.id for s in sites]
    _require(len(set(ids)) == len(ids), "site id unique per scenario")
    return params, sites


def _parse_world(
    block: Any, mission: MissionSpec, sites: Sequence["RadioSite"], provenance: List[str]
) -> Tuple[GridSpec, Tuple[Building, ...], Optional[np.ndarray]]:
    if not isinstance(block, dict):
        raise ScenarioParseError("world: expected an object")
    unknown = sorted(set(block) - {"grid", "buildings", "generator", "terrain"})
    if unknown:
        raise ScenarioValidationError(f"unknown field 'world.{unknown[0]}'")
    if "grid" not in block:
        raise ScenarioValidationError("missing required field 'world.grid'")
    grid_block = dict(block["grid"]) if isinstance(block["grid"], dict) else block["grid"]
    if isinstance(grid_block, dict) and "origin" in grid_block:
        grid_block["origin"] = tuple(grid_block["origin"])
    grid = _build_record(GridSpec, grid_block, "world.grid", provenance)

    raw_buildings = block.get("buildings", [])
    if not isinstance(raw_buildings, list):
        raise ScenarioParseError("world.buildings: expected a list")
    buildings = [_build_record(Building, b, "world.buildings", []) for b in raw_buildings]

    if block.get("generator") is not None:
        spec = _build_record(GeneratorSpec, block["generator"], "world.generator", provenance)
        keep_out = [mission.start_zone]
        for tx, ty, _tz in mission.targets:
            c = spec.target_clearance
            keep_out.append(Box(tx - c, ty - c, tx + c, ty + c))
        for site in sites:
            c = spec.site_clearance
            keep_out.append(Box(site.position[0] - c, site.position[1] - c, site.position[0] + c, site.position[1] + c))
        buildings.extend(generate_buildings(spec, grid, keep_out))

    terrain = None
    if block.get("terrain") is not None:
        try:
            terrain = np.asarray(block["terrain"], dtype=np.float64)
        except (TypeError, ValueError):
            raise ScenarioParseError("world.terrain: expected an nx x ny array of numbers") from None
    return grid, tuple(buildings), terrain


def scenario_from_dict(payload: Any, provenance: Optional[List[str]] = None) -> ScenarioConfig:
    """
    Validates a decoded scenario document and builds the immutable configuration.
    Absent optional blocks and fields are filled with defaults and listed in provenance.
    """
    from src.agentenv import EnvParams
    from src.maddpg import MaddpgConfig
    from src.ricbus import ClockConfig
    from src.semantics import SemanticsParams

    trail: List[str] = [] if provenance is None else provenance
    if not isinstance(payload, dict):
        raise ScenarioParseError("scenario: expected a JSON object")
    if "schema_version" not in payload:
        raise ScenarioValidationError("schema version present")
    version = payload["schema_version"]
    if version != SCENARIO_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unknown scenario schema_version {version!r} (supported: {SCENARIO_SCHEMA_VERSION})"
        )
    allowed = {"schema_version", "profile", "seed", "world", "mission", "radio", "semantics", "env", "rl", "clocks"}
    unknown = sorted(set(payload) - allowed)
    if unknown:
        raise ScenarioValidationError(f"unknown field '{unknown[0]}'")
    for key in ("world", "mission", "radio"):
        if key not in payload:
            raise ScenarioValidationError(f"missing required field '{key}'")

    if "profile" in payload:
        profile = _coerce(payload["profile"], "", "profile")
    else:
        profile = DEFAULT_PROFILE
        trail.append("profile: defaulted")
    profiles = load_profiles()
    _require(profile in profiles, f"profile is one of {sorted(profiles)}")

    if "seed" in payload:
        seed = _coerce(payload["seed"], 0, "seed")
    else:
        seed = DEFAULT_SEED
        trail.append("seed: defaulted")
    _require(0 <= seed < 2**64, "seed is an unsigned 64-bit integer")

    mission = _parse_mission(payload["mission"], trail)
    radio, sites = _parse_radio(payload["radio"], trail)
    grid, buildings, terrain = _parse_world(payload["world"], mission, sites, trail)
    world = rasterize(buildings, grid.nx, grid.ny, grid.cell_size, grid.origin, terrain)
    area = mission.mission_area
    _require(
        world.origin[0] <= area.x_min and area.x_max <= world.x_max
        and world.origin[1] <= area.y_min and area.y_max <= world.y_max,
        "mission_area inside grid extent",
    )
    for site in sites:
        _require(world.contains(site.position[0], site.position[1]), f"site {site.id} inside grid extent")

    semantics = _build_record(SemanticsParams, payload.get("semantics"), "semantics", trail)
    env = _build_record(EnvParams, payload.get("env"), "env", trail)
    rl = _build_record(MaddpgConfig, payload.get("rl"), "rl", trail)
    clocks = _build_record(
        ClockConfig, payload.get("clocks"), "clocks", trail, profiles[profile].get("clocks"), profile
    )

    config = ScenarioConfig(
        world=world,
        grid=grid,
        buildings=buildings,
        mission=mission,
        radio=radio,
        sites=sites,
        semantics=semantics,
        env=env,
        rl=rl,
        clocks=clocks,
        profile=profile,
        seed=seed,
        terrain=terrain,
        provenance=tuple(trail),
    )
    logger.info(
        f"Scenario validated: {mission.n_agents} agents, {len(buildings)} buildings, {len(sites)} sites, profile={profile}."
    )
    return config


def load_scenario(path: str | Path) -> ScenarioConfig:
    """
    Reads, validates and default-fills a scenario file.

    Args:
        path: JSON scenario file (schema_version 1).

    Returns:
        ScenarioConfig: Fully validated configuration with a provenance list.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot read scenario {path}: {e}")
        raise ScenarioParseError(f"cannot read scenario file {path}: {e}") from e
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        logger.error(f"Malformed scenario {path}: {e}")
        raise ScenarioParseError(f"malformed scenario file {path}: {e}") from e
    config = scenario_from_dict(payload)
    logger.info(f"Scenario loaded from {path}.")
    return config


def _record_dict(record: Any) -> Dict[str, Any]:
    out = dataclasses.asdict(record)
    return json.loads(json.dumps(out))


def scenario_to_dict(config: ScenarioConfig) -> Dict[str, Any]:
    """Fully explicit schema-v1 document (generated buildings written out, defaults materialized)."""
    grid = config.grid
    world: Dict[str, Any] = {
        "grid": {
            "nx": grid.nx,
            "ny": grid.ny,
            "cell_size": grid.cell_size,
            "origin": [grid.origin[0], grid.origin[1]],
        },
        "buildings": [_record_dict(b) for b in config.buildings],
    }
    if config.terrain is not None:
        world["terrain"] = np.asarray(config.terrain).tolist()
    mission = config.mission
    return {
        "schema_version": config.schema_version,
        "profile": config.profile,
        "seed": config.seed,
        "world": world,
        "mission": {
            "start_zone": _record_dict(mission.start_zone),
            "targets": [list(t) for t in mission.targets],
            "mission_area": _record_dict(mission.mission_area),
            "z_min": mission.z_min,
            "z_max": mission.z_max,
            "reach_tolerance": mission.reach_tolerance,
            "max_steps": mission.max_steps,
            "d_safe": mission.d_safe,
        },
        "radio": {
            "params": _record_dict(config.radio),
            "sites": [_record_dict(s) for s in config.sites],
        },
        "semantics": _record_dict(config.semantics),
        "env": _record_dict(config.env),
        "rl": _record_dict(config.rl),
        "clocks": _record_dict(config.clocks),
    }


def save_scenario(config: ScenarioConfig, path: str | Path) -> Path:
    """Writes the scenario as an explicit schema-v1 file that load_scenario reads back unchanged."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(scenario_to_dict(config), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Scenario saved to {out}.")
    return out


def scenario_digest(config: ScenarioConfig) -> str:
    return sha256_digest(scenario_to_dict(config))
