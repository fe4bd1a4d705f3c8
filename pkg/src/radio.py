"""
Radio field: log-distance path loss with LoS/NLoS exponents, ray-cast occlusion over the height
raster, spatially correlated shadowing, serving-site selection and SINR; SINR surface export.
All functions are pure.
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.constants import (
    D0_M,
    N_LOS,
    N_NLOS,
    NLOS_EXTRA_DB,
    NOISE_POWER_DBM,
    PL0_DB,
    SHADOW_CORR_LEN_M,
    SHADOW_SIGMA_LOS_DB,
    SHADOW_SIGMA_NLOS_DB,
)
from src.errors import OutOfBoundsError, ScenarioValidationError
from src.utils import make_rng, setup_logging
from src.worldmodel import Box, MissionSpec, WorldMap

setup_logging()
logger = logging.getLogger(__name__)

SURFACE_CSV_HEADER = "x,y,z,sinr_db,serving_id,in_obstacle"

# Cell crossings shorter than this (meters) are treated as touching a corner, not entering the cell.
_MIN_CROSSING_M = 1e-9


@dataclass(frozen=True)
class RadioSite:
    id: int
    position: Tuple[float, float, float]
    tx_power: float
    antenna_gain: float = 0.0

    def __post_init__(self) -> None:
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3:
            raise ScenarioValidationError("site position is a 3D point")
        if not pos[2] > 0:
            raise ScenarioValidationError("site z > 0")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class RadioParams:
    pl0: float = PL0_DB
    d0: float = D0_M
    n_los: float = N_LOS
    n_nlos: float = N_NLOS
    nlos_extra: float = NLOS_EXTRA_DB
    shadow_sigma_los: float = SHADOW_SIGMA_LOS_DB
    shadow_sigma_nlos: float = SHADOW_SIGMA_NLOS_DB
    shadow_corr_len: float = SHADOW_CORR_LEN_M
    noise_power: float = NOISE_POWER_DBM
    fading_seed: int = 0

    def __post_init__(self) -> None:
        if not self.d0 > 0:
            raise ScenarioValidationError("d0 > 0")
        if not (self.n_los > 0 and self.n_nlos > 0):
            raise ScenarioValidationError("n_los, n_nlos > 0")
        if self.shadow_sigma_los < 0 or self.shadow_sigma_nlos < 0:
            raise ScenarioValidationError("sigmas >= 0")
        if not self.shadow_corr_len > 0:
            raise ScenarioValidationError("corr_len > 0")


@dataclass(frozen=True)
class SinrSample:
    serving_id: int
    sinr_db: float
    rx_powers_dbm: Tuple[float, ...]


@dataclass(frozen=True, eq=False)
class SinrSurface:
    """SINR over a horizontal slice. Arrays are indexed [row (y), column (x)]."""

    altitude: float
    xs: np.ndarray
    ys: np.ndarray
    sinr_db: np.ndarray
    serving_id: np.ndarray
    in_obstacle: np.ndarray

    def rows(self) -> List[Tuple[float, float, float, float, int, bool]]:
        """Row-major records: y outer, x inner."""
        out = []
        for r, y in enumerate(self.ys):
            for c, x in enumerate(self.xs):
                out.append(
                    (
                        float(x),
                        float(y),
                        self.altitude,
                        float(self.sinr_db[r, c]),
                        int(self.serving_id[r, c]),
                        bool(self.in_obstacle[r, c]),
                    )
                )
        return out


def _check_in_extent(world: WorldMap, p: Sequence[float]) -> None:
    if not world.contains(p[0], p[1]):
        raise OutOfBoundsError(f"segment endpoint ({p[0]:.3f}, {p[1]:.3f}) outside grid extent")


def line_of_sight(world: WorldMap, a: Sequence[float], b: Sequence[float]) -> bool:
    """
    True iff the segment a -> b clears the height raster. The segment is walked cell by cell in
    2D; within each crossed cell z varies linearly, so the lowest point is at the entry or exit.
    The cells holding the endpoints are not tested.

    Args:
        world: Height raster.
        a, b: 3D points inside the grid extent.

    Returns:
        bool: False if any crossed cell has height >= the segment's lowest z inside it.
    """
    _check_in_extent(world, a)
    _check_in_extent(world, b)
    # Fixed endpoint order keeps the result exactly symmetric in (a, b).
    if (b[0], b[1], b[2]) < (a[0], a[1], a[2]):
        a, b = b, a
    start = world.cell_of(a[0], a[1])
    end = world.cell_of(b[0], b[1])
    if start == end:
        return True

    c = world.cell_size
    ax = (a[0] - world.origin[0]) / c
    ay = (a[1] - world.origin[1]) / c
    dx = (b[0] - world.origin[0]) / c - ax
    dy = (b[1] - world.origin[1]) / c - ay
    breaks = [np.array([0.0, 1.0])]
    for p0, dp in ((ax, dx), (ay, dy)):
        if dp != 0.0:
            lo, hi = (p0, p0 + dp) if dp > 0 else (p0 + dp, p0)
            lines = np.arange(math.floor(lo) + 1, math.ceil(hi), dtype=np.float64)
            breaks.append((lines - p0) / dp)
    t = np.unique(np.clip(np.concatenate(breaks), 0.0, 1.0))
    t0, t1 = t[:-1], t[1:]
    seg_len_xy = math.hypot(dx, dy) * c
    keep = (t1 - t0) * seg_len_xy > _MIN_CROSSING_M
    t0, t1 = t0[keep], t1[keep]
    tm = 0.5 * (t0 + t1)
    ci = np.clip(np.floor(ax + tm * dx).astype(np.int64), 0, world.nx - 1)
    cj = np.clip(np.floor(ay + tm * dy).astype(np.int64), 0, world.ny - 1)
    interior = ~(((ci == start[0]) & (cj == start[1])) | ((ci == end[0]) & (cj == end[1])))
    if not interior.any():
        return True
    dz = b[2] - a[2]
    z_low = a[2] + np.minimum(t0, t1) * dz if dz >= 0 else a[2] + np.maximum(t0, t1) * dz
    blocked = z_low[interior] <= world.height[ci[interior], cj[interior]]
    return not bool(blocked.any())


def path_loss_db(d: float, los: bool, p: RadioParams) -> float:
    """
    Log-distance path loss: pl0 + 10 n log10(max(d, d0) / d0), plus nlos_extra when blocked.
    """
    n = p.n_los if los else p.n_nlos
    loss = p.pl0 + 10.0 * n * math.log10(max(d, p.d0) / p.d0)
    return loss if los else loss + p.nlos_extra


@functools.lru_cache(maxsize=65536)
def lattice_value(fading_seed: int, site_id: int, i: int, j: int) -> float:
    """Unit-variance Gaussian draw for one shadowing lattice node, keyed by its coordinates."""
    return float(make_rng(fading_seed, site_id, i, j).standard_normal())


def shadow_db(pos: Sequence[float], p: RadioParams, site_id: int, los: bool = True) -> float:
    """
    Correlated shadowing (dB) at pos for one site: value noise on a lattice with spacing
    shadow_corr_len, bilinearly interpolated in x-y and scaled by the LoS or NLoS sigma.
    """
    sigma = p.shadow_sigma_los if los else p.shadow_sigma_nlos
    if sigma == 0.0:
        return 0.0
    u = pos[0] / p.shadow_corr_len
    v = pos[1] / p.shadow_corr_len
    i0 = math.floor(u)
    j0 = math.floor(v)
    fx = u - i0
    fy = v - j0
    v00 = lattice_value(p.fading_seed, site_id, i0, j0)
    v10 = lattice_value(p.fading_seed, site_id, i0 + 1, j0)
    v01 = lattice_value(p.fading_seed, site_id, i0, j0 + 1)
    v11 = lattice_value(p.fading_seed, site_id, i0 + 1, j0 + 1)
    value = (
        v00 * (1 - fx) * (1 - fy)
        + v10 * fx * (1 - fy)
        + v01 * (1 - fx) * fy
        + v11 * fx * fy
    )
    return sigma * value


def rx_power_dbm(pos: Sequence[float], site: RadioSite, world: WorldMap, p: RadioParams) -> float:
    d = math.dist(site.position, pos)
    los = line_of_sight(world, site.position, pos)
    return site.tx_power + site.antenna_gain - path_loss_db(d, los, p) - shadow_db(pos, p, site.id, los)


def sinr_at(
    pos: Sequence[float], sites: Sequence[RadioSite], world: WorldMap, p: RadioParams
) -> SinrSample:
    """
    SINR at a 3D point. The serving site is the strongest received power (lowest id on a tie);
    every other site counts as interference.

    Args:
        pos: Query point inside the grid extent.
        sites: At least one radio site.
        world: Height raster used for occlusion.
        p: Propagation parameters.

    Returns:
        SinrSample with per-site received powers in id order.
    """
    if not sites:
        raise ScenarioValidationError("no radio sites configured")
    ordered = sorted(sites, key=lambda s: s.id)
    rx = np.array([rx_power_dbm(pos, s, world, p) for s in ordered], dtype=np.float64)
    k = int(np.argmax(rx))
    linear = np.power(10.0, rx / 10.0)
    interference = float(linear.sum() - linear[k]) if len(ordered) > 1 else 0.0
    noise = 10.0 ** (p.noise_power / 10.0)
    sinr_db = 10.0 * math.log10(linear[k] / (interference + noise))
    return SinrSample(serving_id=ordered[k].id, sinr_db=sinr_db, rx_powers_dbm=tuple(float(v) for v in rx))


def _axis_centers(lo: float, hi: float, resolution: float) -> np.ndarray:
    n = max(1, int(math.floor((hi - lo) / resolution + 1e-9)))
    if n == 1:
        return np.array([0.5 * (lo + hi)])
    return lo + (np.arange(n) + 0.5) * resolution


def export_sinr_surface(
    altitude: float,
    resolution: float,
    sites: Sequence[RadioSite],
    world: WorldMap,
    p: RadioParams,
    mission: MissionSpec,
    area: Optional[Box] = None,
) -> SinrSurface:
    """
    Samples sinr_at on a regular grid of cell centers covering the mission area at one altitude.
    Cells whose center lies inside a building are still evaluated and flagged in_obstacle.
    """
    if not mission.z_min <= altitude <= mission.z_max:
        raise ScenarioValidationError("altitude within [z_min, z_max]")
    if not resolution > 0:
        raise ScenarioValidationError("resolution > 0")
    box = area or mission.mission_area
    xs = _axis_centers(box.x_min, box.x_max, resolution)
    ys = _axis_centers(box.y_min, box.y_max, resolution)
    sinr = np.empty((len(ys), len(xs)), dtype=np.float64)
    serving = np.empty((len(ys), len(xs)), dtype=np.int64)
    inside = np.zeros((len(ys), len(xs)), dtype=bool)
    for r, y in enumerate(ys):
        for col, x in enumerate(xs):
            point = (float(x), float(y), float(altitude))
            sample = sinr_at(point, sites, world, p)
            sinr[r, col] = sample.sinr_db
            serving[r, col] = sample.serving_id
            i, j = world.cell_of(point[0], point[1])
            inside[r, col] = altitude <= world.height[i, j]
    logger.info(f"Exported SINR surface at {altitude} m: {len(xs)}x{len(ys)} cells, {int(inside.sum())} inside obstacles.")
    return SinrSurface(altitude=float(altitude), xs=xs, ys=ys, sinr_db=sinr, serving_id=serving, in_obstacle=inside)


def write_surface_csv(surface: SinrSurface, path: str | Path, comment: str = "") -> Path:
    """Writes the surface as CSV: optional '# comment' line, header, then row-major cells."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {comment}"] if comment else []
    lines.append(SURFACE_CSV_HEADER)
    for x, y, z, s, sid, obstacle in surface.rows():
        lines.append(f"{x:.3f},{y:.3f},{z:.3f},{s:.6f},{sid},{int(obstacle)}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"SINR surface written to {out}.")
    return out
