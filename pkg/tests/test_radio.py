import math

import numpy as np
import pytest

from src.errors import OutOfBoundsError, ScenarioValidationError
from src.radio import (
    SURFACE_CSV_HEADER,
    RadioParams,
    RadioSite,
    export_sinr_surface,
    line_of_sight,
    path_loss_db,
    shadow_db,
    sinr_at,
    write_surface_csv,
)
from src.worldmodel import Building, rasterize

NO_SHADOW = RadioParams(shadow_sigma_los=0.0, shadow_sigma_nlos=0.0)


@pytest.fixture
def tower_world():
    return rasterize([Building(90.0, 90.0, 110.0, 110.0, 60.0)], 40, 40, 5.0)


def test_line_of_sight_blocked_by_a_taller_building(tower_world):
    assert not line_of_sight(tower_world, (50.0, 100.0, 30.0), (150.0, 100.0, 30.0))


def test_line_of_sight_clears_a_lower_building(tower_world):
    assert line_of_sight(tower_world, (50.0, 100.0, 80.0), (150.0, 100.0, 80.0))


def test_line_of_sight_is_symmetric(tower_world):
    a, b = (12.0, 31.0, 20.0), (181.0, 160.0, 95.0)
    assert line_of_sight(tower_world, a, b) == line_of_sight(tower_world, b, a)


def test_line_of_sight_ignores_endpoint_cells(tower_world):
    # Both endpoints sit on the roof footprint itself.
    assert line_of_sight(tower_world, (100.0, 100.0, 10.0), (101.0, 101.0, 10.0))


def test_line_of_sight_rejects_points_outside_the_grid(tower_world):
    with pytest.raises(OutOfBoundsError):
        line_of_sight(tower_world, (-5.0, 10.0, 10.0), (20.0, 20.0, 10.0))


def test_path_loss_matches_the_log_distance_model():
    p = RadioParams()
    assert path_loss_db(100.0, True, p) == pytest.approx(p.pl0 + 20.0 * p.n_los)
    assert path_loss_db(100.0, False, p) == pytest.approx(p.pl0 + 20.0 * p.n_nlos + p.nlos_extra)
    # Distances below d0 are clamped.
    assert path_loss_db(0.2, True, p) == pytest.approx(p.pl0)


def test_shadowing_is_deterministic_and_continuous():
    p = RadioParams(fading_seed=17)
    first = shadow_db((123.0, 45.0, 50.0), p, site_id=2)
    assert first == shadow_db((123.0, 45.0, 50.0), p, site_id=2)
    nearby = shadow_db((123.5, 45.0, 50.0), p, site_id=2)
    assert abs(first - nearby) < 1.0
    assert shadow_db((123.0, 45.0, 50.0), NO_SHADOW, site_id=2) == 0.0


def test_sinr_single_site_is_signal_over_noise():
    world = rasterize([], 40, 40, 5.0)
    site = RadioSite(id=0, position=(100.0, 100.0, 25.0), tx_power=30.0)
    sample = sinr_at((150.0, 100.0, 25.0), [site], world, NO_SHADOW)
    expected = 30.0 - path_loss_db(50.0, True, NO_SHADOW) - NO_SHADOW.noise_power
    assert sample.serving_id == 0
    assert sample.sinr_db == pytest.approx(expected)
    assert len(sample.rx_powers_dbm) == 1


def test_sinr_tie_goes_to_the_lowest_site_id():
    world = rasterize([], 40, 40, 5.0)
    sites = [
        RadioSite(id=3, position=(150.0, 100.0, 25.0), tx_power=30.0),
        RadioSite(id=1, position=(50.0, 100.0, 25.0), tx_power=30.0),
    ]
    sample = sinr_at((100.0, 100.0, 25.0), sites, world, NO_SHADOW)
    assert sample.serving_id == 1
    # Equal interferer: SINR just under 0 dB.
    assert -3.5 < sample.sinr_db < 0.0


def test_sinr_needs_at_least_one_site():
    world = rasterize([], 4, 4, 5.0)
    with pytest.raises(ScenarioValidationError):
        sinr_at((1.0, 1.0, 1.0), [], world, NO_SHADOW)


def test_site_must_be_above_ground():
    with pytest.raises(ScenarioValidationError, match="site z > 0"):
        RadioSite(id=0, position=(1.0, 1.0, 0.0), tx_power=30.0)


def test_blocked_site_loses_power(tower_world):
    site = RadioSite(id=0, position=(50.0, 100.0, 30.0), tx_power=30.0)
    behind = sinr_at((150.0, 100.0, 30.0), [site], tower_world, NO_SHADOW)
    clear = sinr_at((150.0, 100.0, 30.0), [site], rasterize([], 40, 40, 5.0), NO_SHADOW)
    assert clear.sinr_db - behind.sinr_db == pytest.approx(
        path_loss_db(100.0, False, NO_SHADOW) - path_loss_db(100.0, True, NO_SHADOW)
    )


def test_surface_covers_the_mission_area_and_flags_obstacles(small_scenario):
    surface = export_sinr_surface(
        50.0, 20.0, small_scenario.sites, small_scenario.world, small_scenario.radio, small_scenario.mission
    )
    assert surface.sinr_db.shape == (10, 10)
    assert list(surface.xs[:3]) == [10.0, 30.0, 50.0]
    # Only the sample at (90, 90) falls inside the tower footprint.
    assert int(surface.in_obstacle.sum()) == 1
    assert bool(surface.in_obstacle[4, 4])
    assert set(surface.serving_id.ravel()) <= {0, 1}
    assert all(math.isfinite(v) for v in surface.sinr_db.ravel())


def test_surface_rejects_altitudes_outside_the_mission_band(small_scenario):
    with pytest.raises(ScenarioValidationError, match="altitude"):
        export_sinr_surface(
            150.0, 20.0, small_scenario.sites, small_scenario.world, small_scenario.radio, small_scenario.mission
        )


def test_surface_csv_layout(small_scenario, tmp_path):
    surface = export_sinr_surface(
        50.0, 50.0, small_scenario.sites, small_scenario.world, small_scenario.radio, small_scenario.mission
    )
    path = write_surface_csv(surface, tmp_path / "surface.csv", comment="scenario_digest=abc")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# scenario_digest=abc"
    assert lines[1] == SURFACE_CSV_HEADER
    assert len(lines) == 2 + 16
    assert lines[2].startswith("25.000,25.000,50.000,")


def test_path_loss_hand_values():
    p = RadioParams(pl0=30.0, d0=1.0, n_los=2.0, n_nlos=3.5, nlos_extra=20.0)
    assert path_loss_db(1.0, True, p) == 30.0
    assert path_loss_db(100.0, True, p) == pytest.approx(70.0)
    assert path_loss_db(100.0, False, p) == pytest.approx(120.0)


def test_line_of_sight_matches_dense_sampling():
    world = rasterize([Building(80.0, 0.0, 120.0, 200.0, 50.0)], 40, 40, 5.0)
    for z_end in (40.0, 75.0, 80.0, 95.0):
        a, b = np.array([10.0, 100.0, 10.0]), np.array([190.0, 100.0, z_end])
        length = float(np.linalg.norm(b - a))
        steps = np.linspace(0.0, 1.0, int(length / 0.1) + 1)
        points = a[None, :] + steps[:, None] * (b - a)[None, :]
        blocked = False
        for x, y, z in points:
            cell = world.cell_of(x, y)
            if cell in (world.cell_of(a[0], a[1]), world.cell_of(b[0], b[1])):
                continue
            blocked = blocked or z <= world.height[cell]
        assert line_of_sight(world, a, b) == (not blocked)


def test_shadow_lattice_has_the_configured_spread():
    p = RadioParams(shadow_sigma_los=4.0, shadow_corr_len=1.0, fading_seed=5)
    values = [shadow_db((float(i), float(j), 10.0), p, site_id=0) for i in range(100) for j in range(100)]
    assert abs(float(np.std(values)) - 4.0) < 0.4


def test_common_power_offset_keeps_serving_sites(small_scenario):
    boosted = [
        RadioSite(s.id, s.position, s.tx_power + 3.0, s.antenna_gain) for s in small_scenario.sites
    ]
    for point in [(30.0, 30.0, 50.0), (150.0, 60.0, 40.0), (100.0, 170.0, 80.0)]:
        base = sinr_at(point, small_scenario.sites, small_scenario.world, small_scenario.radio)
        shifted = sinr_at(point, boosted, small_scenario.world, small_scenario.radio)
        assert base.serving_id == shifted.serving_id


def test_surface_falls_off_with_distance_from_a_single_site(empty_scenario):
    site = RadioSite(id=0, position=(100.0, 100.0, 25.0), tx_power=30.0)
    surface = export_sinr_surface(50.0, 10.0, [site], empty_scenario.world, NO_SHADOW, empty_scenario.mission)
    xx, yy = np.meshgrid(surface.xs, surface.ys)
    dist = np.hypot(xx - 100.0, yy - 100.0).ravel()
    order = np.argsort(dist, kind="stable")
    assert np.all(np.diff(surface.sinr_db.ravel()[order]) <= 1e-9)


def test_coarse_resolution_gives_a_single_sample(small_scenario):
    surface = export_sinr_surface(
        50.0, 500.0, small_scenario.sites, small_scenario.world, small_scenario.radio, small_scenario.mission
    )
    assert surface.sinr_db.shape == (1, 1)
    assert list(surface.xs) == [100.0]


def _segment_oracle(world, a, b, step=0.01, margin=0.05):
    """
    Dense-sampling bounds on blocking: `inside` counts only samples that sit in a crossed cell
    clearly below its roof; `nearby` also looks at every cell within one step of a sample and
    allows the margin. The exact answer lies between the two.
    """
    n = int(np.linalg.norm(b - a) / step) + 2
    t = np.linspace(0.0, 1.0, n)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    c = world.cell_size
    ends = {world.cell_of(a[0], a[1]), world.cell_of(b[0], b[1])}
    height = np.array(world.height, dtype=np.float64)
    for i, j in ends:
        height[i, j] = -np.inf

    def cells(x, y):
        i = np.clip(np.floor(x / c).astype(np.int64), 0, world.nx - 1)
        j = np.clip(np.floor(y / c).astype(np.int64), 0, world.ny - 1)
        return i, j

    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    inside = bool(np.any(z <= height[cells(x, y)] - margin))
    roof = np.full(n, -np.inf)
    for sx in (-step, step):
        for sy in (-step, step):
            roof = np.maximum(roof, height[cells(x + sx, y + sy)])
    nearby = bool(np.any(z - step <= roof + margin))
    return inside, nearby


def test_line_of_sight_agrees_with_dense_sampling_on_random_segments():
    rng = np.random.default_rng(77)
    buildings = []
    for _ in range(15):
        x, y = rng.uniform(0.0, 130.0, size=2)
        w, d = rng.uniform(5.0, 30.0, size=2)
        buildings.append(Building(float(x), float(y), float(x + w), float(y + d), float(rng.uniform(10.0, 80.0))))
    world = rasterize(buildings, 30, 30, 5.0)
    checked = 0
    for _ in range(1_000):
        a = rng.uniform([0.0, 0.0, 0.0], [149.9, 149.9, 100.0])
        b = rng.uniform([0.0, 0.0, 0.0], [149.9, 149.9, 100.0])
        inside, nearby = _segment_oracle(world, a, b)
        if inside != nearby:
            continue
        checked += 1
        assert line_of_sight(world, a, b) == (not inside)
    assert checked >= 800


def test_sinr_matches_the_closed_form_in_an_empty_world(empty_scenario):
    rng = np.random.default_rng(8)
    p = NO_SHADOW
    sites = [
        RadioSite(id=0, position=(40.0, 150.0, 25.0), tx_power=30.0),
        RadioSite(id=1, position=(160.0, 60.0, 30.0), tx_power=27.0, antenna_gain=2.0),
    ]
    noise_mw = 10.0 ** (p.noise_power / 10.0)
    for _ in range(10_000):
        pos = rng.uniform([0.0, 0.0, 1.0], [199.9, 199.9, 150.0])
        rx = [s.tx_power + s.antenna_gain - path_loss_db(math.dist(s.position, pos), True, p) for s in sites]
        linear = [10.0 ** (r / 10.0) for r in rx]
        k = int(np.argmax(rx))
        expected = 10.0 * math.log10(linear[k] / (linear[1 - k] + noise_mw))
        sample = sinr_at(pos, sites, empty_scenario.world, p)
        assert sample.serving_id == k
        assert sample.sinr_db == pytest.approx(expected, abs=1e-4)
