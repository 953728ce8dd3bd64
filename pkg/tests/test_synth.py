import numpy as np
import pytest

from geofair.data import write_dataset
from geofair.errors import ConfigError
from geofair.synth import (
    SynthConfig,
    describe_config_suite,
    generate_country,
    read_raster,
    snake_positions,
    write_raster,
)

from oracles import pearson, spearman


def test_symmetric_target_reached():
    ds, _ = generate_country(SynthConfig(n_regions=200, target_rho=0.0, within_visibility=1.0, tile_grid=(60, 40)))
    assert abs(spearman(ds.wealth.tolist(), ds.urban.astype(float).tolist())) <= 0.03


def test_mexico_like_target_reached():
    cfg = SynthConfig(n_regions=500, rural_share=0.56, target_rho=0.7, tile_grid=(80, 60))
    ds, _ = generate_country(cfg)
    rho = spearman(ds.wealth.tolist(), ds.urban.astype(float).tolist())
    assert 0.67 <= rho <= 0.73


def test_same_config_byte_identical(tmp_path):
    cfg = SynthConfig(n_regions=40, tile_grid=(20, 20), seed=11)
    paths = []
    for sub in ("a", "b"):
        ds, raster = generate_country(cfg)
        paths.append(write_dataset(ds, tmp_path / sub / "d.csv") + write_raster(raster, tmp_path / sub / "d.gfrt"))
    for p, q in zip(*paths):
        assert p.read_bytes() == q.read_bytes()


def test_suite_contract():
    suite = describe_config_suite()
    assert len(suite) >= 3
    assert len({c.name for c in suite.values()}) == len(suite)
    assert suite["rural-poverty"].target_rho == 0.7
    assert suite["rural-poverty"].within_visibility == 0.3
    assert suite["hidden-urban-poor"].target_rho == 0.3
    assert suite["high-visibility"].within_visibility == 0.9


def test_suite_configs_generate():
    for cfg in describe_config_suite().values():
        ds, raster = generate_country(cfg)
        assert len(ds) == cfg.n_regions
        assert ds.standardized


def test_unreachable_target_reports_range():
    with pytest.raises(ConfigError, match="achievable range"):
        generate_country(SynthConfig(n_regions=100, target_rho=0.99))


@pytest.mark.parametrize(
    "field, value",
    [("rural_share", 1.5), ("n_regions", 4), ("within_visibility", 2.0), ("tiles_per_region", (5, 2))],
)
def test_invalid_config_names_field(field, value):
    with pytest.raises(ConfigError, match=field):
        SynthConfig(**{field: value}).validate()


def test_grid_too_small():
    with pytest.raises(ConfigError, match="tile_grid"):
        SynthConfig(n_regions=100, tile_grid=(10, 10)).validate()


def test_urban_richer_when_correlated():
    for seed in range(50):
        ds, _ = generate_country(SynthConfig(n_regions=100, target_rho=0.4, tile_grid=(40, 30), seed=seed))
        assert ds.wealth[ds.urban].mean() > ds.wealth[~ds.urban].mean()


def test_zero_visibility_hides_within_group_wealth():
    corrs = []
    for seed in range(50):
        cfg = SynthConfig(n_regions=120, within_visibility=0.0, tile_grid=(40, 30), pixel_noise=0.3, seed=seed)
        ds, raster = generate_country(cfg)
        urban_regions = [r for r in ds.regions if r.urban]
        intensity = [np.mean([raster.tiles[t].mean() for t, _ in r.tile_overlaps]) for r in urban_regions]
        corrs.append(pearson(intensity, [r.wealth for r in urban_regions]))
    assert abs(np.mean(corrs)) <= 0.1


def test_tile_blocks_disjoint_contiguous_and_sized():
    cfg = SynthConfig(n_regions=60, tile_grid=(30, 20), tiles_per_region=(2, 5), seed=4)
    ds, raster = generate_country(cfg)
    seen = set()
    for r in ds.regions:
        tiles = [t for t, _ in r.tile_overlaps]
        assert 2 <= len(tiles) <= 5
        assert seen.isdisjoint(tiles)
        seen.update(tiles)
        cells = list(r.geometry)
        for (x0, y0), (x1, y1) in zip(cells, cells[1:]):
            assert abs(x0 - x1) + abs(y0 - y1) == 1
    assert seen == set(raster.tiles)


def test_snake_order_is_edge_connected():
    cells = snake_positions(4, 3)
    assert len(set(cells)) == 12
    assert all(abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1 for a, b in zip(cells, cells[1:]))


def test_raster_round_trip(tmp_path):
    _, raster = generate_country(SynthConfig(n_regions=16, tile_grid=(10, 10), tiles_per_region=(2, 4), tile_side=8))
    back = read_raster(write_raster(raster, tmp_path / "r.gfrt")[0])
    assert back.side_length == 8 and back.grid_width == 10
    assert set(back.tiles) == set(raster.tiles)
    for t, tile in raster.tiles.items():
        assert np.array_equal(back.tiles[t], tile)
    assert (tmp_path / "r.gfrt").read_bytes()[:4] == b"GFRT"
