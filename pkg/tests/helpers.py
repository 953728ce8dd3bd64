from geofair.features import aggregate_region_features, featurize_tiles, make_filter_bank
from geofair.synth import generate_country


def build_inputs(synth_cfg, n_filters=64, bank_seed=0):
    dataset, raster = generate_country(synth_cfg)
    tile_features = featurize_tiles(raster.tiles, make_filter_bank(bank_seed, n_filters, 3))
    return dataset, aggregate_region_features(tile_features, dataset, 100, 0, bank_seed), tile_features
