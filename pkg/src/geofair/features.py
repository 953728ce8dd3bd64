"""Random convolutional features for image tiles and region-level aggregation.

A filter bank is a set of fixed Gaussian patches. Each tile is correlated
with every patch (stride 1, valid mode) and the response is split by sign:
component ``2k`` is the mean of ``relu(response_k)`` and ``2k + 1`` the mean
of ``relu(-response_k)``. Region rows are overlap-weighted averages of their
tiles' vectors.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import RegionDataset
from .rng import stream
from .errors import CoverageError, DataError, DimensionError, MissingInputError, SchemaError

DEFAULT_N_FILTERS = 2048
DEFAULT_PATCH_SIZE = 3
DEFAULT_MAX_TILES = 100
_CHUNK = 256


@dataclass(frozen=True)
class FilterBank:
    seed: int
    n_filters: int
    patch_size: int
    filters: np.ndarray  # (n_filters, M, M)
    biases: np.ndarray  # (n_filters,)

    @property
    def dim(self) -> int:
        return 2 * self.n_filters


def make_filter_bank(seed: int, n_filters: int = DEFAULT_N_FILTERS, patch_size: int = DEFAULT_PATCH_SIZE) -> FilterBank:
    if n_filters < 1:
        raise ValueError(f"n_filters must be >= 1, got {n_filters}")
    if patch_size < 1:
        raise ValueError(f"patch_size must be >= 1, got {patch_size}")
    rng = stream(seed, "filters")
    filters = rng.standard_normal((n_filters, patch_size, patch_size))
    filters /= np.sqrt(np.sum(filters**2, axis=(1, 2), keepdims=True))
    return FilterBank(seed, n_filters, patch_size, filters, np.zeros(n_filters))


def _check_tiles(tiles: np.ndarray, bank: FilterBank):
    if tiles.shape[-1] < bank.patch_size or tiles.shape[-2] < bank.patch_size:
        raise DimensionError(f"patch size {bank.patch_size} exceeds tile shape {tiles.shape[-2:]}")
    if not np.all(np.isfinite(tiles)):
        raise DataError("tile contains non-finite pixels")


def _featurize_block(tiles: np.ndarray, bank: FilterBank) -> np.ndarray:
    m = bank.patch_size
    windows = sliding_window_view(tiles, (m, m), axis=(1, 2))  # (T, H', W', M, M)
    t, h, w = windows.shape[:3]
    flat = windows.reshape(t, h * w, m * m)
    response = flat @ bank.filters.reshape(bank.n_filters, m * m).T + bank.biases  # (T, H'W', K)
    out = np.empty((t, 2 * bank.n_filters))
    out[:, 0::2] = np.maximum(response, 0.0).mean(axis=1)
    out[:, 1::2] = np.maximum(-response, 0.0).mean(axis=1)
    return out


def featurize_tile(tile, bank: FilterBank) -> np.ndarray:
    tile = np.asarray(tile, dtype=float)
    if tile.ndim != 2:
        raise DimensionError(f"expected a 2-d tile, got shape {tile.shape}")
    _check_tiles(tile, bank)
    return _featurize_block(tile[None], bank)[0]


def featurize_tiles(tiles: Mapping[int, np.ndarray], bank: FilterBank) -> dict[int, np.ndarray]:
    """Featurize many same-sized tiles; returns a map tile_id -> feature vector."""
    ids = sorted(tiles)
    if not ids:
        return {}
    stack = np.stack([np.asarray(tiles[i], dtype=float) for i in ids])
    _check_tiles(stack, bank)
    out = np.empty((len(ids), bank.dim))
    for start in range(0, len(ids), _CHUNK):
        out[start : start + _CHUNK] = _featurize_block(stack[start : start + _CHUNK], bank)
    return {tile_id: out[k] for k, tile_id in enumerate(ids)}


@dataclass(frozen=True)
class FeatureMatrix:
    region_ids: tuple[str, ...]
    X: np.ndarray
    bank_seed: int

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        index = {rid: i for i, rid in enumerate(self.region_ids)}
        return self.X[[index[i] for i in ids]]


def _region_tiles(region, tile_features: Mapping[int, np.ndarray], max_tiles: int, rng) -> list[tuple[int, float]]:
    pairs = sorted((t, w) for t, w in region.tile_overlaps if t in tile_features)
    if len(pairs) > max_tiles:
        keep = np.sort(rng.choice(len(pairs), size=max_tiles, replace=False))
        pairs = [pairs[k] for k in keep]
    return pairs


def aggregate_region_features(
    tile_features: Mapping[int, np.ndarray],
    regions: RegionDataset,
    max_tiles: int = DEFAULT_MAX_TILES,
    seed: int = 0,
    bank_seed: int = -1,
) -> FeatureMatrix:
    """Overlap-weighted mean of tile vectors per region.

    Regions overlapping more than ``max_tiles`` featurized tiles use a seeded
    uniform subsample of ``max_tiles`` of them. Weights are renormalized over
    the tiles actually used.
    """
    if max_tiles < 1:
        raise ValueError(f"max_tiles must be >= 1, got {max_tiles}")
    dim = len(next(iter(tile_features.values()))) if tile_features else 0
    X = np.zeros((len(regions), dim))
    uncovered = []
    for i, region in enumerate(regions.regions):
        rng = stream(seed, "tile-subsample", i)
        pairs = _region_tiles(region, tile_features, max_tiles, rng)
        total = sum(w for _, w in pairs)
        if not pairs or total <= 0:
            uncovered.append(region.id)
            continue
        for tile_id, weight in pairs:
            X[i] += (weight / total) * tile_features[tile_id]
    if uncovered:
        raise CoverageError(f"{len(uncovered)} region(s) overlap no featurized tile: {uncovered[:10]}")
    return FeatureMatrix(regions.ids, X, bank_seed)


def sample_region_tiles(regions: RegionDataset, seed: int = 0) -> dict[str, int]:
    """Pick one overlapping tile per region, uniformly at random (seeded)."""
    out = {}
    for i, region in enumerate(regions.regions):
        if not region.tile_overlaps:
            raise CoverageError(f"region {region.id!r} has no tiles")
        tiles = sorted(t for t, _ in region.tile_overlaps)
        out[region.id] = tiles[int(stream(seed, "tile-pick", i).integers(len(tiles)))]
    return out


def write_features(fm: FeatureMatrix, path: str | Path, bank: FilterBank | None = None) -> list[Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["region_id"] + [f"f{j}" for j in range(fm.d)])
        for rid, row in zip(fm.region_ids, fm.X):
            writer.writerow([rid] + [repr(float(v)) for v in row])
    meta = {"bank_seed": fm.bank_seed}
    if bank is not None:
        meta.update(n_filters=bank.n_filters, patch_size=bank.patch_size)
    bank_path = path.with_name(path.stem + ".bank.json")
    bank_path.write_text(json.dumps(meta, sort_keys=True) + "\n")
    return [path, bank_path]


def read_features(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"feature file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "region_id":
            raise SchemaError(f"{path}: first column must be region_id")
        ids, rows = [], []
        for line in reader:
            ids.append(line[0])
            rows.append([float(v) for v in line[1:]])
    bank_path = path.with_name(path.stem + ".bank.json")
    seed = json.loads(bank_path.read_text())["bank_seed"] if bank_path.exists() else -1
    X = np.array(rows, dtype=float).reshape(len(ids), len(header) - 1)
    return FeatureMatrix(tuple(ids), X, seed)
