"""Synthetic countries: region tables plus single-channel tile rasters.

Wealth is ``alpha * urban + latent`` with ``latent ~ N(0, 1)``; ``alpha`` is
tuned so the rank correlation between wealth and the urban flag hits a
target. Each region owns a contiguous run of tiles whose texture encodes a
"buildup" level::

    buildup = urban * (1 + g * latent) + (1 - urban) * g * latent
              + texture_noise * sqrt(1 - g**2) * nuisance

where ``g`` is the within-group visibility. The nuisance term is independent
of wealth; without it a linear model could undo any ``g > 0`` by rescaling.
A tile is ``buildup`` plus a cos-product checkerboard whose frequency rises
with buildup, plus per-pixel Gaussian noise.

This texture model is an assumption made for testing the audit, not a model
of real imagery.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .audit import spearman
from .data import Region, RegionDataset, round_half_up, standardize_labels
from .rng import stream
from .errors import ConfigError, DataError, MissingInputError

RASTER_MAGIC = b"GFRT"
RHO_TOLERANCE = 0.03
ALPHA_BRACKET = (-10.0, 10.0)
MAX_BISECTIONS = 60


@dataclass(frozen=True)
class SynthConfig:
    name: str = "custom"
    n_regions: int = 400
    rural_share: float = 0.5
    target_rho: float = 0.5
    within_visibility: float = 0.5
    tile_grid: tuple[int, int] = (80, 80)
    tiles_per_region: tuple[int, int] = (3, 9)
    pixel_noise: float = 0.3
    texture_noise: float = 0.5
    tile_side: int = 16
    mask_urban_poor: float = 0.0
    seed: int = 0

    def validate(self):
        if self.n_regions < 8:
            raise ConfigError(f"n_regions must be >= 8, got {self.n_regions}")
        if not 0 < self.rural_share < 1:
            raise ConfigError(f"rural_share must lie in (0, 1), got {self.rural_share}")
        n_rural = round_half_up(self.rural_share * self.n_regions)
        if n_rural < 2 or self.n_regions - n_rural < 2:
            raise ConfigError(f"rural_share={self.rural_share} leaves fewer than 2 regions in a group")
        if not -1 <= self.target_rho <= 1:
            raise ConfigError(f"target_rho must lie in [-1, 1], got {self.target_rho}")
        if not 0 <= self.within_visibility <= 1:
            raise ConfigError(f"within_visibility must lie in [0, 1], got {self.within_visibility}")
        lo, hi = self.tiles_per_region
        if not 1 <= lo <= hi:
            raise ConfigError(f"tiles_per_region must satisfy 1 <= min <= max, got {self.tiles_per_region}")
        width, height = self.tile_grid
        if width < 1 or height < 1 or width * height < self.n_regions * hi:
            raise ConfigError(
                f"tile_grid {self.tile_grid} cannot host {self.n_regions} regions of up to {hi} tiles"
            )
        if self.pixel_noise < 0 or self.texture_noise < 0:
            raise ConfigError("pixel_noise and texture_noise must be nonnegative")
        if self.tile_side < 2:
            raise ConfigError(f"tile_side must be >= 2, got {self.tile_side}")
        if not 0 <= self.mask_urban_poor < 1:
            raise ConfigError(f"mask_urban_poor must lie in [0, 1), got {self.mask_urban_poor}")

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown synth config field(s): {sorted(unknown)}")
        kwargs = dict(values)
        for key in ("tile_grid", "tiles_per_region"):
            if key in kwargs:
                kwargs[key] = tuple(int(v) for v in kwargs[key])
        return cls(**kwargs)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TileRaster:
    tiles: dict[int, np.ndarray]
    side_length: int
    grid_width: int = 0

    def __post_init__(self):
        for tile_id, tile in self.tiles.items():
            if tile.shape != (self.side_length, self.side_length):
                raise DataError(f"tile {tile_id} has shape {tile.shape}, expected side {self.side_length}")


def describe_config_suite() -> dict[str, SynthConfig]:
    """The canonical synthetic countries used in the acceptance suite."""
    base = dict(n_regions=800, tile_grid=(100, 80), tiles_per_region=(3, 9))
    return {
        "rural-poverty": SynthConfig(
            name="rural-poverty", rural_share=0.56, target_rho=0.7, within_visibility=0.3, texture_noise=0.55, **base
        ),
        "hidden-urban-poor": SynthConfig(
            name="hidden-urban-poor",
            rural_share=0.5,
            target_rho=0.3,
            within_visibility=0.2,
            mask_urban_poor=0.25,
            **base,
        ),
        "high-visibility": SynthConfig(
            name="high-visibility", rural_share=0.5, target_rho=0.6, within_visibility=0.9, **base
        ),
    }


def calibrate_alpha(latent: np.ndarray, urban: np.ndarray, target_rho: float) -> tuple[float, float]:
    """Bisect the urban wealth shift until Spearman(wealth, urban) is near ``target_rho``.

    Returns ``(alpha, achieved_rho)``.
    """
    u = urban.astype(float)

    def rho(alpha):
        return spearman(alpha * u + latent, u)

    lo, hi = ALPHA_BRACKET
    rho_lo, rho_hi = rho(lo), rho(hi)
    if target_rho < rho_lo - RHO_TOLERANCE or target_rho > rho_hi + RHO_TOLERANCE:
        raise ConfigError(
            f"target_rho={target_rho} unreachable; achievable range is [{rho_lo:.3f}, {rho_hi:.3f}]"
        )
    best = (lo, rho_lo) if abs(rho_lo - target_rho) < abs(rho_hi - target_rho) else (hi, rho_hi)
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        r = rho(mid)
        if abs(r - target_rho) < abs(best[1] - target_rho):
            best = (mid, r)
        if abs(r - target_rho) <= 1e-3:
            break
        if r < target_rho:
            lo = mid
        else:
            hi = mid
    if abs(best[1] - target_rho) > RHO_TOLERANCE:
        raise ConfigError(f"bisection did not reach target_rho={target_rho}; best {best[1]:.3f}")
    return best


def snake_positions(width: int, height: int) -> list[tuple[int, int]]:
    """Grid cells in boustrophedon order, so consecutive cells are edge-adjacent."""
    cells = []
    for y in range(height):
        xs = range(width) if y % 2 == 0 else range(width - 1, -1, -1)
        cells.extend((x, y) for x in xs)
    return cells


def texture(buildup: float, side: int, pixel_noise: float, rng: np.random.Generator) -> np.ndarray:
    freq = 0.05 + 0.4 / (1.0 + math.exp(-buildup))
    axis = np.cos(2 * np.pi * freq * np.arange(side))
    tile = buildup + np.outer(axis, axis)
    if pixel_noise > 0:
        tile = tile + pixel_noise * rng.standard_normal((side, side))
    return tile


def generate_country(cfg: SynthConfig) -> tuple[RegionDataset, TileRaster]:
    cfg.validate()
    rng = stream(cfg.seed, "synth")
    n = cfg.n_regions
    n_rural = round_half_up(cfg.rural_share * n)
    urban = np.ones(n, dtype=bool)
    urban[rng.permutation(n)[:n_rural]] = False
    latent = rng.standard_normal(n)
    nuisance = rng.standard_normal(n)
    alpha, _ = calibrate_alpha(latent, urban, cfg.target_rho)
    raw = alpha * urban + latent

    vis = np.full(n, cfg.within_visibility)
    if cfg.mask_urban_poor > 0:
        urban_idx = np.flatnonzero(urban)
        k = int(math.floor(cfg.mask_urban_poor * len(urban_idx)))
        vis[urban_idx[np.argsort(latent[urban_idx], kind="stable")[:k]]] = 0.0
    u = urban.astype(float)
    buildup = u * (1 + vis * latent) + (1 - u) * vis * latent + cfg.texture_noise * np.sqrt(1 - vis**2) * nuisance

    width, height = cfg.tile_grid
    positions = snake_positions(width, height)
    lo, hi = cfg.tiles_per_region
    counts = rng.integers(lo, hi + 1, size=n)
    population = rng.integers(500, 5001, size=n).astype(float)

    tiles: dict[int, np.ndarray] = {}
    regions = []
    cursor = 0
    width_digits = len(str(n - 1))
    for i in range(n):
        cells = positions[cursor : cursor + counts[i]]
        cursor += counts[i]
        weights = rng.uniform(0.25, 1.0, size=len(cells))
        weights /= weights.sum()
        tile_ids = [y * width + x for x, y in cells]
        for tile_id in tile_ids:
            tiles[tile_id] = texture(buildup[i], cfg.tile_side, cfg.pixel_noise, rng).astype(np.float32)
        regions.append(
            Region(
                id=f"r{i:0{width_digits}d}",
                urban=bool(urban[i]),
                wealth=float(raw[i]),
                raw_wealth=float(raw[i]),
                population=float(population[i]),
                tile_overlaps=tuple((t, float(w)) for t, w in zip(tile_ids, weights)),
                geometry=tuple(cells),
            )
        )
    dataset = standardize_labels(RegionDataset(tuple(regions), name=cfg.name))
    return dataset, TileRaster(tiles, cfg.tile_side, width)


# --- raster IO ---------------------------------------------------------------

def write_raster(raster: TileRaster, path: str | Path) -> list[Path]:
    """Binary tiles (magic, side, count, float32 row-major tiles) plus a CSV index."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = sorted(raster.tiles)
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<ii", raster.side_length, len(ids)))
        for tile_id in ids:
            fh.write(np.ascontiguousarray(raster.tiles[tile_id], dtype="<f4").tobytes())
    index_path = path.with_suffix(".index.csv")
    with open(index_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["position", "tile_id", "grid_width"])
        for pos, tile_id in enumerate(ids):
            writer.writerow([pos, tile_id, raster.grid_width])
    return [path, index_path]


def read_raster(path: str | Path) -> TileRaster:
    path = Path(path)
    index_path = path.with_suffix(".index.csv")
    if not path.exists() or not index_path.exists():
        raise MissingInputError(f"raster or its index missing: {path}")
    blob = path.read_bytes()
    if blob[:4] != RASTER_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}")
    side, count = struct.unpack("<ii", blob[4:12])
    data = np.frombuffer(blob, dtype="<f4", offset=12)
    if data.size != count * side * side:
        raise DataError(f"{path}: expected {count} tiles of side {side}, found {data.size} values")
    data = data.reshape(count, side, side).astype(np.float32)
    with open(index_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != count:
        raise DataError(f"{index_path}: {len(rows)} index rows for {count} tiles")
    tiles = {int(r["tile_id"]): data[int(r["position"])] for r in rows}
    grid_width = int(rows[0]["grid_width"]) if rows else 0
    return TileRaster(tiles, side, grid_width)
