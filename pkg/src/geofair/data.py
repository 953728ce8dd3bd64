"""Region datasets: types, delimited-text ingestion, label standardization, splits."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import stream
from .errors import DomainError, DegenerateError, IntegrityError, MissingInputError, ParseError, SchemaError

log = logging.getLogger(__name__)

OVERLAP_TOL = 1e-9
OVERLAP_WARN_TOL = 1e-6


@dataclass(frozen=True)
class Region:
    id: str
    urban: bool
    wealth: float
    raw_wealth: float
    population: float = 1.0
    tile_overlaps: tuple[tuple[int, float], ...] = ()
    geometry: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.population < 0:
            raise IntegrityError(f"region {self.id!r}: negative population {self.population}")
        if self.tile_overlaps:
            total = sum(w for _, w in self.tile_overlaps)
            if any(w < 0 for _, w in self.tile_overlaps):
                raise IntegrityError(f"region {self.id!r}: negative overlap weight")
            if abs(total - 1.0) > OVERLAP_TOL:
                raise IntegrityError(f"region {self.id!r}: overlap weights sum to {total!r}, expected 1")


@dataclass(frozen=True)
class LabelTransform:
    log_applied: bool = False
    mean: float = 0.0
    stddev: float = 1.0

    def forward(self, raw: np.ndarray) -> np.ndarray:
        t = np.log(raw) if self.log_applied else np.asarray(raw, dtype=float)
        return (t - self.mean) / self.stddev

    def inverse(self, w: np.ndarray) -> np.ndarray:
        t = np.asarray(w, dtype=float) * self.stddev + self.mean
        return np.exp(t) if self.log_applied else t


@dataclass(frozen=True)
class RegionDataset:
    regions: tuple[Region, ...]
    label_transform: LabelTransform | None = None
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        seen: set[str] = set()
        for r in self.regions:
            if r.id in seen:
                raise IntegrityError(f"duplicate region id {r.id!r}")
            seen.add(r.id)

    def __len__(self):
        return len(self.regions)

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.regions)

    @cached_property
    def index(self) -> dict[str, int]:
        return {rid: i for i, rid in enumerate(self.ids)}

    @cached_property
    def urban(self) -> np.ndarray:
        return np.array([r.urban for r in self.regions], dtype=bool)

    @cached_property
    def wealth(self) -> np.ndarray:
        return np.array([r.wealth for r in self.regions], dtype=float)

    @cached_property
    def raw_wealth(self) -> np.ndarray:
        return np.array([r.raw_wealth for r in self.regions], dtype=float)

    @cached_property
    def population(self) -> np.ndarray:
        return np.array([r.population for r in self.regions], dtype=float)

    @property
    def standardized(self) -> bool:
        return self.label_transform is not None

    def positions(self, ids: Iterable[str]) -> np.ndarray:
        return np.array([self.index[i] for i in ids], dtype=int)

    def check_auditable(self):
        n_urban = int(self.urban.sum())
        n_rural = len(self) - n_urban
        if n_urban < 2 or n_rural < 2:
            raise DegenerateError(
                f"{self.name}: need at least 2 urban and 2 rural regions, got {n_urban} urban / {n_rural} rural"
            )


@dataclass(frozen=True)
class Split:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int
    train_fraction: float


@dataclass(frozen=True)
class Schema:
    """Column names in the region table."""

    id: str = "id"
    urban: str = "urban"
    wealth: str = "wealth"
    population: str = "population"
    cells: str = "cells"


# --- ingestion ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_bool(text: str, row: int, column: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "t", "yes"):
        return True
    if t in ("0", "false", "f", "no"):
        return False
    raise ParseError(f"row {row}: column {column!r} is not a 0/1 flag: {text!r}")


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"row {row}: column {column!r} is not numeric: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}: column {column!r} is not finite: {text!r}")
    return value


def _parse_cells(text: str) -> tuple[tuple[int, int], ...] | None:
    text = text.strip()
    if not text:
        return None
    cells = []
    for item in text.split(";"):
        x, y = item.split(":")
        cells.append((int(x), int(y)))
    return tuple(cells)


def _sidecar_paths(path: Path) -> tuple[Path, Path]:
    return path.with_name(path.stem + "_tiles.csv"), path.with_name(path.stem + ".meta.json")


def read_overlaps(path: Path) -> dict[str, list[tuple[int, float]]]:
    overlaps: dict[str, list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"region_id", "tile_id", "weight"} - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"{path}: tile-overlap file missing column(s) {sorted(missing)}")
        for i, row in enumerate(reader):
            weight = _parse_float(row["weight"], i, "weight")
            if weight < 0:
                raise IntegrityError(f"{path} row {i}: negative overlap weight")
            overlaps.setdefault(row["region_id"], []).append((int(row["tile_id"]), weight))
    return overlaps


def _normalize_overlaps(rid: str, pairs: list[tuple[int, float]]) -> tuple[tuple[int, float], ...]:
    total = sum(w for _, w in pairs)
    if total <= 0:
        raise IntegrityError(f"region {rid!r}: tile overlap weights sum to zero")
    if abs(total - 1.0) <= OVERLAP_TOL:
        return tuple(pairs)
    if abs(total - 1.0) > OVERLAP_WARN_TOL:
        log.warning("region %r: overlap weights sum to %.6g, renormalizing", rid, total)
    return tuple((t, w / total) for t, w in pairs)


def load_dataset(
    path: str | Path,
    schema: Schema | None = None,
    overlaps_path: str | Path | None = None,
    name: str | None = None,
) -> RegionDataset:
    """Read a region table (plus optional tile-overlap and metadata sidecars).

    The wealth column is kept as ``raw_wealth``. If a ``<stem>.meta.json``
    sidecar records a label transform it is re-applied, otherwise ``wealth``
    equals ``raw_wealth`` and the dataset is unstandardized.
    """
    path = Path(path)
    schema = schema or Schema()
    if not path.exists():
        raise MissingInputError(f"region table not found: {path}")
    default_overlaps, meta_path = _sidecar_paths(path)
    if overlaps_path is None and default_overlaps.exists():
        overlaps_path = default_overlaps
    overlaps = read_overlaps(Path(overlaps_path)) if overlaps_path is not None else {}

    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    transform = LabelTransform(**meta["label_transform"]) if meta.get("label_transform") else None

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in (schema.id, schema.urban, schema.wealth, schema.population):
            if column not in header:
                raise SchemaError(f"{path}: missing required column {column!r}")
        has_cells = schema.cells in header
        for i, row in enumerate(reader):
            rid = row[schema.id]
            raw = _parse_float(row[schema.wealth], i, schema.wealth)
            rows.append(
                dict(
                    id=rid,
                    urban=_parse_bool(row[schema.urban], i, schema.urban),
                    raw_wealth=raw,
                    population=_parse_float(row[schema.population], i, schema.population),
                    geometry=_parse_cells(row[schema.cells]) if has_cells else None,
                )
            )

    raw = np.array([r["raw_wealth"] for r in rows])
    wealth = transform.forward(raw) if transform else raw
    regions = []
    for r, w in zip(rows, wealth):
        pairs = overlaps.get(r["id"], [])
        regions.append(
            Region(
                id=r["id"],
                urban=r["urban"],
                wealth=float(w),
                raw_wealth=r["raw_wealth"],
                population=r["population"],
                tile_overlaps=_normalize_overlaps(r["id"], pairs) if pairs else (),
                geometry=r["geometry"],
            )
        )
    unknown = set(overlaps) - {r.id for r in regions}
    if unknown:
        raise IntegrityError(f"tile overlaps reference unknown region ids: {sorted(unknown)[:5]}")
    return RegionDataset(tuple(regions), transform, name or meta.get("name") or path.stem)


def write_dataset(dataset: RegionDataset, path: str | Path) -> list[Path]:
    """Write the region table and its sidecars; returns every path written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    overlaps_path, meta_path = _sidecar_paths(path)
    with_cells = any(r.geometry for r in dataset.regions)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "urban", "wealth", "population"] + (["cells"] if with_cells else []))
        for r in dataset.regions:
            row = [r.id, int(r.urban), _fmt(r.raw_wealth), _fmt(r.population)]
            if with_cells:
                row.append(";".join(f"{x}:{y}" for x, y in r.geometry or ()))
            writer.writerow(row)
    written = [path]
    if any(r.tile_overlaps for r in dataset.regions):
        with open(overlaps_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["region_id", "tile_id", "weight"])
            for r in dataset.regions:
                for tile_id, weight in r.tile_overlaps:
                    writer.writerow([r.id, tile_id, _fmt(weight)])
        written.append(overlaps_path)
    meta = {"name": dataset.name}
    if dataset.label_transform is not None:
        t = dataset.label_transform
        meta["label_transform"] = {"log_applied": t.log_applied, "mean": t.mean, "stddev": t.stddev}
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(meta_path)
    return written


# --- labels and splits -------------------------------------------------------

def standardize_labels(dataset: RegionDataset, apply_log: bool = False) -> RegionDataset:
    """Return a copy with zero-mean, unit (population) variance wealth."""
    raw = dataset.raw_wealth
    if apply_log:
        bad = [r.id for r in dataset.regions if not r.raw_wealth > 0]
        if bad:
            raise DomainError(f"log transform needs positive wealth; offending ids: {bad[:10]}")
        t = np.log(raw)
    else:
        t = raw
    mean = float(np.mean(t))
    std = float(np.std(t))
    if not std > 0:
        raise DegenerateError(f"{dataset.name}: wealth labels have zero variance")
    transform = LabelTransform(apply_log, mean, std)
    w = transform.forward(raw)
    regions = tuple(replace(r, wealth=float(v)) for r, v in zip(dataset.regions, w))
    return RegionDataset(regions, transform, dataset.name)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(dataset: RegionDataset, train_fraction: float = 0.75, seed: int = 0) -> Split:
    """Uniform random train/test split; ids keep dataset order within each side."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    if n < 4:
        raise ValueError(f"need at least 4 regions to split, got {n}")
    k = round_half_up(train_fraction * n)
    perm = stream(seed, "split").permutation(n)
    in_train = np.zeros(n, dtype=bool)
    in_train[perm[:k]] = True
    ids = dataset.ids
    train = tuple(ids[i] for i in range(n) if in_train[i])
    test = tuple(ids[i] for i in range(n) if not in_train[i])
    return Split(train, test, seed, train_fraction)


def subset(dataset: RegionDataset, ids: Sequence[str]) -> RegionDataset:
    return RegionDataset(tuple(dataset.regions[dataset.index[i]] for i in ids), dataset.label_transform, dataset.name)
