"""Rural-unit aggregation, asset indices and feature-space representation analyses.

Aggregation repeatedly takes the smallest small rural unit and merges it into
the rural neighbor it shares the longest boundary with, until every rural unit
is large enough, too populous in constituents, or has nowhere to go. Urban
units are never altered.
"""

from __future__ import annotations

import csv
import logging
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .data import RegionDataset
from .errors import DataError, DegenerateError, IntegrityError, MissingInputError, SchemaError
from .features import FeatureMatrix, sample_region_tiles
from .rng import stream

log = logging.getLogger(__name__)

DEFAULT_AREA_THRESHOLD = 25.0
DEFAULT_MAX_CONSTITUENTS = 25
DEFAULT_MAX_PER_GROUP = 2000


@dataclass(frozen=True)
class GeoUnit:
    id: str
    area: float
    population: float
    consumption: float
    urban: bool = False
    constituent_count: int = 1
    boundary_shared: Mapping[str, float] = field(default_factory=dict)
    district: str = ""

    def __post_init__(self):
        if not self.area > 0:
            raise DataError(f"unit {self.id!r}: area must be positive, got {self.area}")
        if self.population < 0:
            raise DataError(f"unit {self.id!r}: negative population {self.population}")
        if self.constituent_count < 1:
            raise DataError(f"unit {self.id!r}: constituent_count must be >= 1")
        if self.id in self.boundary_shared:
            raise IntegrityError(f"unit {self.id!r} lists itself as a neighbor")

    @property
    def neighbors(self) -> frozenset[str]:
        return frozenset(self.boundary_shared)


def check_adjacency(units: Sequence[GeoUnit]):
    """Neighbor relations must be symmetric with matching boundary lengths."""
    by_id = {}
    for unit in units:
        if unit.id in by_id:
            raise IntegrityError(f"duplicate unit id {unit.id!r}")
        by_id[unit.id] = unit
    for unit in units:
        for other, length in unit.boundary_shared.items():
            if other not in by_id:
                raise IntegrityError(f"unit {unit.id!r} borders unknown unit {other!r}")
            back = by_id[other].boundary_shared.get(unit.id)
            if back is None:
                raise IntegrityError(f"asymmetric adjacency: {unit.id!r} -> {other!r} has no reverse entry")
            if abs(back - length) > 1e-9 * max(1.0, abs(length)):
                raise IntegrityError(f"boundary {unit.id!r}/{other!r} differs by direction ({length} vs {back})")
            if length < 0:
                raise DataError(f"negative boundary length between {unit.id!r} and {other!r}")


@dataclass
class AggregationResult:
    units: list[GeoUnit]
    lineage: dict[str, tuple[str, ...]]
    unmergeable: tuple[str, ...]
    n_merges: int

    def rural(self) -> list[GeoUnit]:
        return [u for u in self.units if not u.urban]


def _merge(a: GeoUnit, b: GeoUnit) -> GeoUnit:
    # the larger constituent lends its id; ties go to the smaller id
    keep = min((a, b), key=lambda x: (-x.area, x.id))
    population = a.population + b.population
    if population > 0:
        consumption = (a.population * a.consumption + b.population * b.consumption) / population
    else:
        consumption = (a.area * a.consumption + b.area * b.consumption) / (a.area + b.area)
    boundary: dict[str, float] = defaultdict(float)
    for unit in (a, b):
        for other, length in unit.boundary_shared.items():
            if other not in (a.id, b.id):
                boundary[other] += length
    return GeoUnit(
        id=keep.id,
        area=a.area + b.area,
        population=population,
        consumption=consumption,
        urban=False,
        constituent_count=a.constituent_count + b.constituent_count,
        boundary_shared=dict(sorted(boundary.items())),
        district=keep.district,
    )


def aggregate_rural_units(
    units: Sequence[GeoUnit],
    area_threshold: float = DEFAULT_AREA_THRESHOLD,
    max_constituents: int = DEFAULT_MAX_CONSTITUENTS,
    trace: list | None = None,
) -> AggregationResult:
    """Merge small rural units into neighbors; returns units in input order of surviving ids.

    A rural unit is a candidate while its area is below ``area_threshold`` and
    it has fewer than ``max_constituents`` constituents. Merge targets must be
    rural, in the same district and below ``max_constituents``. A candidate
    with no eligible neighbor is set aside; it becomes a candidate again if a
    later merge absorbs it.

    If ``trace`` is a list, one ``(candidate, target, target_constituents)``
    tuple is appended per merge, with ``target`` None when set aside.
    """
    check_adjacency(units)
    live: dict[str, GeoUnit] = {u.id: u for u in units}
    order = {u.id: i for i, u in enumerate(units)}
    lineage = {u.id: (u.id,) for u in units}
    if not any(not u.urban for u in units):
        log.warning("no rural units; aggregation leaves the input unchanged")
        return AggregationResult(list(units), {}, (), 0)

    def is_candidate(u: GeoUnit) -> bool:
        return not u.urban and u.area < area_threshold and u.constituent_count < max_constituents

    candidates = {uid for uid, u in live.items() if is_candidate(u)}
    unmergeable: set[str] = set()
    merges = 0
    while candidates:
        cid = min(candidates, key=lambda i: (live[i].area, i))
        cand = live[cid]
        eligible = [
            live[n]
            for n in cand.boundary_shared
            if not live[n].urban
            and live[n].district == cand.district
            and live[n].constituent_count < max_constituents
        ]
        if not eligible:
            if trace is not None:
                trace.append((cid, None, None))
            candidates.discard(cid)
            unmergeable.add(cid)
            continue
        target = min(eligible, key=lambda t: (-cand.boundary_shared[t.id], t.id))
        if trace is not None:
            trace.append((cid, target.id, target.constituent_count))
        merged = _merge(cand, target)
        for old in (cand.id, target.id):
            del live[old]
            candidates.discard(old)
            unmergeable.discard(old)
        for other, length in merged.boundary_shared.items():
            nb = live[other]
            boundary = {k: v for k, v in nb.boundary_shared.items() if k not in (cand.id, target.id)}
            boundary[merged.id] = length
            live[other] = replace(nb, boundary_shared=dict(sorted(boundary.items())))
        live[merged.id] = merged
        order[merged.id] = min(order[cand.id], order[target.id])
        lineage[merged.id] = tuple(sorted(lineage.pop(cand.id) + lineage.pop(target.id)))
        if is_candidate(merged):
            candidates.add(merged.id)
        merges += 1
    out = sorted(live.values(), key=lambda u: order[u.id])
    return AggregationResult(out, {u.id: lineage[u.id] for u in out}, tuple(sorted(unmergeable)), merges)


def _median_area(units: Iterable[GeoUnit]) -> float:
    areas = [u.area for u in units]
    return statistics.median(areas) if areas else math.nan


def summary_line(before: Sequence[GeoUnit], after: Sequence[GeoUnit]) -> str:
    """Counts and median areas of rural units before and after aggregation."""
    rb = [u for u in before if not u.urban]
    ra = [u for u in after if not u.urban]
    return (
        f"before: {len(rb)} (median {_median_area(rb):.2f} km²) "
        f"after: {len(ra)} (median {_median_area(ra):.2f} km²)"
    )


def grid_units(
    cells: Mapping[str, Sequence[tuple[int, int]]],
    attributes: Mapping[str, Mapping],
    cell_area: float = 1.0,
) -> list[GeoUnit]:
    """Units from cell footprints on a grid.

    Area is cell count times ``cell_area``; shared boundary is the number of
    edge-adjacent cell pairs. ``attributes[id]`` supplies population,
    consumption and optionally urban and district.
    """
    owner: dict[tuple[int, int], str] = {}
    for uid, footprint in cells.items():
        for cell in footprint:
            cell = (int(cell[0]), int(cell[1]))
            if cell in owner:
                raise IntegrityError(f"cell {cell} claimed by both {owner[cell]!r} and {uid!r}")
            owner[cell] = uid
    shared: dict[str, dict[str, float]] = {uid: defaultdict(float) for uid in cells}
    for (x, y), uid in owner.items():
        for nb in ((x + 1, y), (x, y + 1)):
            other = owner.get(nb)
            if other is not None and other != uid:
                shared[uid][other] += 1.0
                shared[other][uid] += 1.0
    out = []
    for uid, footprint in cells.items():
        attrs = attributes[uid]
        out.append(
            GeoUnit(
                id=uid,
                area=len(footprint) * cell_area,
                population=float(attrs["population"]),
                consumption=float(attrs["consumption"]),
                urban=bool(attrs.get("urban", False)),
                constituent_count=int(attrs.get("constituent_count", 1)),
                boundary_shared=dict(sorted(shared[uid].items())),
                district=str(attrs.get("district", "")),
            )
        )
    return out


# --- unit IO -----------------------------------------------------------------

UNIT_COLUMNS = ("id", "district", "area", "population", "consumption", "urban", "constituent_count")


def write_units(units: Sequence[GeoUnit], path: str | Path, adjacency_path: str | Path | None = None) -> list[Path]:
    path = Path(path)
    adjacency_path = Path(adjacency_path) if adjacency_path else path.with_name(path.stem + "_adjacency.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(UNIT_COLUMNS)
        for u in units:
            writer.writerow(
                [u.id, u.district, repr(u.area), repr(u.population), repr(u.consumption), int(u.urban), u.constituent_count]
            )
    with open(adjacency_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["unit_id", "neighbor_id", "shared_length"])
        for u in units:
            for other, length in sorted(u.boundary_shared.items()):
                writer.writerow([u.id, other, repr(float(length))])
    return [path, adjacency_path]


def read_units(path: str | Path, adjacency_path: str | Path | None = None) -> list[GeoUnit]:
    path = Path(path)
    adjacency_path = Path(adjacency_path) if adjacency_path else path.with_name(path.stem + "_adjacency.csv")
    for p in (path, adjacency_path):
        if not p.exists():
            raise MissingInputError(f"input not found: {p}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in UNIT_COLUMNS if c not in (reader.fieldnames or []) and c != "district"]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        rows = list(reader)
    boundary: dict[str, dict[str, float]] = defaultdict(dict)
    with open(adjacency_path, newline="") as fh:
        for row in csv.DictReader(fh):
            boundary[row["unit_id"]][row["neighbor_id"]] = float(row["shared_length"])
    units = []
    for i, row in enumerate(rows):
        try:
            units.append(
                GeoUnit(
                    id=row["id"],
                    area=float(row["area"]),
                    population=float(row["population"]),
                    consumption=float(row["consumption"]),
                    urban=row["urban"].strip() in ("1", "true", "True"),
                    constituent_count=int(row["constituent_count"]),
                    boundary_shared=dict(sorted(boundary.get(row["id"], {}).items())),
                    district=row.get("district", "") or "",
                )
            )
        except ValueError as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"{path}: row {i + 1}: {exc}") from exc
    return units


def write_lineage(lineage: Mapping[str, Sequence[str]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["merged_id", "constituent_id"])
        for merged_id, members in lineage.items():
            for member in members:
                writer.writerow([merged_id, member])
    return path


# --- asset index -------------------------------------------------------------

def asset_index(assets) -> tuple[np.ndarray, float]:
    """First principal component of the centered asset table.

    Returns ``(scores, explained_share)``. Constant columns are dropped with a
    warning. Scores are signed to correlate positively with asset counts.
    """
    A = np.asarray(assets, dtype=float)
    if A.ndim != 2 or A.shape[1] < 2:
        raise ValueError(f"asset table needs at least 2 columns, got shape {A.shape}")
    keep = np.ptp(A, axis=0) > 0
    if not keep.any():
        raise DegenerateError("every asset column is constant")
    if not keep.all():
        log.warning("dropping %d constant asset column(s)", int((~keep).sum()))
    Ac = A[:, keep] - A[:, keep].mean(axis=0)
    evals, evecs = np.linalg.eigh(np.cov(Ac, rowvar=False).reshape(Ac.shape[1], Ac.shape[1]))
    evals = np.clip(evals, 0.0, None)
    share = float(evals[-1] / evals.sum())
    scores = Ac @ evecs[:, -1]
    direction = np.dot(scores - scores.mean(), A.sum(axis=1) - A.sum(axis=1).mean())
    if direction < 0 or (direction == 0 and evecs[np.argmax(np.abs(evecs[:, -1])), -1] < 0):
        scores = -scores
    return scores, share


# --- representation ----------------------------------------------------------

@dataclass(frozen=True)
class RepresentationReport:
    mean_dist_rural_rural: float = math.nan
    mean_dist_urban_urban: float = math.nan
    mean_dist_urban_rural: float = math.nan
    n_rural: int = 0
    n_urban: int = 0
    pca_projections: np.ndarray | None = None
    explained_variance_share: float = math.nan
    component_shares: tuple[float, float] = (math.nan, math.nan)

    def distance_rows(self) -> list[dict]:
        return [
            {"pair": "rural-rural", "mean_distance": self.mean_dist_rural_rural},
            {"pair": "urban-urban", "mean_distance": self.mean_dist_urban_urban},
            {"pair": "urban-rural", "mean_distance": self.mean_dist_urban_rural},
        ]


def _subsample(idx: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if len(idx) <= k:
        return idx
    return np.sort(rng.choice(idx, size=k, replace=False))


def distance_report(X, urban, max_per_group: int = DEFAULT_MAX_PER_GROUP, seed: int = 0) -> RepresentationReport:
    """Mean pairwise Euclidean distances within and across groups of rows."""
    X = np.asarray(X, dtype=float)
    urban = np.asarray(urban, dtype=bool)
    if len(X) != len(urban):
        raise ValueError(f"{len(X)} feature rows but {len(urban)} group labels")
    rural_idx, urban_idx = np.flatnonzero(~urban), np.flatnonzero(urban)
    if len(rural_idx) < 2 or len(urban_idx) < 2:
        raise DegenerateError(f"need at least 2 rows per group, got {len(urban_idx)} urban / {len(rural_idx)} rural")
    rng = stream(seed, "distance-subsample")
    rural_idx = _subsample(rural_idx, max_per_group, rng)
    urban_idx = _subsample(urban_idx, max_per_group, rng)
    R, U = X[rural_idx], X[urban_idx]
    return RepresentationReport(
        mean_dist_rural_rural=float(pdist(R).mean()),
        mean_dist_urban_urban=float(pdist(U).mean()),
        mean_dist_urban_rural=float(cdist(U, R).mean()),
        n_rural=len(rural_idx),
        n_urban=len(urban_idx),
    )


def feature_distance_report(
    features: FeatureMatrix, urban, max_per_group: int = DEFAULT_MAX_PER_GROUP, seed: int = 0
) -> RepresentationReport:
    return distance_report(features.X, urban, max_per_group, seed)


def single_tile_distance_report(
    tile_features: Mapping[int, np.ndarray],
    regions: RegionDataset,
    urban=None,
    max_per_group: int = DEFAULT_MAX_PER_GROUP,
    seed: int = 0,
) -> RepresentationReport:
    """As :func:`feature_distance_report`, on one randomly chosen tile per region."""
    picks = sample_region_tiles(regions, seed)
    missing = [rid for rid, t in picks.items() if t not in tile_features]
    if missing:
        raise DataError(f"sampled tiles missing features for region(s) {missing[:10]}")
    X = np.stack([tile_features[picks[rid]] for rid in regions.ids])
    return distance_report(X, regions.urban if urban is None else urban, max_per_group, seed)


def pca_project_2d(features) -> RepresentationReport:
    """Projections onto the top two principal components.

    Uses the Gram matrix when there are more columns than rows. Components
    with negligible variance project to zero.
    """
    X = np.asarray(getattr(features, "X", features), dtype=float)
    n, d = X.shape
    if n < 3 or d < 2:
        raise ValueError(f"PCA needs n >= 3 and d >= 2, got shape {X.shape}")
    Xc = X - X.mean(axis=0)
    if d > n:
        evals, evecs = np.linalg.eigh(Xc @ Xc.T)
        evals = np.clip(evals[::-1], 0.0, None)
        scores = evecs[:, ::-1][:, :2] * np.sqrt(evals[:2])
    else:
        evals, evecs = np.linalg.eigh(Xc.T @ Xc)
        evals = np.clip(evals[::-1], 0.0, None)
        scores = Xc @ evecs[:, ::-1][:, :2]
    total = float(evals.sum())
    if total <= 0:
        raise DegenerateError("features have zero total variance")
    tol = evals[0] * max(n, d) * np.finfo(float).eps
    top = [float(v) if v > tol else 0.0 for v in evals[:2]]
    scores = scores.copy()
    for j in range(2):
        if top[j] == 0.0:
            scores[:, j] = 0.0
            continue
        scores[:, j] -= scores[:, j].mean()
        if scores[np.argmax(np.abs(scores[:, j])), j] < 0:
            scores[:, j] = -scores[:, j]
    shares = (top[0] / total, top[1] / total)
    return RepresentationReport(pca_projections=scores, explained_variance_share=sum(shares), component_shares=shares)
