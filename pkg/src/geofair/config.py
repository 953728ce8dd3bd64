"""Pipeline configuration: a flat ``key = value`` file, validated on load.

Keys prefixed ``synth.`` override fields of every synthetic preset named in
``datasets``. Lists are comma separated. Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, MissingInputError
from .features import DEFAULT_MAX_TILES, DEFAULT_N_FILTERS, DEFAULT_PATCH_SIZE
from .geoprep import DEFAULT_AREA_THRESHOLD, DEFAULT_MAX_CONSTITUENTS, DEFAULT_MAX_PER_GROUP
from .model import DEFAULT_LAMBDA_GRID
from .policy import DEFAULT_BUDGET
from .synth import SynthConfig, describe_config_suite

OUT_ENV = "GEOFAIR_OUT"
_SECTION = "geofair"


@dataclass(frozen=True)
class PipelineConfig:
    datasets: tuple[str, ...] = ("rural-poverty",)
    synth: dict = field(default_factory=dict)
    apply_log: bool = False
    n_filters: int = DEFAULT_N_FILTERS
    patch_size: int = DEFAULT_PATCH_SIZE
    max_tiles: int = DEFAULT_MAX_TILES
    bank_seed: int = 0
    aggregation_seed: int = 0
    train_fraction: float = 0.75
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    cv_folds: int = 3
    budget_fraction: float = DEFAULT_BUDGET
    n_thresholds: int = 100
    n_runs: int = 100
    base_seed: int = 0
    jobs: int = 1
    max_per_group: int = DEFAULT_MAX_PER_GROUP
    representation_seed: int = 0
    units: str = ""
    adjacency: str = ""
    area_threshold: float = DEFAULT_AREA_THRESHOLD
    max_constituents: int = DEFAULT_MAX_CONSTITUENTS
    out: str = ""

    def validate(self) -> "PipelineConfig":
        if not self.datasets:
            raise ConfigError("datasets: at least one dataset is required")
        presets = describe_config_suite()
        for name in self.datasets:
            if name in presets:
                synth_config(self, name).validate()
            elif not Path(name).exists():
                raise MissingInputError(f"datasets: {name!r} is neither a synthetic preset nor an existing file")
        checks = [
            ("n_filters", self.n_filters >= 1),
            ("patch_size", self.patch_size >= 1),
            ("max_tiles", self.max_tiles >= 1),
            ("train_fraction", 0 < self.train_fraction < 1),
            ("lambda_grid", len(self.lambda_grid) > 0 and all(v >= 0 for v in self.lambda_grid)),
            ("cv_folds", self.cv_folds >= 2),
            ("budget_fraction", 0 < self.budget_fraction <= 1),
            ("n_thresholds", self.n_thresholds >= 1),
            ("n_runs", self.n_runs >= 1),
            ("jobs", self.jobs >= 1),
            ("max_per_group", self.max_per_group >= 2),
            ("area_threshold", self.area_threshold > 0),
            ("max_constituents", self.max_constituents >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"{name}: invalid value {getattr(self, name)!r}")
        return self

    @property
    def thresholds(self) -> tuple[float, ...]:
        return tuple(round(i / self.n_thresholds, 10) for i in range(1, self.n_thresholds + 1))

    def as_dict(self) -> dict:
        out = asdict(self)
        del out["jobs"]  # execution detail; results do not depend on it
        out["datasets"] = list(self.datasets)
        out["lambda_grid"] = list(self.lambda_grid)
        out["synth"] = dict(sorted(self.synth.items()))
        out["synth_resolved"] = {
            name: synth_config(self, name).as_dict() for name in self.datasets if name in describe_config_suite()
        }
        return out


def synth_config(cfg: PipelineConfig, name: str) -> SynthConfig:
    base = describe_config_suite()[name]
    known = {f.name: f.type for f in fields(SynthConfig)}
    values = base.as_dict()
    for key, raw in cfg.synth.items():
        if key not in known or key == "name":
            raise ConfigError(f"synth.{key}: unknown synthetic config field")
        current = values[key]
        try:
            if isinstance(current, tuple):
                values[key] = tuple(int(v) for v in str(raw).split(","))
            elif isinstance(current, bool):
                values[key] = _bool(key, raw)
            elif isinstance(current, int):
                values[key] = int(raw)
            else:
                values[key] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"synth.{key}: cannot parse {raw!r}") from exc
    return SynthConfig.from_mapping(values)


def _bool(key: str, raw: str) -> bool:
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def parse_config(text: str, base_dir: str | Path = ".") -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    defaults = PipelineConfig()
    kinds = {f.name: getattr(defaults, f.name) for f in fields(PipelineConfig)}
    values: dict = {}
    synth: dict = {}
    for key, raw in parser.items(_SECTION):
        if key.startswith("synth."):
            synth[key[len("synth."):]] = raw
            continue
        if key not in kinds or key == "synth":
            raise ConfigError(f"{key}: unknown config key")
        current = kinds[key]
        try:
            if key == "datasets":
                values[key] = tuple(_resolve(item, base_dir) for item in _list(raw))
            elif key in ("units", "adjacency"):
                values[key] = _resolve(raw.strip(), base_dir) if raw.strip() else ""
            elif key == "lambda_grid":
                values[key] = tuple(float(v) for v in _list(raw))
            elif isinstance(current, bool):
                values[key] = _bool(key, raw)
            elif isinstance(current, int):
                values[key] = int(raw)
            elif isinstance(current, float):
                values[key] = float(raw)
            else:
                values[key] = raw.strip()
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
    return PipelineConfig(**values, synth=synth)


def _resolve(item: str, base_dir: str | Path) -> str:
    if item in describe_config_suite():
        return item
    path = Path(item)
    return str(path if path.is_absolute() else Path(base_dir) / path)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"config file not found: {path}")
    return parse_config(path.read_text(), path.parent)


def resolve_out(flag: str | None, cfg: PipelineConfig) -> Path:
    """Output directory: the --out flag, then the config, then $GEOFAIR_OUT."""
    for candidate in (flag, cfg.out, os.environ.get(OUT_ENV)):
        if candidate:
            return Path(candidate)
    raise ConfigError(f"no output directory: pass --out, set 'out' in the config, or set {OUT_ENV}")
