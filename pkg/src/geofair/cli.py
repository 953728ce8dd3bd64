"""``geofair`` command line: synth, featurize, audit, aggregate, report.

Exit codes: 0 success, 2 configuration error, 3 missing input, 4 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, geoprep, pipeline
from .config import PipelineConfig, load_config, resolve_out
from .errors import ConfigError, GeofairError, MissingInputError
from .report import build_report
from .tables import write_json, write_table

log = logging.getLogger("geofair")


def _manifest(out: Path, command: str, cfg: PipelineConfig, **extra) -> Path:
    return write_json(out / "manifest.json", {"command": command, "version": __version__, "config": cfg.as_dict(), **extra})


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["base_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        overrides["n_runs"] = args.runs
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    return replace(cfg, **overrides)


def cmd_synth(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, synth={**cfg.synth, "seed": str(args.seed)})
    cfg.validate()
    out = resolve_out(args.out, cfg)
    written = []
    for name in cfg.datasets:
        if name not in pipeline.describe_config_suite():
            raise ConfigError(f"datasets: synth only generates presets, got {name!r}")
        written += pipeline.write_synth(cfg, name, out)
    _manifest(out, "synth", cfg, files=sorted(p.name for p in written))
    print(f"wrote {len(written)} files to {out}")
    return 0


def cmd_featurize(args) -> int:
    cfg = _config(args).validate()
    out = resolve_out(args.out, cfg)
    written = []
    for name in cfg.datasets:
        written += pipeline.write_featurized(cfg, name, out)
    _manifest(out, "featurize", cfg, files=sorted(p.name for p in written))
    print(f"wrote {len(written)} files to {out}")
    return 0


def cmd_audit(args) -> int:
    cfg = _config(args).validate()
    out = resolve_out(args.out, cfg)
    summary, rho, dirs, errors = [], [], [], []
    for name in cfg.datasets:
        key = pipeline.dataset_key(name)
        inputs = pipeline.prepare(cfg, name)
        info, failed = pipeline.audit_dataset(cfg, inputs, out / key)
        errors += failed
        dirs.append(key)
        summary += pipeline.summary_rows(key, info["summaries"])
        rho += pipeline.rho_rows(key, info)
        print(f"{key}: {info['n_completed']}/{cfg.n_runs} runs completed")
    write_table(out / "summary.csv", summary, pipeline.SUMMARY_COLUMNS)
    write_table(out / "rho_vs_performance.csv", rho, pipeline.RHO_COLUMNS)
    _manifest(out, "audit", cfg, dataset_dirs=dirs)
    if errors:
        for err in errors:
            print(f"error: {err}", file=sys.stderr)
        return max(err.exit_code for err in errors) or 1
    return 0


def cmd_aggregate(args) -> int:
    cfg = _config(args)
    units_path = args.units or cfg.units
    if not units_path:
        raise ConfigError("aggregate needs a units table (positional argument or 'units' in the config)")
    out = resolve_out(args.out, cfg)
    units = geoprep.read_units(units_path, cfg.adjacency or None)
    result = geoprep.aggregate_rural_units(units, cfg.area_threshold, cfg.max_constituents)
    stem = Path(units_path).stem
    geoprep.write_units(result.units, out / f"{stem}_merged.csv")
    geoprep.write_lineage(result.lineage, out / f"{stem}_lineage.csv")
    line = geoprep.summary_line(units, result.units)
    _manifest(out, "aggregate", cfg, summary=line, unmergeable=list(result.unmergeable))
    print(line)
    return 0


def cmd_report(args) -> int:
    result_dir = Path(args.results) if args.results else resolve_out(None, load_config(args.config))
    written = build_report(result_dir, args.out)
    print(f"wrote {len(written)} plot-data tables to {written[0].parent}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geofair", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, runs=False):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", help="output directory (falls back to the config, then $GEOFAIR_OUT)")
        p.add_argument("--seed", type=int, help="base seed")
        if runs:
            p.add_argument("--runs", type=int, help="number of seeded runs")
            p.add_argument("--jobs", type=int, help="parallel worker processes")
        return p

    common(sub.add_parser("synth", help="generate synthetic countries")).set_defaults(func=cmd_synth)
    common(sub.add_parser("featurize", help="write region feature matrices")).set_defaults(func=cmd_featurize)
    common(sub.add_parser("audit", help="run repeated experiments and write audit tables"), runs=True).set_defaults(
        func=cmd_audit
    )
    agg = common(sub.add_parser("aggregate", help="merge small rural units"))
    agg.add_argument("units", nargs="?", help="unit table (adjacency file defaults to <stem>_adjacency.csv)")
    agg.set_defaults(func=cmd_aggregate)
    rep = sub.add_parser("report", help="write plot-data tables from an audit directory")
    rep.add_argument("results", nargs="?", help="audit output directory")
    rep.add_argument("--config", help="config whose output directory holds the audit")
    rep.add_argument("--out", help="where to write the tables (default: the audit directory)")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except GeofairError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return MissingInputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
