"""CSV/JSON emission and manifest re-runs."""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .. import __version__
from .config import ScenarioConfig
from .runner import run_scenario

RECORD_COLUMNS = ("scenario", "variant", "sweep_value", "seed", "metric", "solve_ms",
                  "n_not_optimal", "max_abs_u", "max_abs_du", "error")
SUMMARY_COLUMNS = ("scenario", "sweep_value", "variant", "median", "p10", "p90", "n", "n_failed")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(getattr(row, c)) for c in columns])


def emit(records, stats, path, config: ScenarioConfig, variants=None) -> dict:
    """Write ``records.csv``, ``summary.csv`` and ``manifest.json`` into ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "records": out / "records.csv",
        "summary": out / "summary.csv",
        "manifest": out / "manifest.json",
    }
    _write_csv(files["records"], RECORD_COLUMNS, records)
    _write_csv(files["summary"], SUMMARY_COLUMNS, stats)
    manifest = {
        "version": __version__,
        "config": config.to_dict(),
        "variants": list(config.variants if variants is None else variants),
        "seeds": config.seeds,
        "sweep_values": config.points,
    }
    files["manifest"].write_text(json.dumps(manifest, indent=2))
    return files


def load_manifest(path):
    data = json.loads(Path(path).read_text())
    return ScenarioConfig.from_dict(data["config"]), tuple(data["variants"])


def rerun_manifest(path, workers=None) -> list:
    cfg, variants = load_manifest(path)
    return run_scenario(cfg, variants=variants, workers=workers)


def read_records(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
