"""Monte-Carlo driver and metric file output."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ScenarioConfig
from .trial import CSV_FIELDS, MetricsRow, run_trial

_NUMERIC = ("ue_rmse", "va_rmse", "map_hausdorff", "beams_scanned", "beams_full",
            "assoc_accuracy", "va_misses")


@dataclass
class MonteCarloResult:
    table: list
    summary: dict   # slot -> {metric: (mean, std)}


def summarize(table: Sequence[MetricsRow]) -> dict:
    """Per-slot mean and sample std of every numeric metric (NaNs skipped)."""
    by_slot = {}
    for r in table:
        by_slot.setdefault(r.slot, []).append(r)
    out = {}
    for slot in sorted(by_slot):
        rows = by_slot[slot]
        stats = {}
        for name in _NUMERIC:
            v = np.array([getattr(r, name) for r in rows], dtype=float)
            v = v[np.isfinite(v)]
            if v.size == 0:
                stats[name] = (math.nan, math.nan)
            else:
                stats[name] = (float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0)
        out[slot] = stats
    return out


def _trial_job(args):
    config, seed, cheat = args
    return run_trial(config, seed, cheat)


def run_monte_carlo(config: ScenarioConfig, seeds: Optional[Sequence[int]] = None,
                    cheat_association: bool = False, workers: int = 1) -> MonteCarloResult:
    """Run every seed (in parallel when ``workers > 1``); rows ordered by seed.

    A failing trial raises ``TrialError`` carrying the seed.
    """
    seeds = sorted(config.seeds if seeds is None else seeds)
    if not seeds:
        raise ValueError("at least one seed required")
    jobs = [(config, s, cheat_association) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]
    table = [row for rows in results for row in rows]
    return MonteCarloResult(table, summarize(table))


def _row_values(r: MetricsRow) -> dict:
    d = asdict(r)
    return {k: d[k] for k in CSV_FIELDS}


def write_metrics(table: Sequence[MetricsRow], path, fmt: str = "csv") -> Path:
    """Write the table as CSV (fixed header) or as a JSON array of objects.

    Floats are written with ``repr`` so a round trip is exact.
    """
    path = Path(path)
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    try:
        if fmt == "csv":
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_FIELDS)
                for r in table:
                    w.writerow([repr(v) if isinstance(v, float) else v
                                for v in _row_values(r).values()])
        else:
            rows = [{k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                     for k, v in _row_values(r).items()} for r in table]
            path.write_text(json.dumps(rows, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
    return path


def read_metrics_csv(path) -> list:
    """Parse a metrics CSV back into ``MetricsRow`` objects."""
    casts = {"seed": int, "slot": int, "ue_id": int, "beams_scanned": int,
             "beams_full": int, "band": str}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [MetricsRow(**{k: casts.get(k, float)(v) for k, v in rec.items()})
                for rec in csv.DictReader(fh)]
