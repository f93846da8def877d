#!/usr/bin/env python3
"""Audit a training run's particle lifecycle curve.

Usage:
  python3 tools/audit_lifecycle.py runs/fall --pretty
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from hybridfield.evaluation import lifecycle_curve_problems  # noqa: E402
from hybridfield.types import LifecycleEvent  # noqa: E402


def _load_events(path: Path) -> list[LifecycleEvent]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [LifecycleEvent(**{name: int(row[name]) for name in LifecycleEvent.CSV_COLUMNS}) for row in rows]


def _capacity(run_dir: Path) -> int:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        raise SystemExit(f"Run manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    model = (manifest.get("metadata") or {}).get("model") or {}
    return int(model.get("capacity") or manifest.get("config", {}).get("particles") or 0)


def audit_run(run_dir: Path) -> dict[str, Any]:
    events = _load_events(run_dir / "lifecycle.csv")
    capacity = _capacity(run_dir)
    removed = sum(e.removed for e in events)
    return {
        "run": str(run_dir),
        "capacity": capacity,
        "events": len(events),
        "removed_total": removed,
        "removed_free_space": sum(e.removed_free_space for e in events),
        "removed_immobile": sum(e.removed_immobile for e in events),
        "resampled_curve": [e.resampled for e in events],
        "final_alive": events[-1].alive if events else capacity,
        "problems": lifecycle_curve_problems(events, capacity),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description="Audit the removal/resampling curve of a training run.")
    parser.add_argument("run_dir", help="Run directory written by `hybridfield train`.")
    parser.add_argument("--pretty", action="store_true", help="Pretty-print JSON output.")
    args = parser.parse_args()

    run_dir = Path(args.run_dir)
    if not (run_dir / "lifecycle.csv").is_file():
        raise SystemExit(f"No lifecycle.csv in {run_dir}")

    report = audit_run(run_dir)
    if args.pretty:
        print(json.dumps(report, indent=2, ensure_ascii=False))
    else:
        print(json.dumps(report, ensure_ascii=False))
    return 1 if report["problems"] else 0


if __name__ == "__main__":
    raise SystemExit(main())
