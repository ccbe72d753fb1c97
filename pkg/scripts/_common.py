"""Helpers shared by the experiment scripts."""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from wproj.reporting import emit_report, write_output

RESULTS = Path(__file__).resolve().parent.parent / "results"


def base_parser(description: str, default_config: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(Path(__file__).resolve().parent / "configs" / default_config))
    p.add_argument("--out", default=None, help="output stem (default results/<script name>)")
    p.add_argument("--quick", action="store_true", help="cut replications by 10x for a smoke run")
    return p


def load_config(path: str) -> dict:
    return json.loads(Path(path).read_text())


def save(report: dict, stem: str, out: str | None):
    """Write ``<stem>.json`` and ``<stem>.csv`` (rows only) under results/."""
    base = Path(out) if out else RESULTS / stem
    base.parent.mkdir(parents=True, exist_ok=True)
    write_output(emit_report(report, "json"), base.with_suffix(".json"))
    if report.get("rows"):
        write_output(emit_report(report, "csv"), base.with_suffix(".csv"))
    print(f"wrote {base.with_suffix('.json')}")


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
