"""Run manifests: the reproducibility record every subcommand writes.

A manifest captures the resolved configuration, inputs, outputs, and seed of
one run plus wall-clock timings per stage. Rerunning a subcommand with the
same resolved values reproduces the artifacts byte for byte; timings are the
only fields allowed to differ.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from . import __version__


class StageTimer:
    """Collects per-stage wall times and optional per-unit rates."""

    def __init__(self):
        self.stages: dict[str, dict] = {}

    def measure(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.start = time.perf_counter()
                return self

            def __exit__(self, *exc):
                timer.stages[name] = {"seconds": time.perf_counter() - self.start}
                return False

        return _Ctx()

    def set_rate(self, name: str, unit: str, count: int) -> None:
        stage = self.stages[name]
        if count > 0:
            stage[unit] = stage["seconds"] / count


def build_manifest(subcommand: str, config: dict, inputs: dict, outputs: dict,
                   seed, threads: int, timer: StageTimer) -> dict:
    return {
        "tool": "originid",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "threads": threads,
        "timings": timer.stages,
    }


def write_manifest(out_dir, manifest: dict) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def strip_timings(manifest: dict) -> dict:
    out = dict(manifest)
    out.pop("timings", None)
    return out
