#!/usr/bin/env python3
"""Regenerate the frozen end-to-end fixture outputs under tests/fixtures/golden/.

Only rerun this when pipeline behavior changes intentionally; the acceptance
suite compares fresh runs byte-for-byte against these files.
"""

from __future__ import annotations

import shutil
import tempfile
from pathlib import Path

from gcqr.config import load_config
from gcqr.pipeline import cmd_reformulate

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "tests" / "fixtures"
GOLDEN = FIXTURES / "golden"
ARTIFACTS = ("guidecqr.run", "baseline.run", "reformulated.jsonl")


def main() -> None:
    config = load_config(FIXTURES / "fixture.toml")
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "out"
        report = cmd_reformulate(config.with_overrides(output_dir=out))
        if report.failures:
            raise SystemExit(f"fixture turns failed: {report.failures}")
        GOLDEN.mkdir(parents=True, exist_ok=True)
        for name in ARTIFACTS:
            shutil.copyfile(out / name, GOLDEN / name)
            print(f"wrote {GOLDEN / name}")


if __name__ == "__main__":
    main()
