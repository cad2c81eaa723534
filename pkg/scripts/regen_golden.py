#!/usr/bin/env python3
"""Regenerate the golden report files under tests/golden/.

Run after any intentional change to rendering or the pipeline's numeric
behavior, then review the diff before committing.
"""

import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests"))

from goldens import GOLDEN_FILES, run_golden_pipeline  # noqa: E402


def main() -> int:
    golden_dir = REPO / "tests" / "golden"
    golden_dir.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        out = run_golden_pipeline(Path(tmp))
        for name in GOLDEN_FILES:
            shutil.copyfile(out / name, golden_dir / name)
            print(f"wrote tests/golden/{name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
