"""Regenerate the committed golden outputs for the toy pipeline.

Run from the repository root after any intentional change to pipeline
behavior, then review the diff before committing:

    python scripts/regen_golden.py
"""
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from test_acceptance import GOLDEN_BYTE_FILES, run_toy_pipeline  # noqa: E402

GOLDEN_DIR = ROOT / "tests" / "golden"


def main() -> None:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        out = run_toy_pipeline(Path(tmp))
        for name in GOLDEN_BYTE_FILES + ["report.json"]:
            shutil.copyfile(out / name, GOLDEN_DIR / name)
            print(f"wrote tests/golden/{name}")


if __name__ == "__main__":
    main()
