"""Run the acceptance criteria and print one [PASS]/[FAIL] line each; exit 1 if any fails."""
import pathlib
import runpy
import sys

if __name__ == "__main__":
    path = pathlib.Path(__file__).resolve().parents[1] / "tests" / "test_acceptance.py"
    sys.exit(runpy.run_path(str(path))["main"]())
