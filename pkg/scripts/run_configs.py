"""Run every experiment file in configs/ through the CLI and print a one-line summary each."""
import json
import sys
from pathlib import Path

from contspin.cli import main

ROOT = Path(__file__).resolve().parents[1]
KEYS = ("passed", "pass", "moment_bound_pass", "violations", "max_violation_every_step", "means_pass",
        "rate_pass", "containment", "max_abs_z")


def summary(out: Path) -> str:
    rep = json.loads((out / "report.json").read_text())
    return ", ".join(f"{k}={rep[k]}" for k in KEYS if k in rep) or "ok"


if __name__ == "__main__":
    names = sys.argv[1:] or sorted(p.stem for p in (ROOT / "configs").glob("*.toml"))
    for name in names:
        out = ROOT / "runs" / name
        code = main(["--config", str(ROOT / "configs" / f"{name}.toml"), "--out", str(out)])
        print(f"{name:>16}  exit {code}  {summary(out) if code == 0 else ''}")
