"""Regenerate the byte-level regression outputs in tests/golden/.

Run from the repository root after an intentional change of numerical output:

    python scripts/update_golden.py
"""

import contextlib
import io
import json
import shutil
from pathlib import Path

from lossy_pdc.cli import main

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden"


def run(command: str, out: Path) -> str:
    args = json.loads((GOLDEN / "args.json").read_text())
    argv = [command, "--config", str(ROOT / args["config"]), "--out", str(out)]
    for item in args["overrides"]:
        argv += ["--set", item]
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(argv)
    if code != 0:
        raise SystemExit(f"{command} exited with {code}")
    return buf.getvalue()


def main_update():
    args = json.loads((GOLDEN / "args.json").read_text())
    for command in args["commands"]:
        target = GOLDEN / command
        if target.exists():
            shutil.rmtree(target)
        stdout = run(command, target)
        shutil.rmtree(target / "cache", ignore_errors=True)
        (target / "stdout.json").write_text(stdout, encoding="utf-8")
        print(f"{command}: {sorted(p.name for p in target.rglob('*') if p.is_file())}")


if __name__ == "__main__":
    main_update()
