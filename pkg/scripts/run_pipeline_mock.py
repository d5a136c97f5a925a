#!/usr/bin/env python3
"""Run the whole pipeline offline against the echo mock provider.

    python3 scripts/run_pipeline_mock.py runs/mock-demo
    python3 scripts/run_pipeline_mock.py runs/mock-demo --corrupt-first --eval

The echo mock answers with the kept sequences moved to the new scene.  With
``--corrupt-first`` its first reply carries one device/control mismatch so
the repair loop has something to fix.  Evaluation is skipped unless
``--eval`` is given because it trains several autoencoders.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from behaviorsynth.cli import main as cli_main


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", nargs="?", default="runs/mock-demo", help="run directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--copies", type=int, default=4, help="copies per fixture pattern")
    p.add_argument("--corrupt-first", action="store_true")
    p.add_argument("--eval", action="store_true", help="also run the evaluation stage")
    args = p.parse_args(argv)

    cli_args = ["pipeline", "--out", args.out, "--seed", str(args.seed),
                "--set", f"fixture.copies_per_pattern={args.copies}",
                "--set", "generation.provider.kind=mock",
                "--set", "generation.provider.mock_mode=echo",
                "--set", f"generation.provider.mock_corrupt_first={json.dumps(args.corrupt_first)}"]
    if not args.eval:
        cli_args.append("--no-eval")
    code = cli_main(cli_args)

    manifest = json.loads((Path(args.out) / "manifest.json").read_text(encoding="utf-8"))
    print(f"status: {manifest['status']} (exit {code})")
    for stage in manifest["stages"]:
        print(f"  {stage['name']}: {stage['status']}")
        for art in stage["artifacts"]:
            print(f"    {art['path']}  {art['sha256'][:12]}")
    report = Path(args.out) / "generate" / "validation_report.json"
    if report.is_file():
        r = json.loads(report.read_text(encoding="utf-8"))
        print(f"generated {r['accepted']} sequences, repair rounds {r['repair_rounds']}, clean={r['clean']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
