#!/usr/bin/env python3
"""Generates the shipped ratio-4 fixture with wrtool and checks that the
nearest-centroid oracle separates its writers (accuracy above 0.99)."""
import argparse
import shutil
import subprocess
import sys
from pathlib import Path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wrtool", required=True)
    ap.add_argument("--oracle", required=True)
    ap.add_argument("--fixtures", required=True)
    ap.add_argument("--workdir", required=True)
    args = ap.parse_args()

    work = Path(args.workdir)
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)
    status = 0
    for spec, bound in (("synth_r4.json", 0.99),):
        out = work / Path(spec).stem
        subprocess.run([args.wrtool, "synth", "--config", str(Path(args.fixtures) / spec), "--out", str(out)],
                       check=True, stdout=subprocess.DEVNULL)
        r = subprocess.run([sys.executable, args.oracle, str(out / "manifest.json"), "--min-accuracy", str(bound)],
                           capture_output=True, text=True)
        print(f"{spec}: {r.stdout.strip()}")
        status |= r.returncode
    return status


if __name__ == "__main__":
    sys.exit(main())
