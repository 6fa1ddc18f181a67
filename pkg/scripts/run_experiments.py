#!/usr/bin/env python3
"""Run the bundled experiment configs end to end.

Each run leaves a self-describing directory (solution tables, coupled
samples, density overlays, manifest with content hashes) under the config's
`out` path, or under --out-root if given.  Reruns are byte-identical, so a
diff of two run directories is a real regression signal.
"""

import argparse
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from zvonkin.harness import load_config, run_pipeline

CONFIGS = ("linear", "rough", "brownian")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", default=list(CONFIGS),
                    help=f"configs to run (default: {' '.join(CONFIGS)})")
    ap.add_argument("--out-root", type=Path,
                    help="redirect outputs under this directory")
    args = ap.parse_args()

    failures = []
    for name in args.names or CONFIGS:
        path = REPO / "configs" / f"{name}.json"
        cfg = load_config(path)
        out = args.out_root / name if args.out_root else None
        print(f"=== {name} ({path}) ===")
        try:
            where = run_pipeline(cfg, out_dir=out)
        except Exception as e:
            print(f"    failed: {e}")
            failures.append(name)
            continue
        print(f"    artifacts in {where}\n")
    if failures:
        print(f"failed: {', '.join(failures)}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
