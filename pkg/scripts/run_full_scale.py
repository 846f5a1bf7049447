#!/usr/bin/env python3
"""Full-scale run: N=150 random topology, bursty arrivals, 1e5 slots.

This mirrors the large experiment configuration and takes minutes per
policy; use run_unicast_sweep.py for quick desk-scale comparisons.
"""

import sys
from pathlib import Path

from qkdsim.cli import run_experiment
from qkdsim.config import preset_config


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs/unicast-full")
    workers = int(sys.argv[2]) if len(sys.argv) > 2 else 3
    manifest = run_experiment(preset_config("unicast-full"), out, workers=workers)
    print(f"wrote {len(manifest['files']) + 1} files to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
