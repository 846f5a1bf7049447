#!/usr/bin/env python3
"""Desk-scale delay/residual-key sweep across policies (N=20 random net).

Writes per-cell CSV/JSON plus summaries, then prints the per-load mean
delay of each policy.  Pass an output directory as the first argument.
"""

import json
import sys
from pathlib import Path

from qkdsim.cli import run_experiment
from qkdsim.config import preset_config


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs/unicast-sweep")
    cfg = preset_config("unicast-sweep")
    manifest = run_experiment(cfg, out)
    print(f"{'load':>6} " + " ".join(f"{p.label:>16}" for p in cfg.policies))
    for scale in cfg.rate_scales:
        row = [f"{scale:>6g}"]
        for pol in cfg.policies:
            sname = f"{cfg.name}_{pol.label}_s{scale:g}_summary_{manifest['config_hash']}.json"
            summary = json.loads((out / sname).read_text())
            row.append(f"{summary['mean_delay_mean']:>16.3f}")
        print(" ".join(row))
    print(f"outputs in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
