"""Experiment runner CLI.

``run`` executes every (policy, rate scale, seed) cell of a config or
preset, writing one CSV time series and one JSON aggregate per cell, a
summary JSON per (policy, scale) over seeds, and a manifest listing every
emitted file together with the config hash.  ``compare`` joins summaries
from several finished run directories into one CSV keyed by rate scale.
Outputs carry no timestamps: identical config and seed give byte-identical
files.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from pathlib import Path

from .analysis import summarize
from .config import ConfigError, ExperimentConfig, PRESETS, preset_config
from .engine import simulate

__all__ = ["main", "run_experiment", "compare_runs"]


def _cell_stem(cfg: ExperimentConfig, label: str, scale: float, seed: int) -> str:
    return f"{cfg.name}_{label}_s{scale:g}_seed{seed}_{cfg.config_hash()}"


def _run_cell(args: tuple[dict, int, float, int]):
    doc, pol_idx, scale, seed = args
    cfg = ExperimentConfig.from_dict(doc)
    pol = cfg.policies[pol_idx]
    record = simulate(
        cfg.graph.build(),
        cfg.build_classes(scale),
        pol.build(),
        keys=cfg.keys.build(),
        scheduler=cfg.scheduler,
        horizon=cfg.horizon,
        seed=seed,
        queue_cap=cfg.queue_cap,
        record_series=cfg.record_series,
        series_stride=cfg.series_stride,
        record_drift=cfg.record_drift,
    )
    return pol_idx, scale, seed, record


def run_experiment(cfg: ExperimentConfig, out_dir: Path, workers: int = 1) -> dict:
    """Execute all cells, write outputs, and return the manifest dict."""
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = cfg.to_dict()
    jobs = [
        (doc, pol_idx, scale, seed)
        for pol_idx in range(len(cfg.policies))
        for scale in cfg.rate_scales
        for seed in cfg.seeds
    ]
    results: dict[tuple[int, float, int], object] = {}
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for pol_idx, scale, seed, record in pool.map(_run_cell, jobs):
                results[(pol_idx, scale, seed)] = record
    else:
        for job in jobs:
            pol_idx, scale, seed, record = _run_cell(job)
            results[(pol_idx, scale, seed)] = record

    files: list[str] = []
    summaries: dict[str, dict] = {}
    for pol_idx, pol in enumerate(cfg.policies):
        for scale in cfg.rate_scales:
            cell_records = []
            for seed in cfg.seeds:
                record = results[(pol_idx, scale, seed)]
                stem = _cell_stem(cfg, pol.label, scale, seed)
                if record.series is not None:
                    (out_dir / f"{stem}.csv").write_bytes(record.to_csv_bytes())
                    files.append(f"{stem}.csv")
                (out_dir / f"{stem}.json").write_bytes(record.to_json_bytes())
                files.append(f"{stem}.json")
                cell_records.append(record)
            summary = summarize(cell_records)
            sname = f"{cfg.name}_{pol.label}_s{scale:g}_summary_{cfg.config_hash()}.json"
            payload = summary.to_dict()
            payload["rate_scale"] = scale
            (out_dir / sname).write_text(
                json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )
            files.append(sname)
            summaries[f"{pol.label}|{scale:g}"] = payload

    manifest = {
        "name": cfg.name,
        "config_hash": cfg.config_hash(),
        "policies": [p.label for p in cfg.policies],
        "rate_scales": list(cfg.rate_scales),
        "seeds": list(cfg.seeds),
        "files": sorted(files),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


def compare_runs(run_dirs: list[Path], out_path: Path) -> None:
    """Join per-scale summary metrics of several runs into one CSV."""
    if len(run_dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    manifests = []
    for d in run_dirs:
        mpath = d / "manifest.json"
        if not mpath.exists():
            raise ConfigError(f"{d}: not a finished run directory (no manifest.json)")
        manifests.append(json.loads(mpath.read_text(encoding="utf-8")))
    axes = [tuple(m["rate_scales"]) for m in manifests]
    if len(set(axes)) != 1:
        raise ConfigError(f"mismatched sweep axes across runs: {axes}")
    scales = axes[0]

    columns: list[tuple[str, dict[float, dict]]] = []
    for d, m in zip(run_dirs, manifests):
        for label in m["policies"]:
            per_scale = {}
            for scale in scales:
                sname = f"{m['name']}_{label}_s{scale:g}_summary_{m['config_hash']}.json"
                per_scale[scale] = json.loads((d / sname).read_text(encoding="utf-8"))
            columns.append((f"{m['name']}:{label}", per_scale))

    metrics = ("delivered_rate_mean", "mean_delay_mean", "residual_keys_mean")
    header = ["rate_scale"]
    for col_label, _ in columns:
        header.extend(f"{metric}__{col_label}" for metric in metrics)
    lines = [",".join(header)]
    for scale in scales:
        row = [f"{scale:g}"]
        for _, per_scale in columns:
            s = per_scale[scale]
            for metric in metrics:
                v = s[metric]
                row.append("" if v is None else repr(v))
        lines.append(",".join(row))
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="qkdsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a config file or a named preset")
    src = p_run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="path to a JSON experiment config")
    src.add_argument("--preset", choices=sorted(PRESETS), help="named scenario preset")
    p_run.add_argument("--seed", type=int, default=None, help="override the seed list with one seed")
    p_run.add_argument("--output", type=Path, default=Path("runs"), help="output directory")
    p_run.add_argument("--workers", type=int, default=1, help="parallel worker processes")

    p_cmp = sub.add_parser("compare", help="join metrics of finished runs into a CSV")
    p_cmp.add_argument("run_dirs", nargs="+", type=Path)
    p_cmp.add_argument("--output", type=Path, default=Path("comparison.csv"))

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = ExperimentConfig.from_file(args.config) if args.config else preset_config(args.preset)
            if args.seed is not None:
                cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seeds": [args.seed]})
            out = args.output / cfg.name
            manifest = run_experiment(cfg, out, workers=max(1, args.workers))
            print(f"wrote {len(manifest['files']) + 1} files to {out}")
            return 0
        compare_runs(args.run_dirs, args.output)
        print(f"wrote {args.output}")
        return 0
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
