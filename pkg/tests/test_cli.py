import json

import pytest

from qkdsim.cli import compare_runs, main, run_experiment
from qkdsim.config import ConfigError, ExperimentConfig, preset_config


def _tiny_config(name="tiny", policies=None, rate_scales=(0.5, 1.0)):
    return {
        "name": name,
        "graph": {
            "kind": "inline",
            "nodes": 2,
            "edges": [{"u": 0, "v": 1, "gamma": 1, "eta": 0.6, "has_qkd": True, "directed": True}],
        },
        "classes": [
            {
                "id": 0,
                "source": 0,
                "kind": "unicast",
                "destinations": [1],
                "arrival": {"process": "bernoulli", "rate": 0.4},
            }
        ],
        "policies": policies or [{"mode": "tandem", "key_storage": True}],
        "horizon": 400,
        "seeds": [1, 2],
        "rate_scales": list(rate_scales),
    }


# ---------------------------------------------------------------------------
# config parsing

def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(_tiny_config())
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert cfg == again
    assert cfg.config_hash() == again.config_hash()


def test_missing_field_names_the_field():
    doc = _tiny_config()
    del doc["classes"][0]["source"]
    with pytest.raises(ConfigError, match=r"classes\[0\]\.source"):
        ExperimentConfig.from_dict(doc)
    doc = _tiny_config()
    del doc["horizon"]
    with pytest.raises(ConfigError, match="config.horizon"):
        ExperimentConfig.from_dict(doc)


def test_unknown_enums_rejected():
    doc = _tiny_config()
    doc["policies"] = [{"mode": "teleport"}]
    with pytest.raises(ConfigError, match="policies"):
        ExperimentConfig.from_dict(doc)
    doc = _tiny_config()
    doc["scheduler"] = "random"
    with pytest.raises(ConfigError, match="scheduler"):
        ExperimentConfig.from_dict(doc)


def test_ppbp_scaling_rejected():
    doc = _tiny_config()
    doc["classes"][0]["arrival"] = {"process": "ppbp", "sources": 2}
    cfg = ExperimentConfig.from_dict(doc)
    with pytest.raises(ConfigError, match="scaling"):
        cfg.build_classes(scale=0.5)
    assert cfg.build_classes(scale=1.0)[0].arrival.sources == 2


def test_presets_build_and_round_trip():
    for name in ("counterexample", "unicast-sweep", "broadcast-sweep", "mixed-security"):
        cfg = preset_config(name)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="unknown preset"):
        preset_config("nope")


# ---------------------------------------------------------------------------
# run command

def test_run_writes_manifest_and_all_files(tmp_path):
    cfg = ExperimentConfig.from_dict(_tiny_config())
    manifest = run_experiment(cfg, tmp_path / "out")
    files = set(manifest["files"])
    on_disk = {p.name for p in (tmp_path / "out").iterdir()}
    assert on_disk == files | {"manifest.json"}
    # 1 policy x 2 scales x 2 seeds -> 4 csv + 4 json + 2 summaries
    assert len(files) == 10
    agg = json.loads((tmp_path / "out" / sorted(files)[1]).read_text())
    assert "totals" in agg or "per_class" in agg


def test_run_cli_end_to_end(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_tiny_config()))
    rc = main(["run", "--config", str(cfg_path), "--output", str(tmp_path / "runs")])
    assert rc == 0
    assert (tmp_path / "runs" / "tiny" / "manifest.json").exists()


def test_run_cli_seed_override(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_tiny_config()))
    rc = main(["run", "--config", str(cfg_path), "--seed", "7", "--output", str(tmp_path / "runs")])
    assert rc == 0
    manifest = json.loads((tmp_path / "runs" / "tiny" / "manifest.json").read_text())
    assert manifest["seeds"] == [7]


def test_run_cli_invalid_config_fails_cleanly(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad), "--output", str(tmp_path)]) == 2
    assert "line" in capsys.readouterr().err


def test_run_parallel_workers_match_serial(tmp_path):
    cfg = ExperimentConfig.from_dict(_tiny_config())
    run_experiment(cfg, tmp_path / "serial", workers=1)
    run_experiment(cfg, tmp_path / "par", workers=2)
    for p in sorted((tmp_path / "serial").iterdir()):
        assert (tmp_path / "par" / p.name).read_bytes() == p.read_bytes()


# ---------------------------------------------------------------------------
# determinism

def test_identical_config_and_seed_give_identical_bytes(tmp_path):
    cfg = ExperimentConfig.from_dict(_tiny_config())
    dirs = []
    for i in range(3):
        d = tmp_path / f"run{i}"
        run_experiment(cfg, d)
        dirs.append(d)
    base = {p.name: p.read_bytes() for p in dirs[0].iterdir()}
    for d in dirs[1:]:
        assert {p.name: p.read_bytes() for p in d.iterdir()} == base


# ---------------------------------------------------------------------------
# compare command

def test_compare_identical_runs_zero_difference(tmp_path):
    cfg = ExperimentConfig.from_dict(_tiny_config())
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(cfg, a)
    run_experiment(cfg, b)
    out = tmp_path / "cmp.csv"
    compare_runs([a, b], out)
    lines = out.read_text().strip().split("\n")
    header = lines[0].split(",")
    assert header[0] == "rate_scale"
    for row in lines[1:]:
        cells = row.split(",")
        half = (len(cells) - 1) // 2
        assert cells[1 : 1 + half] == cells[1 + half :]


def test_compare_storage_variants_keep_delay_order(tmp_path):
    # run storage and no-storage sweeps, then read the joined CSV back
    doc = _tiny_config(
        name="variants",
        policies=[
            {"mode": "tandem", "key_storage": True},
            {"mode": "tandem", "key_storage": False},
        ],
        rate_scales=(0.4, 0.8),
    )
    doc["horizon"] = 6000
    a = tmp_path / "a"
    run_experiment(ExperimentConfig.from_dict(doc), a)
    out = tmp_path / "cmp.csv"
    compare_runs([a, a], out)
    lines = out.read_text().strip().split("\n")
    header = lines[0].split(",")
    store = header.index("mean_delay_mean__variants:tandem-store")
    nostore = header.index("mean_delay_mean__variants:tandem-nostore")
    for row in lines[1:]:
        cells = row.split(",")
        assert float(cells[store]) <= float(cells[nostore])


def test_compare_mismatched_axes_error(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(ExperimentConfig.from_dict(_tiny_config()), a)
    run_experiment(ExperimentConfig.from_dict(_tiny_config(rate_scales=(0.25, 0.75))), b)
    with pytest.raises(ConfigError, match="mismatched sweep axes"):
        compare_runs([a, b], tmp_path / "cmp.csv")


def test_compare_needs_two_dirs(tmp_path):
    with pytest.raises(ConfigError):
        compare_runs([tmp_path], tmp_path / "cmp.csv")


def test_compare_cli_exit_codes(tmp_path):
    assert main(["compare", str(tmp_path / "missing1"), str(tmp_path / "missing2"),
                 "--output", str(tmp_path / "c.csv")]) == 2
