import json
import subprocess
import sys
import time

import numpy as np
import pytest

from zonefurnace.cli import main
from zonefurnace.config import ConfigError, load_config, parse_config

SMOKE_MANIFEST = """name,split,group
955_1220_1250_750,train,normal_type1
975_1200_1260_700,train,normal_type1
935_1230_1240_780,val,normal_type1
965_1210_1255_735,test,normal_type1
"""

SMOKE_CONFIG = """
[run]
output_dir = "runs"
preset = "desk"

[exchange]
rays = 10000
seed = 3
n_gases = 4

[simulation]
manifest = "manifest.csv"
t_steps = 40

[training]
epochs = 1
hidden = [16, 16]
seed = 0

[baselines]
max_depth = 4
n_trees = 3
"""


def write_config(tmp_path, text=SMOKE_CONFIG, manifest=SMOKE_MANIFEST):
    (tmp_path / "manifest.csv").write_text(manifest)
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-exchange -> simulate --all -> recast -> train -> evaluate on a tiny run."""
    tmp = tmp_path_factory.mktemp("smoke")
    cfg_path = write_config(tmp)
    t0 = time.perf_counter()
    codes = {}
    codes["gen"] = main(["gen-exchange", str(cfg_path), "--jobs", "1"])
    codes["sim"] = main(["simulate", str(cfg_path), "--all", "--jobs", "1"])
    codes["recast"] = main(["recast", str(cfg_path)])
    for model in ("mlp", "pinn", "naive", "dt", "rf"):
        codes[f"train-{model}"] = main(["train", str(cfg_path), "--model", model, "--setting", "2", "--jobs", "1"])
    cfg = load_config(cfg_path)
    run = cfg.run_dir()
    codes["eval"] = main(["evaluate", str(cfg_path), "--model-path", str(run / "models/pinn_s2_seed0.ckpt"),
                          "--mode", "rollout"])
    codes["eval-rf"] = main(["evaluate", str(cfg_path), "--model-path", str(run / "models/rf_s2_seed0.json")])
    codes["report"] = main(["report", str(cfg_path)])
    return {"dir": tmp, "config": cfg_path, "run": run, "codes": codes, "elapsed": time.perf_counter() - t0}


def test_smoke_pipeline_succeeds_quickly(pipeline):
    assert all(code == 0 for code in pipeline["codes"].values()), pipeline["codes"]
    assert pipeline["elapsed"] <= 600.0


def test_simulate_all_writes_one_csv_per_row(pipeline):
    csvs = sorted((pipeline["run"] / "data").glob("*.csv"))
    assert len(csvs) == 4
    assert len(csvs[0].read_text().splitlines()) == 41


def test_run_directory_contents(pipeline):
    run = pipeline["run"]
    meta = json.loads((run / "metadata.json").read_text())
    assert meta["config_hash"] and meta["tool_version"]
    assert "gen-exchange" in meta["commands"] and meta["parameters"]["exchange"]["rays"] == 10000
    assert (run / "config.toml").is_file() and (run / "teas.ztea").is_file()
    assert json.loads((run / "recast/splits.json").read_text())["train"] == ["955_1220_1250_750", "975_1200_1260_700"]
    with np.load(run / "recast/train_s2.npz") as z:
        assert z["X"].shape == (2 * 38, 7 + 6 + 34)
    assert list((run / "reports").glob("pinn_s2_seed0_rollout_test.json"))
    assert (run / "comparison.txt").is_file()
    assert list((run / "plots").glob("*_loss.png")) and list((run / "plots").glob("*_rollout.png"))


def test_pinn_with_zero_weights_equals_mlp(pipeline, tmp_path):
    text = SMOKE_CONFIG.replace("epochs = 1", "epochs = 1\nlambda_ebv = 0.0\nlambda_ebs = 0.0")
    cfg_path = write_config(tmp_path, text)
    cfg = load_config(cfg_path)
    # share the exchange areas and data of the smoke run
    cfg.run_dir().mkdir(parents=True)
    for item in ("teas.ztea", "data"):
        (cfg.run_dir() / item).symlink_to(pipeline["run"] / item)
    assert main(["train", str(cfg_path), "--model", "pinn"]) == 0
    assert main(["train", str(cfg_path), "--model", "mlp"]) == 0
    models = cfg.run_dir() / "models"
    assert (models / "pinn_s2_seed0.ckpt").read_bytes() == (models / "mlp_s2_seed0.ckpt").read_bytes()


def test_retraining_is_byte_identical(pipeline):
    path = pipeline["run"] / "models/dt_s2_seed0.json"
    before = path.read_bytes()
    assert main(["train", str(pipeline["config"]), "--model", "dt", "--jobs", "1"]) == 0
    assert path.read_bytes() == before


def test_config_errors(tmp_path, capsys):
    bad_key = write_config(tmp_path, SMOKE_CONFIG + "\nunknown_key = 1\n")
    assert main(["recast", str(bad_key)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2 and err["error"] == "ConfigError"
    assert main(["recast", str(tmp_path / "missing.toml")]) == 2
    few_rays = write_config(tmp_path, SMOKE_CONFIG.replace("rays = 10000", "rays = 100"))
    assert main(["gen-exchange", str(few_rays)]) == 2
    with pytest.raises(ConfigError):
        parse_config({"run": {"output_dir": "x"}, "training": {"lambda_ebv": -1.0}})
    with pytest.raises(ConfigError):
        parse_config({"run": {"output_dir": "x"}, "plant": {"gains": {"kq": 1.0}}})
    with pytest.raises(ConfigError):
        parse_config({"run": {}})
    with pytest.raises(ConfigError):
        parse_config({"run": {"output_dir": "x"}, "simulation": {"manifest": "nowhere.csv"}})


def test_io_errors(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    # no exchange-area archive yet
    assert main(["simulate", str(cfg_path), "--all"]) == 4
    assert main(["evaluate", str(cfg_path), "--model-path", str(tmp_path / "none.ckpt")]) == 4
    capsys.readouterr()


def test_packaged_desk_config_parses():
    from importlib import resources

    cfg = load_config(resources.files("zonefurnace") / "data" / "desk.toml")
    assert cfg.preset == "desk" and cfg.exchange.rays == 50_000 and cfg.training.epochs == 50


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "zonefurnace.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gen-exchange" in out.stdout
