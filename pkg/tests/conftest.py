"""Shared desk-scale fixtures: enclosure, exchange areas, generated dataset and trained models."""

import time

import numpy as np
import pytest

from zonefurnace.dataset import load_split, packaged_manifest, read_manifest
from zonefurnace.exchange import trace_exchange_areas
from zonefurnace.geometry import build_enclosure, desk_scale_spec
from zonefurnace.pinn import PinnHyper, train_mlp, train_pinn
from zonefurnace.simulate import FurnaceConfig, PlantParams, run_configuration, write_table
from zonefurnace.wsgg import default_coefficients

DESK_RAYS = 50_000
DESK_SEED = 7
DESK_STEPS = 600
# 50 epochs over the desk training split take as many Adam steps as 10 epochs over the full roster
DESK_HYPER = PinnHyper(epochs=50, patience=10, setting=2)


@pytest.fixture(scope="session")
def desk_enc():
    return build_enclosure(desk_scale_spec())


@pytest.fixture(scope="session")
def desk_coeffs():
    return default_coefficients(4)


@pytest.fixture(scope="session")
def desk_teas(desk_enc, desk_coeffs):
    return trace_exchange_areas(desk_enc, desk_coeffs.k, DESK_RAYS, DESK_SEED)


@pytest.fixture(scope="session")
def desk_plant():
    return PlantParams()


@pytest.fixture(scope="session")
def desk_manifest():
    return read_manifest(packaged_manifest("desk"))


@pytest.fixture(scope="session")
def desk_data_dir(tmp_path_factory, desk_enc, desk_teas, desk_coeffs, desk_plant, desk_manifest):
    out = tmp_path_factory.mktemp("desk_data")
    for e in desk_manifest:
        table = run_configuration(FurnaceConfig.from_name(e.name, t_steps=DESK_STEPS), desk_enc, desk_teas,
                                  desk_coeffs, desk_plant)
        write_table(table, out / f"{e.name}.csv")
    return out


@pytest.fixture(scope="session")
def desk_split(desk_data_dir, desk_manifest):
    return load_split(desk_data_dir, desk_manifest)


@pytest.fixture(scope="session")
def desk_physics(desk_enc, desk_teas, desk_coeffs):
    return {"enclosure": desk_enc, "teas": desk_teas, "coeffs": desk_coeffs}


class ModelCache:
    """Trained desk models keyed by (kind, seed, setting), with their training wall times."""

    def __init__(self, split, physics):
        self.split = split
        self.physics = physics
        self.results = {}
        self.seconds = {}

    def get(self, kind: str, seed: int = 0, setting: int = 2):
        key = (kind, seed, setting)
        if key not in self.results:
            from dataclasses import replace

            hyper = replace(DESK_HYPER, seed=seed, setting=setting)
            tr, va = self.split.tables["train"], self.split.tables["val"]
            t0 = time.perf_counter()
            if kind == "mlp":
                self.results[key] = train_mlp(tr, va, hyper, **self.physics)
            else:
                self.results[key] = train_pinn(tr, va, hyper, **self.physics)
            self.seconds[key] = time.perf_counter() - t0
        return self.results[key]


@pytest.fixture(scope="session")
def desk_models(desk_split, desk_physics):
    return ModelCache(desk_split, desk_physics)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}  # criterion number -> summary line


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; printed at the end of the run."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
