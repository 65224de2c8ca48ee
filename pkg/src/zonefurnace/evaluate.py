"""Metrics, the IID evaluation harness and the auto-regressive rollout harness.

A model is anything with ``setting`` (1 or 2) and ``predict(X) -> Y`` working
in physical units on the column layout of ``dataset.build_xy``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import IidTable, Layout, build_xy, recast_iid
from .simulate import FurnaceConfig, PlantParams, SimTable, Simulation

BLOCKS = ("tG", "tSf", "tSo")
MMAPE_EPS = 0.05


class EvaluationError(RuntimeError):
    pass


def _pair(y_true, y_pred):
    a = np.asarray(y_true, dtype=float)
    b = np.asarray(y_pred, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("no samples")
    return a.ravel(), b.ravel()


def rmse(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mae(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.mean(np.abs(a - b)))


def r2(y_true, y_pred) -> float:
    """Coefficient of determination of vector targets: squared errors over squared deviations
    from the per-column mean. NaN when the targets have no variance."""
    _pair(y_true, y_pred)
    a = np.asarray(y_true, dtype=float)
    b = np.asarray(y_pred, dtype=float)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    ss_tot = float(np.sum((a - a.mean(axis=0)) ** 2))
    if ss_tot == 0.0:
        return math.nan
    return 1.0 - float(np.sum((a - b) ** 2)) / ss_tot


def mmape(f_true, f_pred, eps: float = MMAPE_EPS) -> float:
    """Mean of |f - f_hat| / |f + eps| over all entries."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    a, b = _pair(f_true, f_pred)
    return float(np.mean(np.abs((a - b) / (a + eps))))


def block_metrics(Y, P, layout: Layout) -> dict:
    sl = layout.y_slices()
    out = {}
    for blk in BLOCKS:
        yt, yp = Y[:, sl[blk]], P[:, sl[blk]]
        if yt.shape[1] == 0:
            continue
        out[blk] = {"rmse": rmse(yt, yp), "mae": mae(yt, yp), "r2": r2(yt, yp)}
    out["fr_next"] = {"mmape": mmape(Y[:, sl["fr_next"]], P[:, sl["fr_next"]])}
    return out


def _mean_metrics(per_config: dict) -> dict:
    """Average each metric over configurations, ignoring undefined values."""
    first = next(iter(per_config.values()))
    out = {}
    for blk, metrics in first.items():
        out[blk] = {}
        for m in metrics:
            vals = [pc[blk][m] for pc in per_config.values() if not math.isnan(pc[blk][m])]
            out[blk][m] = float(np.mean(vals)) if vals else math.nan
    return out


@dataclass
class EvalReport:
    mode: str  # "iid" or "rollout"
    setting: int
    aggregate: dict  # block -> metric -> value
    per_config: dict = field(default_factory=dict)  # config name -> block -> metric -> value
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "setting": self.setting, "aggregate": self.aggregate,
                "per_config": self.per_config, "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls(d["mode"], d["setting"], d["aggregate"], d.get("per_config", {}), d.get("meta", {}))

    def rmse(self, block: str = "tG") -> float:
        return self.aggregate[block]["rmse"]

    def text(self) -> str:
        cols = [f"RMSE {b}" for b in BLOCKS] + [f"MAE {b}" for b in BLOCKS] + [f"R2 {b}" for b in BLOCKS] + ["mMAPE fr"]
        head = f"{'config':<24}" + "".join(f"{c:>12}" for c in cols)
        lines = [f"{self.mode} evaluation, input setting {self.setting}", head, "-" * len(head)]
        rows = list(self.per_config.items()) + [("mean", self.aggregate)]
        for name, m in rows:
            vals = ([m[b]["rmse"] for b in BLOCKS] + [m[b]["mae"] for b in BLOCKS] + [m[b]["r2"] for b in BLOCKS]
                    + [m["fr_next"]["mmape"]])
            lines.append(f"{name:<24}" + "".join(f"{v:>12.4f}" for v in vals))
        return "\n".join(lines)


def _config_groups(table: IidTable):
    for c, name in enumerate(table.names):
        idx = np.flatnonzero(table.config == c)
        if idx.size:
            yield name, idx


def evaluate_iid(model, table: IidTable, setting: int | None = None, meta: dict | None = None) -> EvalReport:
    """Predict every record from its ground-truth inputs.

    The aggregate pools all records; ``per_config`` lists each configuration.
    """
    setting = model.setting if setting is None else setting
    if setting != model.setting:
        raise EvaluationError(f"model expects input setting {model.setting}, not {setting}")
    layout = Layout.of(table, setting)
    X, Y = build_xy(table, setting)
    P = np.asarray(model.predict(X), dtype=float)
    if P.shape != Y.shape:
        raise EvaluationError(f"model output shape {P.shape} differs from targets {Y.shape}")
    per = {name: block_metrics(Y[idx], P[idx], layout) for name, idx in _config_groups(table)}
    return EvalReport("iid", setting, block_metrics(Y, P, layout), per, dict(meta or {}))


def rollout_predictions(model, table: IidTable) -> np.ndarray:
    """Feed the model its own outputs, one configuration at a time.

    Step 0 uses the recorded inputs. Afterwards the firing rates (clipped to
    [0, 1]) and, in input setting 2, the previous temperatures come from the
    model's last prediction; walk interval and set points stay the recorded
    operator inputs.
    """
    setting = model.setting
    layout = Layout.of(table, setting)
    xs = layout.x_slices()
    ys = layout.y_slices()
    X, _ = build_xy(table, setting)
    if len(set(table.config.tolist())) != 1:
        raise EvaluationError("rollout needs the records of exactly one configuration")
    order = np.argsort(table.timestep, kind="stable")
    if np.any(np.diff(table.timestep[order]) != 1):
        raise EvaluationError("rollout needs consecutive time steps")
    P = np.empty((len(order), layout.y_width))
    x = X[order[0]].copy()
    for k, r in enumerate(order):
        if k > 0:
            x = X[r].copy()
            prev = P[k - 1]
            x[xs["fr"]] = np.clip(prev[ys["fr_next"]], 0.0, 1.0)
            if setting == 2:
                x[xs["tG_prev"]] = prev[ys["tG"]]
                x[xs["tSf_prev"]] = prev[ys["tSf"]]
                x[xs["tSo_prev"]] = prev[ys["tSo"]]
        y = np.asarray(model.predict(x), dtype=float)
        if not np.all(np.isfinite(y)):
            raise EvaluationError(f"non-finite prediction at rollout step {k}")
        P[k] = y
    out = np.empty_like(P)
    out[order] = P
    return out


def rollout_autoregressive(model, table: IidTable, meta: dict | None = None) -> EvalReport:
    """Rollout every configuration in ``table``; metrics per configuration, then averaged."""
    layout = Layout.of(table, model.setting)
    _, Y = build_xy(table, model.setting)
    per = {}
    for name, idx in _config_groups(table):
        P = rollout_predictions(model, table.subset(idx))
        per[name] = block_metrics(Y[idx], P, layout)
    return EvalReport("rollout", model.setting, _mean_metrics(per), per, dict(meta or {}))


class SimulatorModel:
    """The simulator behind the model interface, for one configuration.

    ``predict`` advances the plant one step with the firing rates of ``x`` and
    returns the new temperatures with the controller's next firing rates. The
    previous temperatures in ``x`` are ignored: the plant keeps its own state.
    """

    def __init__(self, config: FurnaceConfig, enclosure, teas, coeffs, plant: PlantParams = PlantParams(),
                 setting: int = 2):
        self.setting = setting
        self.sim = Simulation(config, enclosure, teas, coeffs, plant)
        self.layout = None
        self.reset()

    def reset(self) -> None:
        self.sim.reset()
        self.sim.step()  # raw row 0 is the seed state of the first record
        self.sim.next_firing_rates()

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("the simulator predicts one record at a time")
        B = self.sim.n_control
        self.sim.advance(x[:B])
        f_next = self.sim.next_firing_rates()
        return np.concatenate([self.sim.tG, self.sim.tS, f_next])


def simulator_rollout(config: FurnaceConfig, source: SimTable, enclosure, teas, coeffs,
                      plant: PlantParams = PlantParams(), setting: int = 2) -> np.ndarray:
    """Rollout predictions of the simulator-as-model over ``source``'s records."""
    model = SimulatorModel(config, enclosure, teas, coeffs, plant, setting)
    return rollout_predictions(model, recast_iid(source))
