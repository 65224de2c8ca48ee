"""Neural surrogates: the plain MLP and the energy-balance regularized network.

Both are trained on min-max normalized data. The physics penalties are built
in kelvin after undoing the output scaling, from the predicted temperatures
and the auxiliary terms stored with each record:

* gas balance (EBV): predicted gas temperatures stay on the graph; the surface
  emission uses the record's previous-step surface temperatures, which are the
  ones the simulator held fixed while solving for the gas;
* surface balance (EBS): predicted surface temperatures stay on the graph; the
  gas temperatures enter as detached predictions.

Directed flux areas use WSGG weights at the emitter temperatures, as in the
simulator, so ground-truth outputs close both balances up to solver tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .balance import SIGMA
from .dataset import IidTable, Layout, Normalizer, build_xy
from .exchange import ExchangeAreaSet
from .geometry import Enclosure
from .nn import tensor as T
from .nn.network import DEFAULT_HIDDEN, Adam, Mlp, load_checkpoint, save_checkpoint
from .wsgg import WsggCoefficients

NORM_MODES = ("scale", "self")


class TrainingError(RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class PinnHyper:
    lambda_ebv: float = 0.1
    lambda_ebs: float = 0.1
    batch_size: int = 64
    epochs: int = 10
    patience: int = 3
    setting: int = 2
    lr: float = 1e-3
    hidden: tuple = DEFAULT_HIDDEN
    activation: str = "relu"
    seed: int = 0
    # "scale": divide each residual by the largest magnitude of its balance terms;
    # "self": divide by the largest residual component itself
    norm: str = "scale"

    def __post_init__(self):
        if self.lambda_ebv < 0 or self.lambda_ebs < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("batch size, epochs and patience must be positive")
        if self.setting not in (1, 2):
            raise ValueError("input setting must be 1 or 2")
        if self.norm not in NORM_MODES:
            raise ValueError(f"norm must be one of {NORM_MODES}")

    @property
    def physics(self) -> bool:
        return self.lambda_ebv > 0 or self.lambda_ebs > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d) -> "PinnHyper":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def normalize_maxdiv(v, delta: float = 1e-12):
    """Per-row v / max(v) with a detached max. Rows with max <= delta are returned unscaled.

    Returns (tensor, guarded) where ``guarded`` flags the unscaled rows.
    """
    v = T.as_tensor(v)
    if v.value.size == 0:
        raise ValueError("cannot normalize an empty vector")
    m = np.max(v.value, axis=-1, keepdims=True)
    return T.maxdiv(v, axis=-1, delta=delta), (m <= delta)[..., 0]


@dataclass(frozen=True, eq=False)
class PhysicsContext:
    """Everything the balance residuals need besides the predicted temperatures."""

    teas: ExchangeAreaSet
    coeffs: WsggCoefficients
    gas_volumes: np.ndarray  # (G,)
    emission_areas: np.ndarray  # (S,)
    surf_area: np.ndarray  # (S,)
    layout: Layout
    y_norm: Normalizer
    # per record
    h_g: np.ndarray  # (N, G) W, -Qconv + Qfuel + Qa + q
    h_abs: np.ndarray  # (N, G) W, |Qconv| + |Qfuel + Qa| + |q|
    tS_prev: np.ndarray  # (N, S) K
    conv: np.ndarray  # (N, S) W, convective heat into each surface
    w: np.ndarray  # (N, S) W, heat handed to conduction

    def __post_init__(self):
        G, S = self.teas.n_gas, self.teas.n_surf
        if self.layout.G != G or self.layout.Sf + self.layout.So != S:
            raise ValueError("layout does not match the exchange areas")
        for name, width in (("h_g", G), ("h_abs", G), ("tS_prev", S), ("conv", S), ("w", S)):
            a = getattr(self, name)
            if a.ndim != 2 or a.shape[1] != width:
                raise ValueError(f"context field {name} has shape {a.shape}, expected (N, {width})")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"context field {name} is not finite")

    def __len__(self) -> int:
        return self.h_g.shape[0]

    def take(self, idx) -> "PhysicsContext":
        return PhysicsContext(self.teas, self.coeffs, self.gas_volumes, self.emission_areas, self.surf_area,
                              self.layout, self.y_norm, self.h_g[idx], self.h_abs[idx], self.tS_prev[idx],
                              self.conv[idx], self.w[idx])


def build_context(table: IidTable, enclosure: Enclosure, teas: ExchangeAreaSet, coeffs: WsggCoefficients,
                  layout: Layout, y_norm: Normalizer) -> PhysicsContext:
    src = table.QfuelQa
    return PhysicsContext(
        teas=teas, coeffs=coeffs, gas_volumes=enclosure.gas_volumes, emission_areas=enclosure.emission_areas,
        surf_area=enclosure.surf_area, layout=layout, y_norm=y_norm,
        h_g=-table.Qconv + src + table.q,
        h_abs=np.abs(table.Qconv) + np.abs(src) + np.abs(table.q),
        tS_prev=np.hstack([table.tSf_prev, table.tSo_prev]),
        conv=table.qconv * enclosure.surf_area,
        w=table.w,
    )


def _emissive(Tk, b):
    """sigma * a_n(T) * T^4 on the graph, shape (batch, zones, gases)."""
    P = T.poly(Tk, b)
    e = T.mul(T.pow4(Tk), SIGMA)
    return T.mul(P, T.reshape(e, e.shape + (1,))), P, e


def _emissive_np(Tk, coeffs):
    return coeffs.weights(Tk) * (SIGMA * Tk**4)[..., None]


def physical_outputs(y_hat, ctx: PhysicsContext):
    """Undo the output scaling; returns (tG, tS) tensors in kelvin."""
    lay = ctx.layout.y_slices()
    lo, span = ctx.y_norm.lo, ctx.y_norm.span
    y = T.add(T.mul(y_hat, span), lo)
    tG = T.take(y, (slice(None), lay["tG"]))
    tS = T.take(y, (slice(None), slice(lay["tSf"].start, lay["tSo"].stop)))
    return tG, tS


def ebv_terms(tG, ctx: PhysicsContext):
    """Gas balance residual (batch, G) in W with tG on the graph, plus the detached term magnitudes."""
    teas, co = ctx.teas, ctx.coeffs
    Eg, P, e = _emissive(tG, co.b)
    t_gg = T.einsum_const("bjn,ijn->bi", Eg, teas.GG)
    t_gs = np.einsum("bjn,ijn->bi", _emissive_np(ctx.tS_prev, co), teas.GS)
    absorb = T.einsum_const("bin,n->bi", P, co.k)
    leave = T.mul(T.mul(absorb, e), 4.0 * ctx.gas_volumes)
    v = T.add(T.sub(T.add(t_gg, t_gs), leave), ctx.h_g)
    mag = np.abs(t_gg.value) + np.abs(t_gs) + np.abs(leave.value) + ctx.h_abs
    return v, mag


def ebs_terms(tS, tG_detached, ctx: PhysicsContext):
    """Surface balance residual (batch, S) in W with tS on the graph, plus the detached term magnitudes."""
    teas, co = ctx.teas, ctx.coeffs
    Es, _, e = _emissive(tS, co.b)
    t_ss = T.einsum_const("bjn,ijn->bi", Es, teas.SS)
    t_sg = np.einsum("bjn,ijn->bi", _emissive_np(np.asarray(tG_detached, dtype=float), co), teas.SG)
    emit = T.mul(e, ctx.emission_areas)
    v = T.sub(T.add(T.sub(T.add(t_ss, t_sg), emit), ctx.conv), ctx.w)
    mag = np.abs(t_ss.value) + np.abs(t_sg) + np.abs(emit.value) + np.abs(ctx.conv) + np.abs(ctx.w)
    return v, mag


def _balance_loss(v, mag, norm: str):
    if norm == "self":
        vn, _ = normalize_maxdiv(v)
    else:
        vn = T.maxdiv(v, ref=np.max(mag, axis=-1, keepdims=True))
    return T.mean(T.sum_sq(vn, axis=-1))


def ebv_loss(y_hat, ctx: PhysicsContext, norm: str = "scale"):
    tG, _ = physical_outputs(y_hat, ctx)
    v, mag = ebv_terms(tG, ctx)
    return _balance_loss(v, mag, norm)


def ebs_loss(y_hat, ctx: PhysicsContext, norm: str = "scale"):
    tG, tS = physical_outputs(y_hat, ctx)
    v, mag = ebs_terms(tS, T.detach(tG).value, ctx)
    return _balance_loss(v, mag, norm)


def supervised_loss(y_hat, Y):
    d = T.sub(y_hat, Y)
    return T.mul(T.sum_sq(d), 1.0 / d.value.size)


@dataclass(eq=False)
class NeuralModel:
    """A trained network with its scalers; ``predict`` maps physical X to physical Y."""

    mlp: Mlp
    x_norm: Normalizer
    y_norm: Normalizer
    layout: Layout
    kind: str = "mlp"
    hyper: PinnHyper = field(default_factory=PinnHyper)

    @property
    def setting(self) -> int:
        return self.layout.setting

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Z = self.mlp.predict(self.x_norm.transform(np.atleast_2d(X)))
        Y = self.y_norm.inverse(Z)
        return Y[0] if single else Y

    def save(self, path) -> None:
        meta = {"kind": self.kind, "layout": self.layout.to_dict(), "x_norm": self.x_norm.to_dict(),
                "y_norm": self.y_norm.to_dict(), "hyper": self.hyper.to_dict()}
        save_checkpoint(path, self.mlp, meta)

    @classmethod
    def load(cls, path) -> "NeuralModel":
        mlp, meta = load_checkpoint(path)
        return cls(mlp, Normalizer.from_dict(meta["x_norm"]), Normalizer.from_dict(meta["y_norm"]),
                   Layout(**meta["layout"]), meta["kind"], PinnHyper.from_dict(meta["hyper"]))


@dataclass
class TrainResult:
    model: NeuralModel
    history: list  # one dict per epoch
    best_epoch: int  # 1-based
    trajectory: list  # flat parameters after each epoch

    def log_lines(self) -> list[str]:
        return [json.dumps(h, sort_keys=True) for h in self.history]


def _physics_values(y_hat_value, ctx, norm):
    """Both balance losses evaluated without building a graph (for logging)."""
    y = T.Tensor(y_hat_value)
    return float(ebv_loss(y, ctx, norm).value), float(ebs_loss(y, ctx, norm).value)


def prepare(train: IidTable, val: IidTable, setting: int):
    """Scalers fitted on the training split and the scaled matrices of both splits."""
    Xtr, Ytr = build_xy(train, setting)
    Xva, Yva = build_xy(val, setting)
    xn, yn = Normalizer.fit(Xtr), Normalizer.fit(Ytr)
    return (xn, yn, Layout.of(train, setting), xn.transform(Xtr), yn.transform(Ytr), xn.transform(Xva),
            yn.transform(Yva))


def train_pinn(train: IidTable, val: IidTable, hyper: PinnHyper = PinnHyper(), enclosure: Enclosure | None = None,
               teas: ExchangeAreaSet | None = None, coeffs: WsggCoefficients | None = None, log=None,
               max_steps: int | None = None) -> TrainResult:
    """Adam on L_sup + lambda_ebv * L_ebv + lambda_ebs * L_ebs with early stopping on validation L_sup.

    With both weights zero no physics enters the graph, so the run is the plain
    MLP run. Physics losses are still logged when a context is available.
    """
    xn, yn, layout, Xtr, Ytr, Xva, Yva = prepare(train, val, hyper.setting)
    have_ctx = enclosure is not None and teas is not None and coeffs is not None
    if hyper.physics and not have_ctx:
        raise ValueError("physics losses need the enclosure, exchange areas and WSGG coefficients")
    ctx = build_context(train, enclosure, teas, coeffs, layout, yn) if have_ctx else None

    mlp = Mlp.build(layout.x_width, layout.y_width, hyper.hidden, hyper.activation, hyper.seed)
    opt = Adam(lr=hyper.lr)
    rng = np.random.default_rng(hyper.seed)
    n = Xtr.shape[0]
    history, trajectory = [], []
    best = (math.inf, 0, mlp.flat())
    stale, steps = 0, 0
    kind = "pinn" if hyper.physics else "mlp"
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        sums, count = np.zeros(4), 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            mlp.zero_grad()
            y_hat = mlp.forward(Xtr[idx])
            l_sup = supervised_loss(y_hat, Ytr[idx])
            total = l_sup
            if hyper.physics:
                c = ctx.take(idx)
                l_ebv = ebv_loss(y_hat, c, hyper.norm)
                l_ebs = ebs_loss(y_hat, c, hyper.norm)
                total = T.add(T.add(total, T.mul(l_ebv, hyper.lambda_ebv)), T.mul(l_ebs, hyper.lambda_ebs))
                ebv_v, ebs_v = float(l_ebv.value), float(l_ebs.value)
            elif ctx is not None:
                ebv_v, ebs_v = _physics_values(y_hat.value, ctx.take(idx), hyper.norm)
            else:
                ebv_v = ebs_v = math.nan
            vals = np.array([float(l_sup.value), ebv_v, ebs_v, float(total.value)])
            if not np.isfinite(vals[[0, 3]]).all():
                raise TrainingError(f"loss became non-finite at epoch {epoch}, step {steps}",
                                    {"epoch": epoch, "step": steps, "losses": vals.tolist()})
            T.backward(total)
            opt.step(mlp.params)
            sums += vals * len(idx)
            count += len(idx)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        means = sums / count
        val_sup = float(np.mean((mlp.predict(Xva) - Yva) ** 2))
        rec = {"epoch": epoch, "sup": means[0], "ebv": means[1], "ebs": means[2], "total": means[3],
               "val_sup": val_sup}
        history.append(rec)
        trajectory.append(mlp.flat())
        if log is not None:
            log(rec)
        if val_sup < best[0]:
            best, stale = (val_sup, epoch, mlp.flat()), 0
        else:
            stale += 1
        if stale >= hyper.patience or (max_steps is not None and steps >= max_steps):
            break
    mlp.set_flat(best[2])
    model = NeuralModel(mlp, xn, yn, layout, kind, hyper)
    return TrainResult(model, history, best[1], trajectory)


def train_mlp(train: IidTable, val: IidTable, hyper: PinnHyper = PinnHyper(), **kw) -> TrainResult:
    """Plain supervised network: the same loop with both physics weights at zero."""
    from dataclasses import replace

    return train_pinn(train, val, replace(hyper, lambda_ebv=0.0, lambda_ebs=0.0), **kw)


def physics_losses(model: NeuralModel, table: IidTable, enclosure: Enclosure, teas: ExchangeAreaSet,
                   coeffs: WsggCoefficients, Y=None, norm: str = "scale") -> tuple[np.ndarray, np.ndarray]:
    """Per-record EBV and EBS losses of ``Y`` (physical units; default: the model's predictions)."""
    X, Ytrue = build_xy(table, model.setting)
    Y = model.predict(X) if Y is None else np.asarray(Y, dtype=float)
    ctx = build_context(table, enclosure, teas, coeffs, model.layout, model.y_norm)
    tG, tS = physical_outputs(T.Tensor(model.y_norm.transform(Y)), ctx)
    out = []
    for v, mag in (ebv_terms(tG, ctx), ebs_terms(tS, tG.value, ctx)):
        scale = np.max(v.value if norm == "self" else mag, axis=-1, keepdims=True)
        out.append(np.sum((v.value / np.where(scale > 1e-12, scale, 1.0)) ** 2, axis=-1))
    return out[0], out[1]
