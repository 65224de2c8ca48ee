"""Command-line pipelines: exchange areas, simulation, recasting, training, evaluation and reports.

Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 I/O error. On
failure a JSON object describing the error is written to stderr. The log
level comes from the ZONEFURNACE_LOG environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import KINDS as BASELINE_KINDS
from .baselines import BaselineModel, fit_baseline
from .balance import SolverError
from .conduction import StabilityError
from .config import ConfigError, RunConfig, config_dict, load_config
from .dataset import SPLITS, DatasetError, Layout, Normalizer, build_xy, load_split, read_manifest, split
from .evaluate import EvaluationError, evaluate_iid, rollout_autoregressive, rollout_predictions
from .exchange import ExchangeError, load_teas, save_teas, trace_exchange_areas, conservation_residual, \
    reciprocity_residual
from .geometry import GeometryError, build_enclosure
from .pinn import NeuralModel, TrainingError, train_mlp, train_pinn
from .simulate import FurnaceConfig, TableSchemaError, run_configuration, write_table
from .wsgg import WsggCoefficients, default_coefficients

log = logging.getLogger("zonefurnace")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MODELS = ("mlp", "pinn") + BASELINE_KINDS


def _coefficients(cfg: RunConfig) -> WsggCoefficients:
    if cfg.exchange.wsgg_table:
        return WsggCoefficients.load(cfg.path(cfg.exchange.wsgg_table))
    return default_coefficients(cfg.exchange.n_gases)


def _physics(cfg: RunConfig):
    enc = build_enclosure(cfg.enclosure_spec())
    archive = cfg.archive_path()
    if not archive.is_file():
        raise FileNotFoundError(f"exchange-area archive {archive} not found; run gen-exchange first")
    teas = load_teas(archive)
    coeffs = _coefficients(cfg)
    if teas.n_gases != coeffs.n_gases or teas.n_gas != enc.n_gas or teas.n_surf != enc.n_surf:
        raise ConfigError("exchange-area archive does not match the enclosure or the WSGG coefficients")
    return enc, teas, coeffs


def _prepare_run(cfg: RunConfig, command: str, extra: dict) -> Path:
    run = cfg.run_dir()
    run.mkdir(parents=True, exist_ok=True)
    if cfg.source and not (run / "config.toml").exists():
        shutil.copyfile(cfg.source, run / "config.toml")
    meta_path = run / "metadata.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    meta.update(tool_version=__version__, config_hash=cfg.digest(), parameters=config_dict(cfg))
    meta.setdefault("commands", {})[command] = {**extra, "cpu_count": os.cpu_count()}
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return run


def _data_dir(cfg: RunConfig) -> Path:
    return cfg.run_dir() / "data"


# subcommands

def cmd_gen_exchange(cfg: RunConfig, args) -> dict:
    _prepare_run(cfg, "gen-exchange", {"seed": cfg.exchange.seed, "rays": cfg.exchange.rays, "jobs": args.jobs})
    enc = build_enclosure(cfg.enclosure_spec())
    coeffs = _coefficients(cfg)
    teas = trace_exchange_areas(enc, coeffs.k, cfg.exchange.rays, cfg.exchange.seed, jobs=args.jobs)
    path = cfg.archive_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    save_teas(teas, path)
    return {"archive": str(path), "n_gas": teas.n_gas, "n_surf": teas.n_surf, "n_gases": teas.n_gases,
            "conservation_residual": conservation_residual(teas, enc), "reciprocity_residual": reciprocity_residual(teas)}


def _simulate_one(task):
    cfg, name, out = task
    enc, teas, coeffs = _physics(cfg)
    fc = FurnaceConfig.from_name(name, t_steps=cfg.simulation.t_steps, dt=cfg.simulation.dt)
    table = run_configuration(fc, enc, teas, coeffs, cfg.plant)
    write_table(table, out)
    return str(out)


def cmd_simulate(cfg: RunConfig, args) -> dict:
    _prepare_run(cfg, "simulate", {"jobs": args.jobs})
    manifest = read_manifest(cfg.manifest_path())
    names = [e.name for e in manifest] if args.all else [args.name]
    if not args.all and args.name is None:
        raise ConfigError("give a configuration name or --all")
    out = _data_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _physics(cfg)  # fail early on a missing archive
    tasks = [(cfg, n, out / f"{n}.csv") for n in names]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(min(args.jobs, len(tasks))) as pool:
            written = list(pool.map(_simulate_one, tasks))
    else:
        written = [_simulate_one(t) for t in tasks]
    return {"tables": written}


def cmd_recast(cfg: RunConfig, args) -> dict:
    run = _prepare_run(cfg, "recast", {})
    manifest = read_manifest(cfg.manifest_path())
    data = load_split(_data_dir(cfg), manifest)
    out = run / "recast"
    out.mkdir(exist_ok=True)
    groups = split(manifest)
    (out / "splits.json").write_text(json.dumps(groups, indent=2))
    counts = {}
    for setting in (1, 2):
        Xtr, Ytr = build_xy(data.tables["train"], setting)
        Normalizer.fit(Xtr).save(out / f"x_normalizer_s{setting}.json")
        Normalizer.fit(Ytr).save(out / f"y_normalizer_s{setting}.json")
        for s in SPLITS:
            if s in data.tables:
                X, Y = build_xy(data.tables[s], setting)
                np.savez(out / f"{s}_s{setting}.npz", X=X, Y=Y, config=data.tables[s].config)
                counts[s] = len(X)
    return {"records": counts, "configs": {s: len(v) for s, v in groups.items()}}


def _model_path(run: Path, model: str, setting: int, seed: int) -> Path:
    suffix = ".ckpt" if model in ("mlp", "pinn") else ".json"
    return run / "models" / f"{model}_s{setting}_seed{seed}{suffix}"


def cmd_train(cfg: RunConfig, args) -> dict:
    hyper = replace(cfg.training, setting=args.setting)
    run = _prepare_run(cfg, f"train-{args.model}-s{args.setting}", {"seed": hyper.seed, "jobs": args.jobs})
    data = load_split(_data_dir(cfg), read_manifest(cfg.manifest_path()))
    train, val = data.tables["train"], data.tables.get("val", data.tables["train"])
    path = _model_path(run, args.model, args.setting, hyper.seed)
    path.parent.mkdir(exist_ok=True)
    if args.model in ("mlp", "pinn"):
        if args.model == "mlp":
            res = train_mlp(train, val, hyper)
        else:
            enc, teas, coeffs = _physics(cfg)
            res = train_pinn(train, val, hyper, enclosure=enc, teas=teas, coeffs=coeffs,
                             log=lambda r: log.info(json.dumps(r)))
        res.model.save(path)
        path.with_suffix(".history.jsonl").write_text("\n".join(res.log_lines()) + "\n")
        return {"model": str(path), "best_epoch": res.best_epoch, "epochs": len(res.history)}
    X, Y = build_xy(train, args.setting)
    b = cfg.baselines
    model = fit_baseline(args.model, X, Y, Layout.of(train, args.setting), seed=hyper.seed, max_depth=b.max_depth,
                         min_leaf=b.min_leaf, n_trees=b.n_trees, feature_frac=b.feature_frac, jobs=args.jobs)
    model.save(path)
    return {"model": str(path)}


def load_model(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"model file {p} not found")
    return NeuralModel.load(p) if p.suffix == ".ckpt" else BaselineModel.load(p)


def cmd_evaluate(cfg: RunConfig, args) -> dict:
    run = _prepare_run(cfg, f"evaluate-{args.mode}", {})
    model = load_model(args.model_path)
    data = load_split(_data_dir(cfg), read_manifest(cfg.manifest_path()))
    table = data.tables[args.split]
    meta = {"model": Path(args.model_path).name, "split": args.split}
    report = evaluate_iid(model, table, meta=meta) if args.mode == "iid" else rollout_autoregressive(model, table, meta)
    out = run / "reports"
    out.mkdir(exist_ok=True)
    stem = f"{Path(args.model_path).stem}_{args.mode}_{args.split}"
    (out / f"{stem}.json").write_text(report.to_json())
    (out / f"{stem}.txt").write_text(report.text() + "\n")
    print(report.text())
    return {"report": str(out / f"{stem}.json"), "rmse_tG": report.rmse("tG")}


def cmd_report(cfg: RunConfig, args) -> dict:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run = Path(args.run_dir) if args.run_dir else cfg.run_dir()
    if not run.is_dir():
        raise FileNotFoundError(f"run directory {run} not found")
    plots = run / "plots"
    plots.mkdir(exist_ok=True)
    written = []
    for hist in sorted((run / "models").glob("*.history.jsonl")):
        rows = [json.loads(line) for line in hist.read_text().splitlines() if line]
        fig, ax = plt.subplots(figsize=(6, 4))
        ep = [r["epoch"] for r in rows]
        for key in ("sup", "ebv", "ebs", "total", "val_sup"):
            vals = [r[key] for r in rows]
            if all(np.isfinite(vals)) and min(vals) > 0:
                ax.semilogy(ep, vals, label=key)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend()
        fig.tight_layout()
        out = plots / f"{hist.name.removesuffix('.history.jsonl')}_loss.png"
        fig.savefig(out, dpi=100)
        plt.close(fig)
        written.append(str(out))
    models = sorted((run / "models").glob("*.ckpt")) + sorted(
        p for p in (run / "models").glob("*.json") if not p.name.endswith(".history.jsonl"))
    if models and _data_dir(cfg).is_dir():
        data = load_split(_data_dir(cfg), read_manifest(cfg.manifest_path()))
        test = data.tables["test"]
        first = test.subset(np.flatnonzero(test.config == 0))
        for mp in models:
            model = load_model(mp)
            _, Y = build_xy(first, model.setting)
            try:
                P = rollout_predictions(model, first)
            except EvaluationError as err:
                log.warning("rollout of %s failed: %s", mp.name, err)
                continue
            G = model.layout.G
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.plot(first.timestep, Y[:, :G].mean(axis=1), label="simulator")
            ax.plot(first.timestep, P[:, :G].mean(axis=1), label=mp.stem)
            ax.set_xlabel("time step")
            ax.set_ylabel("mean gas temperature (K)")
            ax.set_title(first.names[0])
            ax.legend()
            fig.tight_layout()
            out = plots / f"{mp.stem}_rollout.png"
            fig.savefig(out, dpi=100)
            plt.close(fig)
            written.append(str(out))
    lines = []
    for rp in sorted((run / "reports").glob("*.json")) if (run / "reports").is_dir() else []:
        r = json.loads(rp.read_text())
        agg = r["aggregate"]
        lines.append(f"{rp.stem:<40}" + "".join(f"{agg[b]['rmse']:>12.4f}" for b in ("tG", "tSf", "tSo"))
                     + f"{agg['fr_next']['mmape']:>12.4f}")
    if lines:
        head = f"{'report':<40}{'RMSE tG':>12}{'RMSE tSf':>12}{'RMSE tSo':>12}{'mMAPE fr':>12}"
        (run / "comparison.txt").write_text("\n".join([head, "-" * len(head), *lines]) + "\n")
        written.append(str(run / "comparison.txt"))
    return {"files": written}


COMMANDS = {"gen-exchange": cmd_gen_exchange, "simulate": cmd_simulate, "recast": cmd_recast, "train": cmd_train,
            "evaluate": cmd_evaluate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zonefurnace", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    jobs = argparse.ArgumentParser(add_help=False)
    jobs.add_argument("config", help="run configuration (TOML)")
    jobs.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    sub.add_parser("gen-exchange", parents=[jobs], help="trace and save the exchange areas")
    s = sub.add_parser("simulate", parents=[jobs], help="simulate manifest configurations to CSV")
    s.add_argument("name", nargs="?", help="configuration name, e.g. 955_1220_1250_750")
    s.add_argument("--all", action="store_true", help="every configuration of the manifest")
    sub.add_parser("recast", parents=[jobs], help="IID records, splits and scalers")
    t = sub.add_parser("train", parents=[jobs], help="train and checkpoint a model")
    t.add_argument("--model", choices=MODELS, required=True)
    t.add_argument("--setting", type=int, choices=(1, 2), default=2)
    e = sub.add_parser("evaluate", parents=[jobs], help="IID or rollout evaluation report")
    e.add_argument("--model-path", required=True)
    e.add_argument("--mode", choices=("iid", "rollout"), default="iid")
    e.add_argument("--split", choices=SPLITS, default="test")
    r = sub.add_parser("report", parents=[jobs], help="plots and comparison table")
    r.add_argument("--run-dir", default=None)
    return p


def _exit_code(err: BaseException) -> int:
    if isinstance(err, (ConfigError, GeometryError, DatasetError)):
        return EXIT_CONFIG
    if isinstance(err, (SolverError, TrainingError, EvaluationError, StabilityError, ExchangeError,
                        FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(err, (OSError, TableSchemaError)):
        return EXIT_IO
    return EXIT_CONFIG if isinstance(err, ValueError) else EXIT_NUMERIC


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ZONEFURNACE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        args.jobs = 1
    try:
        cfg = load_config(args.config)
        result = COMMANDS[args.command](cfg, args)
    except Exception as err:  # every failure leaves as a classified exit code
        code = _exit_code(err)
        sys.stderr.write(json.dumps({"error": type(err).__name__, "message": str(err), "exit_code": code}) + "\n")
        log.debug("traceback", exc_info=True)
        return code
    print(json.dumps({"command": args.command, **result}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
