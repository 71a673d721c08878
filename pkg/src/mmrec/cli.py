"""``mmrec`` command line: synth, split, train, eval, eval-grid, sweep, gap, probe, compare, report."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from importlib import metadata
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from .dataset import DatasetError, load_dataset
from .gap import (
    PROBES,
    GapError,
    build_bank,
    gap_stats,
    pca_project,
    sample_items,
    separability_probe,
    write_gap,
    write_probe,
    write_projection,
)
from .metrics import MetricError, eval_model, read_per_user, subset_grid, write_csv, write_json, paired_ttest
from .models import ModelConfig, ModelError, build_model, preset
from .splits import Split, split_cold, split_warm
from .synth import CalibrationError, SynthConfig, generate
from .trainer import CheckpointError, TrainConfig, TrainingError, load_checkpoint, save_checkpoint, train

log = logging.getLogger("mmrec")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (DatasetError, ModelError, MetricError, CheckpointError, GapError, ValueError, KeyError, FileNotFoundError)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- helpers


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def hash_file_tree(path: str | Path) -> str:
    """sha256 over the relative names and bytes of every file below ``path``."""
    root = Path(path)
    h = hashlib.sha256()
    files = [root] if root.is_file() else sorted(p for p in root.rglob("*") if p.is_file())
    for p in files:
        h.update(str(p.relative_to(root) if p != root else p.name).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def write_manifest(out: Path, args, argv: Sequence[str], started: float, config: dict | None = None) -> None:
    manifest = {
        "command": ["mmrec", *argv],
        "subcommand": args.command,
        "seed": args.seed,
        "threads": args.threads,
        "config_hash": hashlib.sha256(json.dumps(config or {}, sort_keys=True).encode()).hexdigest(),
        "dataset_hash": hash_file_tree(args.data) if getattr(args, "data", None) else None,
        "versions": {
            "mmrec": _version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    (out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _need(args, *names):
    for n in names:
        if getattr(args, n, None) in (None, ""):
            raise UsageError(f"--{n.replace('_', '-')} is required for {args.command}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from exc


def load_configs(path: str | None, seed: int) -> tuple[ModelConfig, TrainConfig]:
    """Model config JSON with an optional nested "train" block."""
    if path is None:
        raw: dict = {}
    else:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    train_raw = dict(raw.get("train", {}))
    model_raw = {k: v for k, v in raw.items() if k != "train"}
    kind = model_raw.pop("kind", "sibrar")
    variant = model_raw.pop("variant", "SC")
    unknown = set(model_raw) - set(ModelConfig.__dataclass_fields__)
    if unknown:
        raise ModelError(f"unknown config keys: {sorted(unknown)}")
    model_raw.setdefault("seed", seed)
    train_raw.setdefault("seed", seed)
    cfg = preset(kind, variant, **model_raw)
    return cfg, TrainConfig.from_dict(train_raw)


def config_dict(cfg: ModelConfig, tcfg: TrainConfig) -> dict:
    return {**cfg.to_dict(), "train": asdict(tcfg)}


def load_run(run_dir: str | Path, data, split):
    """Rebuild a trained model (or a heuristic baseline) from a train output directory."""
    run = Path(run_dir)
    if (run / "params.json").exists():
        return load_checkpoint(run, data, split)
    cfg_path = run / "config.json"
    if not cfg_path.exists():
        raise CheckpointError(f"{run} holds neither a checkpoint nor a config")
    raw = json.loads(cfg_path.read_text(encoding="utf-8"))
    raw.pop("train", None)
    cfg = ModelConfig.from_dict(raw)
    if cfg.kind not in ("pop", "rand"):
        raise CheckpointError(f"{run} has a {cfg.kind} config but no parameters")
    return build_model(cfg, data, split.train_matrix(), scenario=split.scenario)


def _data_split(args):
    _need(args, "data", "split")
    data = load_dataset(Path(args.data) / "dataset.json" if Path(args.data).is_dir() else args.data)
    split = Split.load(args.split)
    if (split.n_users, split.n_items) != (data.n_users, data.n_items):
        raise DatasetError("split does not match the dataset dimensions")
    return data, split


def _modalities(args) -> list[str] | None:
    if getattr(args, "modalities", None):
        return [m.strip() for m in args.modalities.split(",") if m.strip()]
    return None


def fit(cfg: ModelConfig, tcfg: TrainConfig, data, split):
    model = build_model(cfg, data, split.train_matrix(), scenario=split.scenario)
    _, history = train(model, split, data, tcfg)
    return model, history


# ---------------------------------------------------------------- subcommands


def cmd_synth(args) -> dict:
    if args.config:
        cfg = SynthConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
        if args.seed_given:
            cfg.seed = args.seed
    else:
        cfg = SynthConfig(seed=args.seed if args.seed_given else SynthConfig().seed)
    generate(cfg, args.out)
    return cfg.to_dict()


def cmd_split(args) -> dict:
    _need(args, "data")
    data = load_dataset(Path(args.data) / "dataset.json")
    ratios = tuple(_floats(args.ratios))
    if len(ratios) != 3:
        raise UsageError("--ratios needs three values")
    if args.scenario == "warm":
        split = split_warm(data, ratios, args.seed)
    else:
        split = split_cold(data, args.scenario.split("-")[0], ratios, args.seed)
    split.save(args.out)
    return {"scenario": args.scenario, "ratios": list(ratios)}


def cmd_train(args) -> dict:
    data, split = _data_split(args)
    cfg, tcfg = load_configs(args.config, args.seed)
    model, history = fit(cfg, tcfg, data, split)
    out = Path(args.out)
    conf = config_dict(cfg, tcfg)
    (out / "config.json").write_text(json.dumps(conf, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "split.ref").write_text(str(Path(args.split).resolve()) + "\n", encoding="utf-8")
    if getattr(model, "trainable", False):
        save_checkpoint(model, out)
    history.write_csv(out / "history.csv")
    write_json(out / "history.json", {"best_epoch": history.best_epoch, "epochs": history.rows()})
    return conf


def cmd_eval(args) -> dict:
    _need(args, "run")
    data, split = _data_split(args)
    model = load_run(args.run, data, split)
    report = eval_model(model, split, data, args.k, _modalities(args), args.part)
    report.write(args.out)
    return {"run": str(args.run), "k": args.k, "part": args.part}


def cmd_eval_grid(args) -> dict:
    _need(args, "run")
    data, split = _data_split(args)
    model = load_run(args.run, data, split)
    grid = subset_grid(model, split, data, args.k, _modalities(args), args.part)
    grid.write(args.out)
    return {"run": str(args.run), "k": args.k}


def cell_seed(master: int, alpha_index: int, tau_index: int, n_taus: int) -> int:
    """Per-cell seed; cell (0, 0) reuses the master seed."""
    return (master + alpha_index * n_taus + tau_index) % 2**64


def run_sweep(cfg: ModelConfig, tcfg: TrainConfig, data, split, alphas, taus, k=10, master_seed=0) -> list[dict]:
    rows = []
    for ai, alpha in enumerate(alphas):
        for ti, tau in enumerate(taus):
            seed = cell_seed(master_seed, ai, ti, len(taus))
            row = {"alpha": alpha, "tau": tau, "ratio": alpha / tau if tau > 0 else float("nan"), "seed": seed}
            try:
                loss = {**asdict(cfg.loss), "alpha": alpha, "tau": tau}
                cell_cfg = ModelConfig.from_dict({**cfg.to_dict(), "loss": loss, "seed": seed})
                cell_tcfg = TrainConfig(**{**asdict(tcfg), "seed": seed})
                model, history = fit(cell_cfg, cell_tcfg, data, split)
                rep = eval_model(model, split, data, k)
                g = gap_stats(build_bank(model))
                row.update(
                    ndcg10=rep.mean["ndcg"], intra_cs=g["intra_CS"], intra_ed=g["intra_ED"],
                    best_epoch=history.best_epoch, status="ok", error="",
                )
            except (TrainingError, ModelError, MetricError, GapError, FloatingPointError) as exc:
                row.update(ndcg10=float("nan"), intra_cs=float("nan"), intra_ed=float("nan"), best_epoch=0,
                           status="failed", error=str(exc))
            rows.append(row)
    return rows


SWEEP_COLUMNS = ["alpha", "tau", "ratio", "ndcg10", "intra_cs", "intra_ed", "seed", "best_epoch", "status", "error"]


def cmd_sweep(args) -> dict:
    data, split = _data_split(args)
    cfg, tcfg = load_configs(args.config, args.seed)
    if cfg.kind not in ("sibrar", "mubrar"):
        raise UsageError("sweep needs a multimodal model config")
    cfg = ModelConfig.from_dict({**cfg.to_dict(), "variant": "SC"})
    alphas, taus = _floats(args.alphas), _floats(args.taus)
    if not alphas or not taus or any(t <= 0 for t in taus) or any(a < 0 for a in alphas):
        raise UsageError("--alphas must be >= 0 and --taus > 0")
    rows = run_sweep(cfg, tcfg, data, split, alphas, taus, args.k, args.seed)
    out = Path(args.out)
    write_csv(out / "sweep.csv", rows, SWEEP_COLUMNS)
    write_json(out / "sweep.json", rows)
    return {**config_dict(cfg, tcfg), "alphas": alphas, "taus": taus}


def _bank(args):
    _need(args, "run")
    data, split = _data_split(args)
    model = load_run(args.run, data, split)
    if not hasattr(model, "main_tower") or not model.main_tower.multimodal:
        raise UsageError("gap diagnostics need a multimodal model")
    items = None if args.items == "all" else np.unique(split.part(args.items)[:, 1])
    return build_bank(model, items, _modalities(args))


def cmd_gap(args) -> dict:
    bank = _bank(args)
    write_gap(gap_stats(bank), args.out)
    rows = sample_items(bank.n_items, args.sample, args.seed)
    write_projection(pca_project(bank.subset(rows), 2), args.out)
    return {"run": str(args.run), "items": args.items}


def cmd_probe(args) -> dict:
    bank = _bank(args)
    result = separability_probe(bank, args.train_fraction, args.n_seeds, args.seed, PROBES[args.probe])
    write_probe(result, args.out)
    return {"run": str(args.run), "probe": args.probe, "n_seeds": args.n_seeds}


def _per_user_path(p: str) -> Path:
    path = Path(p)
    return path / "per_user.csv" if path.is_dir() else path


def cmd_compare(args) -> dict:
    _need(args, "a", "b")
    a = read_per_user(_per_user_path(args.a))
    b = read_per_user(_per_user_path(args.b))
    if args.metric not in a or args.metric not in b:
        raise UsageError(f"metric {args.metric!r} missing from a per-user file")
    va, vb = a[args.metric], b[args.metric]
    if set(va) != set(vb):
        raise MetricError("the two runs were evaluated on different user sets")
    users = sorted(va)
    res = paired_ttest([va[u] for u in users], [vb[u] for u in users], args.n_comparisons)
    verdict = {"metric": args.metric, "n_users": len(users), **res.as_dict()}
    out = Path(args.out)
    write_json(out / "compare.json", verdict)
    write_csv(out / "compare.csv", [verdict], list(verdict))
    print(
        f"{args.metric}: t={res.t:.4f} p={res.p:.4g} threshold={res.threshold:.4g} "
        f"-> {'significant' if res.significant else 'not significant'}"
    )
    return verdict


def cmd_report(args) -> dict:
    _need(args, "run")
    run = Path(args.run)
    lines = [f"# Report for {run.name}", ""]
    for csv_path in sorted(run.rglob("*.csv")):
        text = csv_path.read_text(encoding="utf-8").strip().splitlines()
        if not text:
            continue
        header = text[0].split(",")
        lines += [f"## {csv_path.relative_to(run)}", "", "| " + " | ".join(header) + " |",
                  "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r.split(",")) + " |" for r in text[1 : 1 + args.max_rows]]
        if len(text) - 1 > args.max_rows:
            lines.append(f"\n({len(text) - 1 - args.max_rows} more rows)")
        lines.append("")
    out = Path(args.out)
    (out / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"run": str(run)}


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "eval-grid": cmd_eval_grid,
    "sweep": cmd_sweep,
    "gap": cmd_gap,
    "probe": cmd_probe,
    "compare": cmd_compare,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    shared = Parser(add_help=False)
    shared.add_argument("--data", help="dataset directory (with dataset.json)")
    shared.add_argument("--split", help="split directory")
    shared.add_argument("--config", help="JSON config file")
    shared.add_argument("--out", required=True, help="output directory")
    shared.add_argument("--seed", type=int, default=None)
    shared.add_argument("--k", type=int, default=10)
    shared.add_argument("--threads", type=int, default=1)
    shared.add_argument("--verbose", action="store_true")

    p = Parser(prog="mmrec", description="Single- and multi-branch multimodal recommenders.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)
    sub.add_parser("synth", parents=[shared], help="generate a synthetic dataset")
    sp = sub.add_parser("split", parents=[shared], help="split interactions")
    sp.add_argument("--scenario", choices=["warm", "user-cold", "item-cold"], default="warm")
    sp.add_argument("--ratios", default="0.8,0.1,0.1")
    sub.add_parser("train", parents=[shared], help="train a model")
    for name in ("eval", "eval-grid"):
        e = sub.add_parser(name, parents=[shared])
        e.add_argument("--run", help="train output directory")
        e.add_argument("--modalities", help="comma-separated modality subset")
        e.add_argument("--part", choices=["val", "test"], default="test")
    sw = sub.add_parser("sweep", parents=[shared], help="contrastive (alpha, tau) grid")
    sw.add_argument("--alphas", default="0,0.01,0.1")
    sw.add_argument("--taus", default="0.01,0.1,1")
    for name in ("gap", "probe"):
        g = sub.add_parser(name, parents=[shared])
        g.add_argument("--run")
        g.add_argument("--modalities")
        g.add_argument("--items", choices=["all", "train", "val", "test"], default="test")
        if name == "gap":
            g.add_argument("--sample", type=int, default=500, help="items exported to projection.csv")
        else:
            g.add_argument("--probe", choices=sorted(PROBES), default="forest")
            g.add_argument("--n-seeds", type=int, default=20)
            g.add_argument("--train-fraction", type=float, default=0.8)
    c = sub.add_parser("compare", parents=[shared], help="paired t-test between two evaluations")
    c.add_argument("--a")
    c.add_argument("--b")
    c.add_argument("--metric", default="ndcg")
    c.add_argument("--n-comparisons", type=int, default=1)
    r = sub.add_parser("report", parents=[shared], help="markdown summary of a run's CSV files")
    r.add_argument("--run")
    r.add_argument("--max-rows", type=int, default=40)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"mmrec: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if args.threads < 1:
        print("mmrec: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with threadpool_limits(limits=args.threads):
            config = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mmrec: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingError, CalibrationError, FloatingPointError) as exc:
        print(f"mmrec: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except VALIDATION_ERRORS as exc:
        print(f"mmrec: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - anything else is a runtime failure
        log.exception("unexpected failure")
        print(f"mmrec: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_manifest(out, args, argv, started, config)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
