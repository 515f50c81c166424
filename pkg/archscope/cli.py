"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Experiment Harness
==============================
One subcommand per pipeline, each driven by a YAML config:

    train            scratch predictors over modes x budgets x seeds
    transfer-device  pretrain on training devices, adapt to test devices
    transfer-space   pretrain on one space, adapt to another
    search           predictor-guided architecture search
    gen-synthetic    write a synthetic benchmark
    eval             correlation matrices, closest devices, adversarial splits
    ablate-proxies   retrain after removing good / bad proxies

Usage:
    python -m archscope train --config configs/train.yaml --seeds 0 1 2
"""

import argparse
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from itertools import permutations
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import VERSION
from .config import (TrainConfig, config_hash, load_experiment_config, resolve_data_path,
                     setup_logging)
from .dataio import (BenchmarkDataset, SyntheticSpec, anchored_correlation_loadings, generate_space_pair,
                     generate_synthetic, load_dataset, make_split, save_dataset, save_schema,
                     uniform_correlation_loadings)
from .encoding import EncodingKind, EncodingMode
from .errors import ArchScopeError, ArgumentError, ConfigError, InfeasibleSplitError, IntegrityError
from .hw_embedding import EmbeddingKind, save_registry
from .metrics import (DeviceSplit, bucket_correlations, build_adversarial_split, closest_train_device,
                      correlation_matrix, proxy_target_correlations)
from .predictor import (PredictionTask, ablate_proxies, evaluate, finetune_device, finetune_space,
                        register_device, save_checkpoint, train_scratch)
from .search import run_search, samples_to_reach, top_fraction_threshold
from . import plots

logger = logging.getLogger(__name__)

COMMANDS = ("train", "transfer-device", "transfer-space", "search", "gen-synthetic", "eval", "ablate-proxies")
DEFAULT_OUT_DIR = "results"


# ============================================================================
# HELPERS
# ============================================================================

def write_csv(df: pd.DataFrame, path: Path, cfg: Dict[str, Any], index: bool = False) -> Path:
    """Provenance comment + header + rows, written to a temp file then renamed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(f"# config_hash={config_hash(cfg)} version={VERSION} command={cfg.get('command')}\n")
            df.to_csv(f, index=index)
        check = pd.read_csv(tmp, comment="#", index_col=0 if index else None)
        if check.shape != df.shape:
            raise IntegrityError(f"{path.name}: wrote {df.shape} but read back {check.shape}")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def _out_dir(cfg: Dict[str, Any]) -> Path:
    return Path(cfg.get("out_dir") or DEFAULT_OUT_DIR)


def _seeds(cfg: Dict[str, Any]) -> List[int]:
    return list(cfg.get("seeds") or [0])


def _train_config(cfg: Dict[str, Any]) -> TrainConfig:
    return TrainConfig.from_dict(cfg.get("train"))


def _load(cfg: Dict[str, Any], path: str, schema: Optional[str] = None) -> BenchmarkDataset:
    return load_dataset(resolve_data_path(path, cfg),
                        resolve_data_path(schema, cfg) if schema else None,
                        unit_multiplier=float(cfg.get("unit_multiplier", 1.0)))


def _mode(name: str, dataset: BenchmarkDataset, cfg: Dict[str, Any], exclude: Sequence[str] = ()) -> EncodingMode:
    kind = EncodingKind(name)
    proxies = tuple(cfg.get("proxies") or dataset.proxy_names) if kind.uses_zcp else ()
    devices = ()
    if kind.uses_hwl:
        devices = tuple(cfg.get("reference_devices") or [d for d in dataset.device_ids if d not in exclude])
    return EncodingMode(kind, proxies, devices)


def _map(fn: Callable, jobs: List, workers: int) -> List:
    """Ordered results; a process pool when more than one worker is requested."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# ============================================================================
# TRAIN
# ============================================================================

def _train_job(job) -> Dict:
    dataset, mode_name, budget, seed, cfg = job
    target = cfg.get("target", "accuracy")
    device = cfg.get("device")
    train_ids, eval_ids = make_split(dataset, train_count=budget, seed=seed, eval_count=cfg.get("eval_count"))
    mode = _mode(mode_name, dataset, cfg, exclude=[device] if device else [])
    task = PredictionTask(target, dataset.space_id, tuple(train_ids), tuple(eval_ids),
                          device_id=device if target == "latency" else None)
    model = train_scratch(dataset, task, mode, _train_config(cfg).with_seed(seed))
    return {"mode": mode_name, "budget": budget, "seed": seed, "rho": evaluate(model, dataset, eval_ids)}


def cmd_train(cfg: Dict[str, Any]) -> List[Path]:
    dataset = _load(cfg, cfg["dataset"], cfg.get("schema"))
    jobs = [(dataset, m, b, s, cfg) for m in cfg["modes"] for b in cfg["budgets"] for s in _seeds(cfg)]
    df = pd.DataFrame(_map(_train_job, jobs, cfg.get("workers", 1)), columns=["mode", "budget", "seed", "rho"])
    summary = df.groupby(["mode", "budget"])["rho"].agg(["mean", "std", "min", "max"]).reset_index()

    out = _out_dir(cfg)
    paths = [write_csv(df, out / "train_rho.csv", cfg), write_csv(summary, out / "train_summary.csv", cfg)]
    if cfg.get("plots"):
        paths.append(plots.plot_rho_vs_budget(df, out / "train_rho.png"))
    return paths


# ============================================================================
# TRANSFER ACROSS DEVICES
# ============================================================================

def _pretrained_paths(cfg: Dict[str, Any], threshold: float, mode: str, embedding: str, budget: int,
                     seed: int) -> Tuple[Path, Path]:
    stem = _out_dir(cfg) / "models" / f"{mode}_{embedding}_t{threshold:g}_b{budget}_s{seed}"
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + "_registry.yaml")


def _transfer_device_job(job) -> List[Dict]:
    dataset, threshold, train_devices, test_devices, mode_name, emb_name, budget, adapt, seed, cfg = job
    tcfg = _train_config(cfg).with_seed(seed)
    mode = _mode(mode_name, dataset, cfg, exclude=list(train_devices) + list(test_devices))
    pretrain_ids, rest = make_split(dataset, train_count=budget, seed=seed)
    task = PredictionTask("latency", dataset.space_id, tuple(pretrain_ids), device_ids=tuple(train_devices))
    model = train_scratch(dataset, task, mode, tcfg, EmbeddingKind(emb_name))
    if cfg.get("save_models"):
        checkpoint, registry = _pretrained_paths(cfg, threshold, mode_name, emb_name, budget, seed)
        save_checkpoint(model, checkpoint)
        save_registry(model.embedding, registry)

    # Sample-mode reference measurements come out of the adaptation budget
    refs = list(model.embedding.reference_archs)
    if adapt < len(refs):
        raise ArgumentError(f"adapt_budget {adapt} is below the {len(refs)} Sample reference architectures")
    rows = []
    for device in test_devices:
        measured = [a for a in rest if device in dataset.get(a).latencies]
        extra, eval_ids = make_split(dataset, train_count=adapt - len(refs), seed=seed, pool=measured)
        samples = dataset.subset(refs + extra)
        adapted, donor = register_device(model, device, samples, tcfg.init_samples)
        adapted = finetune_device(adapted, device, samples, tcfg)
        rows.append({
            "threshold": threshold, "mode": mode_name, "embedding": emb_name, "pretrain_budget": budget,
            "adapt_budget": adapt, "seed": seed, "device": device,
            "rho": evaluate(adapted, dataset, eval_ids, device),
            "donor": donor.donor_id if donor else "", "donor_rho": donor.rho if donor else np.nan,
            "n_train_devices": len(train_devices),
            "total_measurements": budget * len(train_devices) + adapt,
        })
    return rows


def cmd_transfer_device(cfg: Dict[str, Any]) -> List[Path]:
    dataset = _load(cfg, cfg["dataset"], cfg.get("schema"))
    test = list(cfg["test_devices"])
    missing = [d for d in test if d not in dataset.device_ids]
    if missing:
        raise ConfigError("Unknown test devices", [f"'{d}' not in dataset" for d in missing])
    train = list(cfg.get("train_devices") or [d for d in dataset.device_ids if d not in test])
    matrix = correlation_matrix(dataset, "latency")

    splits = []
    for threshold in cfg.get("adversarial_thresholds") or [1.0]:
        try:
            split = build_adversarial_split(matrix, test, float(threshold), candidates=train)
        except InfeasibleSplitError as e:
            print(f"[WARN] threshold {threshold}: {e}")
            continue
        splits.append((float(threshold), split))

    jobs = [(dataset, t, list(split.train), test, m, e, b, int(cfg.get("adapt_budget", 10)), s, cfg)
            for t, split in splits
            for m in cfg.get("modes") or ["Vec"]
            for e in cfg.get("embeddings") or ["Table"]
            for b in cfg.get("pretrain_budgets") or [900]
            for s in _seeds(cfg)]
    rows = [row for part in _map(_transfer_device_job, jobs, cfg.get("workers", 1)) for row in part]
    df = pd.DataFrame(rows)
    if df.empty:
        raise InfeasibleSplitError("no adversarial threshold left any training device")

    closest = {t: closest_train_device(split, matrix) for t, split in splits}
    df["closest_train"] = [closest[t][d][0] for t, d in zip(df["threshold"], df["device"])]
    df["closest_rho"] = [closest[t][d][1] for t, d in zip(df["threshold"], df["device"])]

    keys = ["threshold", "mode", "embedding", "pretrain_budget", "total_measurements"]
    table = df.pivot_table(index=keys, columns="device", values="rho", aggfunc="mean")
    table["mean"] = table.mean(axis=1)
    table = table.reset_index()
    table.columns.name = None

    out = _out_dir(cfg)
    paths = [write_csv(df, out / "transfer_device.csv", cfg),
             write_csv(table, out / "transfer_device_summary.csv", cfg)]
    if cfg.get("save_models"):
        paths.extend(p for job in jobs for p in _pretrained_paths(cfg, job[1], job[4], job[5], job[6], job[8]))
    if cfg.get("plots"):
        paths.append(plots.plot_correlation_heatmap(matrix.to_frame(), out / "device_correlation.png"))
    return paths


# ============================================================================
# TRANSFER ACROSS SPACES
# ============================================================================

def _transfer_space_job(job) -> List[Dict]:
    source, target, mode, budgets, seed, cfg = job
    tcfg = _train_config(cfg).with_seed(seed)
    kind = cfg.get("target", "accuracy")
    device = cfg.get("device") if kind == "latency" else None
    src_ids, _ = make_split(source, train_fraction=float(cfg.get("source_fraction", 0.15)), seed=seed)
    src_model = train_scratch(source, PredictionTask(kind, source.space_id, tuple(src_ids), device_id=device),
                              mode, tcfg)
    rows = []
    for budget in budgets:
        sample_ids, eval_ids = make_split(target, train_count=budget, seed=seed)
        transferred = finetune_space(src_model, target, sample_ids, tcfg)
        scratch = train_scratch(target, PredictionTask(kind, target.space_id, tuple(sample_ids), tuple(eval_ids),
                                                       device_id=device), mode, tcfg)
        t_rho = evaluate(transferred, target, eval_ids)
        s_rho = evaluate(scratch, target, eval_ids)
        rows.append({"source": source.space_id, "target": target.space_id, "budget": budget, "seed": seed,
                     "transfer_rho": t_rho, "scratch_rho": s_rho,
                     "frozen_rho": evaluate(src_model, target, eval_ids), "improvement": t_rho - s_rho})
    return rows


def cmd_transfer_space(cfg: Dict[str, Any]) -> List[Path]:
    schemas = list(cfg.get("schemas") or [])
    if schemas and len(schemas) != len(cfg["datasets"]):
        raise ConfigError("Schema list does not match datasets", ["give one schema per dataset or none"])
    spaces = [_load(cfg, p, schemas[i] if schemas else None) for i, p in enumerate(cfg["datasets"])]
    ids = [s.space_id for s in spaces]
    if len(set(ids)) != len(ids):
        raise ConfigError("Datasets share a space_id", [f"space ids: {ids}"])

    # One encoding for every space: proxies / devices present everywhere
    shared_cfg = dict(cfg)
    if cfg["mode"] == "ZCP" and not cfg.get("proxies"):
        shared_cfg["proxies"] = sorted(set.intersection(*(set(s.proxy_names) for s in spaces)))
    if cfg["mode"] == "HWL" and not cfg.get("reference_devices"):
        common = set.intersection(*(set(s.device_ids) for s in spaces)) - {cfg.get("device")}
        shared_cfg["reference_devices"] = sorted(common)
    mode = _mode(cfg["mode"], spaces[0], shared_cfg)

    jobs = [(src, tgt, mode, list(cfg["budgets"]), s, cfg)
            for src, tgt in permutations(spaces, 2) for s in _seeds(cfg)]
    df = pd.DataFrame([row for part in _map(_transfer_space_job, jobs, cfg.get("workers", 1)) for row in part])
    improvement = (df.pivot_table(index=["budget", "source"], columns="target", values="improvement", aggfunc="mean")
                   .reset_index())
    improvement.columns.name = None

    out = _out_dir(cfg)
    paths = [write_csv(df, out / "transfer_space.csv", cfg),
             write_csv(improvement, out / "transfer_space_improvement.csv", cfg)]
    if cfg.get("plots"):
        long = pd.concat([df.assign(mode="transfer", rho=df["transfer_rho"]),
                          df.assign(mode="scratch", rho=df["scratch_rho"])])
        paths.append(plots.plot_rho_vs_budget(long, out / "transfer_space.png"))
    return paths


# ============================================================================
# SEARCH
# ============================================================================

def _search_job(job) -> Dict:
    dataset, mode_name, seed, cfg = job
    target = cfg.get("target", "accuracy")
    device = cfg.get("device") if target == "latency" else None
    mode = _mode(mode_name, dataset, cfg, exclude=[device] if device else [])
    state, trace = run_search(dataset, mode, int(cfg["budget"]), seed, int(cfg.get("batch", 10)),
                              _train_config(cfg), target, device)
    threshold = top_fraction_threshold(dataset, float(cfg.get("top_fraction", 0.01)), target, device)
    trace.insert(0, "seed", seed)
    trace.insert(0, "mode", mode_name)
    return {"trace": trace, "mode": mode_name, "seed": seed,
            "samples_to_top": samples_to_reach(state, threshold), "best_target": state.best_so_far[1]}


def cmd_search(cfg: Dict[str, Any]) -> List[Path]:
    dataset = _load(cfg, cfg["dataset"], cfg.get("schema"))
    jobs = [(dataset, m, s, cfg) for m in cfg["modes"] for s in _seeds(cfg)]
    results = _map(_search_job, jobs, cfg.get("workers", 1))
    trace = pd.concat([r["trace"] for r in results], ignore_index=True)
    efficiency = pd.DataFrame([{k: r[k] for k in ("mode", "seed", "samples_to_top", "best_target")}
                               for r in results])
    median = trace.groupby(["mode", "round", "samples"])["best_target"].median().reset_index()

    out = _out_dir(cfg)
    paths = [write_csv(trace, out / "search_trace.csv", cfg),
             write_csv(median, out / "search_median.csv", cfg),
             write_csv(efficiency, out / "search_efficiency.csv", cfg)]
    if cfg.get("plots"):
        paths.append(plots.plot_search_curves(trace, out / "search.png"))
    return paths


# ============================================================================
# SYNTHETIC DATA
# ============================================================================

def _save_with_schema(dataset: BenchmarkDataset, cfg: Dict[str, Any], output: str,
                      schema_output: Optional[str]) -> List[Path]:
    path = resolve_data_path(output, cfg)
    save_dataset(dataset, path)
    paths = [path]
    if schema_output:
        schema_path = resolve_data_path(schema_output, cfg)
        save_schema(dataset.schema, schema_path)
        paths.append(schema_path)
    return paths


def cmd_gen_synthetic(cfg: Dict[str, Any]) -> List[Path]:
    values = dict(cfg["synthetic"])
    device_rho = values.pop("device_rho", None)
    anchor_rhos = values.pop("anchor_rhos", None)
    if device_rho is not None and anchor_rhos is not None:
        raise ConfigError("Conflicting loading recipes", ["give device_rho or anchor_rhos, not both"])
    spec = SyntheticSpec.from_dict(values)
    rng = np.random.default_rng(spec.seed)
    if device_rho is not None:
        spec = SyntheticSpec.from_dict({**values, "device_loadings": uniform_correlation_loadings(
            spec.n_devices, float(device_rho), spec.latent_dim, rng)})
    elif anchor_rhos is not None:
        spec = SyntheticSpec.from_dict({**values, "n_devices": len(anchor_rhos) + 1,
                                        "device_loadings": anchored_correlation_loadings(
                                            anchor_rhos, spec.latent_dim, rng)})

    pair = cfg.get("pair")
    if not pair:
        return _save_with_schema(generate_synthetic(spec), cfg, cfg["output"], cfg.get("schema_output"))

    missing = [k for k in ("target_rho", "output") if k not in pair]
    if missing:
        raise ConfigError("Incomplete pair section", [f"pair.{k} is required" for k in missing])
    first, second = generate_space_pair(spec, float(pair["target_rho"]),
                                        second_space_id=str(pair.get("space_id", f"{spec.space_id}_b")),
                                        second_node_count=int(pair.get("node_count", 6)),
                                        seed=int(pair.get("seed", spec.seed)))
    return (_save_with_schema(first, cfg, cfg["output"], cfg.get("schema_output"))
            + _save_with_schema(second, cfg, pair["output"], pair.get("schema_output")))


# ============================================================================
# EVAL
# ============================================================================

def cmd_eval(cfg: Dict[str, Any]) -> List[Path]:
    dataset = _load(cfg, cfg["dataset"], cfg.get("schema"))
    out = _out_dir(cfg)
    paths = []

    devices = correlation_matrix(dataset, "latency") if len(dataset.device_ids) >= 2 else None
    if devices is not None:
        paths.append(write_csv(devices.to_frame(), out / "device_correlation.csv", cfg, index=True))
        if cfg.get("bucket"):
            paths.append(write_csv(bucket_correlations(devices), out / "device_correlation_bucketed.csv",
                                   cfg, index=True))
        if cfg.get("plots"):
            paths.append(plots.plot_correlation_heatmap(devices.to_frame(), out / "device_correlation.png"))

    if len(dataset.proxy_names) >= 2:
        proxies = correlation_matrix(dataset, "proxy")
        paths.append(write_csv(proxies.to_frame(), out / "proxy_correlation.csv", cfg, index=True))
        if cfg.get("bucket"):
            paths.append(write_csv(bucket_correlations(proxies), out / "proxy_correlation_bucketed.csv",
                                   cfg, index=True))
    target = cfg.get("target", "accuracy")
    if target == "latency" or any(r.accuracy is not None for r in dataset.records):
        report = proxy_target_correlations(dataset, target, cfg.get("device"))
        paths.append(write_csv(report, out / "proxy_target.csv", cfg))

    test = list(cfg.get("test_devices") or [])
    if test and devices is not None:
        train = [d for d in dataset.device_ids if d not in test]
        closest = closest_train_device(DeviceSplit(train, test), devices)
        report = pd.DataFrame([{"device": d, "closest_train": c, "rho": r} for d, (c, r) in closest.items()])
        paths.append(write_csv(report, out / "closest_train.csv", cfg))

        rows = []
        for threshold in cfg.get("thresholds") or []:
            try:
                split = build_adversarial_split(devices, test, float(threshold))
            except InfeasibleSplitError as e:
                print(f"[WARN] threshold {threshold}: {e}")
                rows.extend({"threshold": threshold, "device": d, "n_train": 0, "max_train_rho": np.nan,
                             "train_devices": ""} for d in test)
                continue
            rows.extend({"threshold": threshold, "device": d, "n_train": len(split.train),
                         "max_train_rho": split.max_train_rho[d], "train_devices": ";".join(split.train)}
                        for d in test)
        if rows:
            paths.append(write_csv(pd.DataFrame(rows), out / "adversarial_splits.csv", cfg))
    return paths


# ============================================================================
# PROXY ABLATION
# ============================================================================

def _ablation_job(job) -> pd.DataFrame:
    dataset, seed, cfg = job
    target = cfg.get("target", "accuracy")
    device = cfg.get("device") if target == "latency" else None
    train_ids, eval_ids = make_split(dataset, train_count=int(cfg["budget"]), seed=seed)
    task = PredictionTask(target, dataset.space_id, tuple(train_ids), tuple(eval_ids), device_id=device)
    proxies = list(cfg.get("proxies") or dataset.proxy_names)
    return ablate_proxies(dataset, task, proxies, list(cfg["removals"]), _train_config(cfg).with_seed(seed))


def cmd_ablate_proxies(cfg: Dict[str, Any]) -> List[Path]:
    dataset = _load(cfg, cfg["dataset"], cfg.get("schema"))
    parts = _map(_ablation_job, [(dataset, s, cfg) for s in _seeds(cfg)], cfg.get("workers", 1))
    df = pd.concat(parts, ignore_index=True)
    summary = df.groupby(["removed", "k"])["rho"].agg(["mean", "std"]).reset_index()
    out = _out_dir(cfg)
    return [write_csv(df, out / "proxy_ablation.csv", cfg),
            write_csv(summary, out / "proxy_ablation_summary.csv", cfg)]


HANDLERS: Dict[str, Callable[[Dict[str, Any]], List[Path]]] = {
    "train": cmd_train,
    "transfer-device": cmd_transfer_device,
    "transfer-space": cmd_transfer_space,
    "search": cmd_search,
    "gen-synthetic": cmd_gen_synthetic,
    "eval": cmd_eval,
    "ablate-proxies": cmd_ablate_proxies,
}


# ============================================================================
# MAIN ENTRY POINT
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="archscope",
        description="Monarch Castle ArchScope - few-shot architecture performance predictors"
    )
    parser.add_argument("--version", action="version", version=f"archscope {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", type=Path, required=True, help="YAML experiment config")
        p.add_argument("--out-dir", type=str, help="Output directory (overrides config)")
        p.add_argument("--seeds", type=int, nargs="+", help="Seed list (overrides config)")
        p.add_argument("--workers", type=int, help="Parallel seed workers (overrides config)")
        p.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING or ERROR")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        setup_logging(args.log_level)
        overrides = {"out_dir": args.out_dir, "seeds": args.seeds, "workers": args.workers}
        cfg = load_experiment_config(args.config, overrides)
        if cfg["command"] != args.command:
            raise ConfigError("Config is for another command",
                              [f"config command '{cfg['command']}' but ran '{args.command}'"])
        paths = HANDLERS[args.command](cfg)
    except ConfigError as e:
        print(f"[ERROR] {e}")
        return 2
    except ArchScopeError as e:
        print(f"[ERROR] {type(e).__name__}: {e}")
        return 1
    except OSError as e:
        print(f"[ERROR] {e}")
        return 1
    for path in paths:
        if path is not None:
            print(f"[OK] Saved {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
