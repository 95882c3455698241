"""Command-line pipeline: simulate, train, project, search, eval, diagnose, grid.

Every subcommand resolves its settings (flag > config file > default), writes
its artifacts plus exactly one manifest.json into --out, and exits nonzero
with a JSON error object on stderr when anything fails. All randomness is
seeded from the resolved config, so reruns reproduce artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, evaluation, losses, manifest, spectral
from .configfile import Config, parse_config
from .embeddings import (
    EmbeddingSet,
    load_embeddings,
    load_projection,
    normalize_rows,
    project,
    save_embeddings,
    save_projection,
)
from .errors import ConfigError, OriginIdError
from .matcher import BACKEND, build_index, read_matches, search, write_matches
from .simulate import (
    SimDataset,
    SimModelProfile,
    generate_dataset,
    read_ground_truth,
    write_ground_truth,
)
from .training import TrainConfig, train

_SIM_KEYS = {"dim", "n_origins", "strengths", "master_seed"}
_TRAIN_KEYS = {"rank", "loss", "scale", "margin", "peak_lr", "warmup_steps",
               "total_steps", "batch_size", "seed", "weight_decay", "init"}
_GRID_KEYS = (_SIM_KEYS | _TRAIN_KEYS | {
    "eval_seed", "train_profile", "train_strength", "ranks", "losses", "k", "metric",
}) - {"rank", "loss"}


def _resolve_threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("OID_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"OID_THREADS must be an integer, got {env!r}")
    return 1


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _profiles_from_config(cfg: Config, dim: int) -> list[SimModelProfile]:
    groups = cfg.subkeys("profile")
    if not groups:
        raise ConfigError(f"{cfg.source}: no profile.<name>.* entries")
    profiles = []
    for name in sorted(groups):
        fields = groups[name]
        unknown = set(fields) - {"sigma_resid", "style_seed"}
        if unknown:
            raise ConfigError(
                f"{cfg.source}: unknown profile field(s) {sorted(unknown)} for {name!r}")
        profiles.append(SimModelProfile(
            name=name,
            sigma_resid=float(fields.get("sigma_resid", "0.5")),
            style_seed=int(fields.get("style_seed", "1")),
            dim=dim,
        ))
    return profiles


def _strength_tag(strength: float) -> str:
    return f"{strength:g}"


def _write_dataset(dataset: SimDataset, out: Path) -> dict:
    outputs = {}
    origins_path = out / "origins.oide"
    save_embeddings(dataset.origins, origins_path)
    outputs["origins"] = str(origins_path)
    for (profile, strength), qset in sorted(dataset.queries.items()):
        qpath = out / f"queries_{profile}_{_strength_tag(strength)}.oide"
        save_embeddings(qset, qpath)
        outputs[f"queries:{profile}:{_strength_tag(strength)}"] = str(qpath)
    truth_path = out / "truth.tsv"
    write_ground_truth(truth_path, dataset.ground_truth)
    outputs["truth"] = str(truth_path)
    return outputs


def cmd_simulate(args) -> int:
    cfg = parse_config(args.config)
    cfg.check_keys(_SIM_KEYS, prefixes=("profile.",))
    dim = cfg.get_int("dim", 64)
    n_origins = cfg.get_int("n_origins", 100)
    strengths = cfg.get_floats("strengths", [0.5])
    if args.strength is not None:
        strengths = [args.strength]
    seed = args.seed if args.seed is not None else cfg.get_int("master_seed", 0)
    profiles = _profiles_from_config(cfg, dim)

    out = _out_dir(args)
    timer = manifest.StageTimer()
    with timer.measure("simulate"):
        dataset = generate_dataset(n_origins, dim, profiles, strengths, seed)
    timer.set_rate("simulate", "s_per_pair", n_origins * len(profiles) * len(strengths))
    with timer.measure("write"):
        outputs = _write_dataset(dataset, out)

    resolved = {
        "dim": dim, "n_origins": n_origins, "strengths": strengths,
        "master_seed": seed,
        "profiles": [{"name": p.name, "sigma_resid": p.sigma_resid,
                      "style_seed": p.style_seed} for p in profiles],
    }
    manifest.write_manifest(out, manifest.build_manifest(
        "simulate", resolved, {"config": str(args.config)}, outputs, seed,
        _resolve_threads(args), timer))
    return 0


def _train_config_from(cfg: Config, args) -> TrainConfig:
    rank = args.rank if args.rank is not None else cfg.get_int("rank", 32)
    loss_kind = args.loss if args.loss is not None else cfg.get("loss", "cosface")
    seed = args.seed if args.seed is not None else cfg.get_int("seed", 0)
    return TrainConfig(
        m=rank,
        loss_kind=loss_kind,
        scale=cfg.get_float("scale"),
        margin=cfg.get_float("margin"),
        peak_lr=cfg.get_float("peak_lr", 3.5e-4),
        warmup_steps=cfg.get_int("warmup_steps"),
        total_steps=cfg.get_int("total_steps", 1000),
        batch_size=cfg.get_int("batch_size", 128),
        seed=seed,
        weight_decay=cfg.get_float("weight_decay", 0.0),
        init=cfg.get("init", "gaussian"),
    )


def _train_config_dict(tc: TrainConfig) -> dict:
    return {"rank": tc.m, "loss": tc.loss_kind, "scale": tc.scale,
            "margin": tc.margin, "peak_lr": tc.peak_lr,
            "warmup_steps": tc.warmup_steps, "total_steps": tc.total_steps,
            "batch_size": tc.batch_size, "seed": tc.seed,
            "weight_decay": tc.weight_decay, "init": tc.init}


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    cfg.check_keys(_TRAIN_KEYS)
    tc = _train_config_from(cfg, args)

    origins = load_embeddings(args.origins)
    generated = load_embeddings(args.generated)
    truth = read_ground_truth(args.truth)

    out = _out_dir(args)
    log_path = out / "train_log.jsonl"
    timer = manifest.StageTimer()
    with open(log_path, "w", encoding="utf-8") as log, timer.measure("train"):
        def on_step(step, loss, lr):
            log.write(json.dumps({"step": step, "loss": loss, "lr": lr}) + "\n")
        w = train(origins, generated, truth, tc, on_step=on_step)
    timer.set_rate("train", "s_per_step", tc.total_steps)

    w_path = out / "projection.oide"
    save_projection(w, w_path)
    manifest.write_manifest(out, manifest.build_manifest(
        "train", _train_config_dict(tc),
        {"config": str(args.config), "origins": str(args.origins),
         "generated": str(args.generated), "truth": str(args.truth)},
        {"projection": str(w_path), "train_log": str(log_path)},
        tc.seed, _resolve_threads(args), timer))
    return 0


def cmd_project(args) -> int:
    emb = load_embeddings(args.set)
    w = load_projection(args.projection)
    out = _out_dir(args)
    timer = manifest.StageTimer()
    with timer.measure("project"):
        result = project(emb, w, normalize=not args.raw)
    timer.set_rate("project", "s_per_row", len(emb))
    out_path = out / "projected.oide"
    save_embeddings(result, out_path)
    manifest.write_manifest(out, manifest.build_manifest(
        "project", {"normalize": not args.raw},
        {"set": str(args.set), "projection": str(args.projection)},
        {"projected": str(out_path)}, None, _resolve_threads(args), timer))
    return 0


def cmd_search(args) -> int:
    refs = load_embeddings(args.refs)
    queries = load_embeddings(args.queries)
    threads = _resolve_threads(args)
    out = _out_dir(args)
    timer = manifest.StageTimer()
    with timer.measure("index"):
        index = build_index(refs)
    with timer.measure("search"):
        unit_queries = EmbeddingSet(
            ids=queries.ids, dim=queries.dim,
            data=normalize_rows(queries.data, queries.ids))
        results = search(index, unit_queries, args.k, threads=threads)
    timer.set_rate("search", "s_per_pair", len(refs) * len(queries))
    out_path = out / "matches.tsv"
    write_matches(out_path, results)
    manifest.write_manifest(out, manifest.build_manifest(
        "search", {"k": args.k, "backend": BACKEND},
        {"refs": str(args.refs), "queries": str(args.queries)},
        {"matches": str(out_path)}, None, threads, timer))
    return 0


def cmd_eval(args) -> int:
    results = read_matches(args.matches)
    truth = read_ground_truth(args.truth)
    out = _out_dir(args)
    timer = manifest.StageTimer()
    with timer.measure("eval"):
        include_micro = args.metric in ("micro-ap", "both")
        report = evaluation.evaluate(results, truth, k_eval=args.k,
                                     include_micro_ap=include_micro)
    timer.set_rate("eval", "s_per_query", report.n_queries)
    payload = report.as_dict()
    payload["metric"] = args.metric
    if args.metric == "micro-ap":
        payload["map"] = payload.pop("micro_ap")
    report_path = out / "report.json"
    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    manifest.write_manifest(out, manifest.build_manifest(
        "eval", {"k": args.k, "metric": args.metric},
        {"matches": str(args.matches), "truth": str(args.truth)},
        {"report": str(report_path)}, None, _resolve_threads(args), timer))
    return 0


def cmd_diagnose(args) -> int:
    w_paths = args.projection
    ws = [load_projection(p) for p in w_paths]
    out = _out_dir(args)
    timer = manifest.StageTimer()
    payload: dict = {"projections": [], "sv_cosine": [], "alignment_residuals": []}
    with timer.measure("diagnose"):
        for path, w in zip(w_paths, ws):
            report = spectral.singular_values(w)
            payload["projections"].append({
                "path": str(path),
                "shape": [w.n, w.m],
                "singular_values": [float(s) for s in report.singular_values],
                "effective_rank": report.effective_rank,
                "condition_number": report.condition_number,
            })
        for i in range(len(ws)):
            for j in range(i + 1, len(ws)):
                if (ws[i].n, ws[i].m) == (ws[j].n, ws[j].m):
                    payload["sv_cosine"].append({
                        "a": str(w_paths[i]), "b": str(w_paths[j]),
                        "cosine": spectral.sv_cosine(ws[i], ws[j])})
        if args.origins and args.generated:
            origins = load_embeddings(args.origins)
            generated = load_embeddings(args.generated)
            truth = read_ground_truth(args.truth) if args.truth else None
            org_rows, gen_rows = _paired_rows(origins, generated, truth)
            for path, w in zip(w_paths, ws):
                payload["alignment_residuals"].append({
                    "projection": str(path),
                    "residual": spectral.alignment_residual(org_rows, gen_rows, w)})
    report_path = out / "diagnosis.json"
    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    manifest.write_manifest(out, manifest.build_manifest(
        "diagnose", {},
        {"projections": [str(p) for p in w_paths],
         "origins": str(args.origins) if args.origins else None,
         "generated": str(args.generated) if args.generated else None},
        {"diagnosis": str(report_path)}, None, _resolve_threads(args), timer))
    return 0


def _paired_rows(origins: EmbeddingSet, generated: EmbeddingSet, truth):
    if truth is None:
        raise OriginIdError("pair files need --truth to align generated ids to origins")
    org_rows = np.empty_like(generated.data, shape=(len(generated), origins.dim))
    for row, gid in enumerate(generated.ids):
        gid = int(gid)
        if gid not in truth:
            raise OriginIdError(f"generated id {gid} missing from truth file")
        org_rows[row] = origins.row_for_id(truth[gid])
    return org_rows, generated.data


def cmd_grid(args) -> int:
    cfg = parse_config(args.config)
    cfg.check_keys(_GRID_KEYS, prefixes=("profile.",))
    dim = cfg.get_int("dim", 64)
    n_origins = cfg.get_int("n_origins", 100)
    strengths = cfg.get_floats("strengths", [0.5])
    master_seed = args.seed if args.seed is not None else cfg.get_int("master_seed", 0)
    eval_seed = cfg.get_int("eval_seed", master_seed + 1)
    profiles = _profiles_from_config(cfg, dim)
    train_profile = cfg.require("train_profile")
    train_strength = cfg.get_float("train_strength", strengths[-1])
    if train_profile not in [p.name for p in profiles]:
        raise ConfigError(f"{cfg.source}: train_profile {train_profile!r} not defined")
    k = args.k if args.k is not None else cfg.get_int("k", 10)
    metric = args.metric if args.metric is not None else cfg.get("metric", "mean-inverse-rank")
    if metric not in evaluation.METRIC_CHOICES:
        raise ConfigError(f"{cfg.source}: metric must be one of {evaluation.METRIC_CHOICES}")

    loss_list = [args.loss] if args.loss is not None else cfg.get_strs("losses", ["cosface"])
    rank_list = [args.rank] if args.rank is not None else [
        int(r) for r in cfg.get_strs("ranks", ["32"])]
    base = {
        "scale": cfg.get_float("scale"), "margin": cfg.get_float("margin"),
        "peak_lr": cfg.get_float("peak_lr", 3.5e-4),
        "warmup_steps": cfg.get_int("warmup_steps"),
        "total_steps": cfg.get_int("total_steps", 1000),
        "batch_size": cfg.get_int("batch_size", 128),
        "seed": cfg.get_int("seed", 0),
        "weight_decay": cfg.get_float("weight_decay", 0.0),
    }
    configs = [TrainConfig(m=rank, loss_kind=loss_kind, **base)
               for loss_kind in loss_list for rank in rank_list]

    threads = _resolve_threads(args)
    out = _out_dir(args)
    timer = manifest.StageTimer()
    with timer.measure("simulate"):
        train_ds = generate_dataset(n_origins, dim, profiles,
                                    sorted(set(strengths + [train_strength])), master_seed)
        eval_ds = generate_dataset(n_origins, dim, profiles, strengths, eval_seed)
    with timer.measure("grid"):
        reports = evaluation.run_grid(
            train_ds, configs, train_profile, train_strength,
            eval_dataset=eval_ds, k=k, threads=threads,
            include_micro_ap=metric in ("micro-ap", "both"), include_raw=True)
    timer.set_rate("grid", "s_per_cell", len(reports))

    reports_path = out / "reports.jsonl"
    with open(reports_path, "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.as_dict(), sort_keys=True) + "\n")
    table_path = out / "summary.txt"
    table_path.write_text(evaluation.summary_table(reports), encoding="utf-8")

    resolved = {
        "dim": dim, "n_origins": n_origins, "strengths": strengths,
        "master_seed": master_seed, "eval_seed": eval_seed,
        "train_profile": train_profile, "train_strength": train_strength,
        "losses": loss_list, "ranks": rank_list, "k": k, "metric": metric,
        **{f"train.{key}": val for key, val in base.items()},
        "profiles": [{"name": p.name, "sigma_resid": p.sigma_resid,
                      "style_seed": p.style_seed} for p in profiles],
    }
    manifest.write_manifest(out, manifest.build_manifest(
        "grid", resolved, {"config": str(args.config)},
        {"reports": str(reports_path), "summary": str(table_path)},
        master_seed, threads, timer))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="originid",
        description="Embedding-level origin identification pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (falls back to OID_THREADS, then 1)")
        p.add_argument("--seed", type=int, default=None)
        if config:
            p.add_argument("--config", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic benchmark dataset")
    common(p, config=True)
    p.add_argument("--strength", type=float, default=None,
                   help="override the config strength list with one value")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="learn a projection matrix")
    common(p, config=True)
    p.add_argument("--origins", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--loss", choices=losses.LOSS_KINDS, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("project", help="apply a projection to an embedding set")
    common(p)
    p.add_argument("--set", required=True)
    p.add_argument("--projection", required=True)
    p.add_argument("--raw", action="store_true", help="skip unit normalization")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("search", help="index references and run exact top-k search")
    common(p)
    p.add_argument("--refs", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="score a match file against ground truth")
    common(p)
    p.add_argument("--matches", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--metric", choices=evaluation.METRIC_CHOICES,
                   default="mean-inverse-rank")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="spectral diagnostics of projection files")
    common(p)
    p.add_argument("--projection", action="append", required=True,
                   help="projection file; repeat to compare spectra")
    p.add_argument("--origins", default=None)
    p.add_argument("--generated", default=None)
    p.add_argument("--truth", default=None)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("grid", help="train and evaluate a full ablation grid")
    common(p, config=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--loss", choices=losses.LOSS_KINDS, default=None)
    p.add_argument("--metric", choices=evaluation.METRIC_CHOICES, default=None)
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OriginIdError, OSError) as exc:
        sys.stderr.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
