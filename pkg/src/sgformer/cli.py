"""``sgformer`` command line: train, eval, grid, bench-scaling, verify-theory,
export-attention, gen-sbm. Exit codes: 0 ok, 1 runtime error, 2 usage error."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import torch

from . import bench, theory
from .attention import DENSE_GUARD, attention_coefficients, export_attention, linear_attention
from .errors import ConfigError, SGFormerError
from .graph import (NodeDataset, SplitSpec, generate_sbm, load_generic, load_planetoid_dir,
                    make_split, normalize_adjacency, save_generic)
from .model import input_layer, load_checkpoint, save_checkpoint, forward
from .tensor import Rng
from .training import (GRID, PRESETS, TrainConfig, build_params, evaluate_logits, grid_search,
                       metric_name, seed_summary, train_with_params)

log = logging.getLogger("sgformer")

PLANETOID = {"cora-raw": "cora", "citeseer-raw": "citeseer", "pubmed-raw": "pubmed"}
DATA_ENV = "SGF_DATA_DIR"
SEED_ENV = "SGF_SEED"

CONFIG_FLAGS = {
    "lr": float, "weight_decay": float, "hidden": int, "dropout": float, "num_gcn_layers": int,
    "alpha": float, "beta": float, "epochs": int, "batch_size": int, "precision": str,
    "num_attn_layers": int, "attention": str, "eval_full_max_nodes": int, "eval_batch_size": int,
}


class UsageError(Exception):
    pass


def env_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


# ------------------------------------------------------------------ datasets

def parse_kv(text: str) -> dict:
    out = {}
    for part in filter(None, text.split(",")):
        if "=" not in part:
            raise UsageError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_split(text: str | None) -> SplitSpec | None:
    if text is None or text == "given":
        return None
    if text == "semi":
        return SplitSpec.semi_supervised()
    if text.startswith("ratio:"):
        try:
            a, b, c = (float(x) for x in text[len("ratio:"):].split(","))
        except ValueError:
            raise UsageError(f"bad ratio split {text!r}; use ratio:TRAIN,VALID,TEST") from None
        return SplitSpec.ratio(a, b, c)
    if text.startswith("semi:"):
        kv = parse_kv(text[len("semi:"):])
        return SplitSpec("per-class", per_class=int(kv.get("per_class", 20)),
                         num_valid=int(kv.get("valid", 500)), num_test=int(kv.get("test", 1000)))
    raise UsageError(f"unknown split {text!r}; use semi, semi:per_class=..,valid=..,test=.., ratio:a,b,c or given")


def load_dataset(args) -> tuple[NodeDataset, str | None]:
    """Return the dataset with masks set, plus the preset key if any."""
    spec = args.dataset
    split = args.split
    preset = None
    if spec in PLANETOID:
        name = PLANETOID[spec]
        root = Path(args.data_root or os.environ.get(DATA_ENV, "data"))
        ds = load_planetoid_dir(root, name)
        preset = name
        split = split or "semi"
    elif spec.startswith("sbm:") or spec == "sbm":
        kv = parse_kv(spec[4:])
        try:
            n = int(kv.get("n", 1000))
            ds = generate_sbm(n, int(kv.get("blocks", 4)), float(kv.get("p_in", 0.02)),
                              float(kv.get("p_out", 0.002)), int(kv.get("feat", 32)),
                              Rng(int(kv.get("seed", 0))), noise=float(kv.get("noise", 1.0)))
        except ValueError as exc:
            raise UsageError(f"bad sbm spec {spec!r}: {exc}") from None
        split = split or "ratio:0.5,0.25,0.25"
    else:
        ds = load_generic(spec)
        if split is None:
            split = "given" if ds.train_mask.any() else "ratio:0.5,0.25,0.25"
    split_spec = parse_split(split)
    if split_spec is not None:
        ds = ds.with_masks(make_split(ds, split_spec, Rng(args.split_seed)))
    return ds, preset


# -------------------------------------------------------------------- config

def resolve_config(args, preset: str | None) -> TrainConfig:
    """flag > config file > dataset preset > built-in default"""
    cfg = PRESETS.get(preset, TrainConfig()) if not args.no_preset else TrainConfig()
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg = replace(cfg, **doc)
    overrides = {k: getattr(args, k) for k in CONFIG_FLAGS if getattr(args, k, None) is not None}
    if args.no_self_loop:
        overrides["self_loop"] = False
    return replace(cfg, **overrides, seed=args.seed)


def seed_list(args) -> list[int]:
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    return [args.seed + i for i in range(args.seeds)]


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def dataset_summary(ds: NodeDataset) -> dict:
    return {"name": ds.name, "num_nodes": ds.num_nodes, "num_edges": ds.graph.num_undirected_edges(),
            "feat_dim": ds.feat_dim, "num_classes": ds.num_classes, "task": ds.task,
            "train": int(ds.train_mask.sum()), "valid": int(ds.valid_mask.sum()), "test": int(ds.test_mask.sum())}


def run_record(args, **extra) -> dict:
    d = {k: v for k, v in vars(args).items() if k != "func"}
    d.update(extra)
    return d


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    ds, preset = load_dataset(args)
    cfg = resolve_config(args, preset)
    out = Path(args.out)
    seeds = seed_list(args)
    write_json(out / "run.json", run_record(args, resolved_config=cfg.to_dict(), seeds=seeds,
                                            dataset_info=dataset_summary(ds)))
    tests = []
    for s in seeds:
        report, params = train_with_params(ds, replace(cfg, seed=s))
        sub = out / f"seed{s}"
        report.write(sub)
        save_checkpoint(params, sub / "checkpoint.json", extra={"seed": s, "dataset": ds.name})
        tests.append(report.test_at_best_valid)
        print(f"seed {s}: best epoch {report.best_epoch} valid {report.best_valid:.4f} "
              f"test@best-valid {report.test_at_best_valid:.4f}")
    mean, std = seed_summary(tests)
    scale = 100.0 if metric_name(ds) == "accuracy" else 1.0
    write_json(out / "summary.json", {"metric": metric_name(ds), "seeds": seeds, "test": tests,
                                      "mean": mean, "std": std})
    print(f"test@best-valid {metric_name(ds)}: {mean * scale:.2f} ± {std * scale:.2f} over {len(seeds)} seed(s)")
    return 0


def cmd_eval(args) -> int:
    ds, _ = load_dataset(args)
    params = load_checkpoint(args.checkpoint)
    x = torch.as_tensor(ds.features, dtype=params.dtype)
    with torch.no_grad():
        logits, _ = forward(x, normalize_adjacency(ds.graph).to_torch(params.dtype), params)
    result = {"metric": metric_name(ds)}
    for split, mask in (("train", ds.train_mask), ("valid", ds.valid_mask), ("test", ds.test_mask)):
        if mask.any():
            result[split] = evaluate_logits(logits, ds, mask)
    out = Path(args.out)
    write_json(out / "run.json", run_record(args, dataset_info=dataset_summary(ds)))
    write_json(out / "eval.json", result)
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_grid(args) -> int:
    ds, preset = load_dataset(args)
    base = resolve_config(args, preset)
    if args.grid:
        grids = json.loads(Path(args.grid).read_text(encoding="utf-8"))
        if not isinstance(grids, dict):
            raise ConfigError(f"{args.grid}: expected a JSON object of lists")
    else:
        grids = GRID
    out = Path(args.out)
    seeds = seed_list(args)
    write_json(out / "run.json", run_record(args, base_config=base.to_dict(), grids=grids, seeds=seeds,
                                            dataset_info=dataset_summary(ds)))
    res = grid_search(ds, grids, budget=args.budget, base=base, seeds=seeds, jobs=args.jobs)
    write_json(out / "grid.json", res.to_dict())
    scale = 100.0 if metric_name(ds) == "accuracy" else 1.0
    print(f"best: {json.dumps({k: getattr(res.best_config, k) for k in grids})}")
    print(f"test@best-valid {metric_name(ds)}: {res.mean * scale:.2f} ± {res.std * scale:.2f} over {len(seeds)} seed(s)")
    return 0


def parse_sizes(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad size list {text!r}") from None


def cmd_bench(args) -> int:
    sizes = parse_sizes(args.sizes)
    if args.include_100k and 100_000 not in sizes:
        sizes.append(100_000)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    cfg = bench.BenchConfig(hidden=args.hidden, epochs=args.epochs, warmup=args.warmup, seed=args.seed,
                            precision=args.precision, threads=args.threads,
                            memory_budget_bytes=int(args.memory_budget_gib * 2**30))
    out = Path(args.out)
    write_json(out / "run.json", run_record(args, sizes=sizes, bench_config=asdict(cfg)))
    results = bench.bench_scaling(sizes, variants, cfg)
    for r in results:
        status = f"skipped ({r.skipped})" if r.skipped else f"{r.ms_mean:9.1f} ± {r.ms_std:6.1f} ms  {r.mem_bytes} B"
        print(f"{r.variant:14s} N={r.n:<8d} E={r.e:<9d} {status}")
    fits = {}
    try:
        for v in variants:
            fits[v] = bench.fit_complexity(results, v)[v]
    finally:
        bench.write_results(results, out, fits, cfg)
    for v, f in fits.items():
        print(f"{v}: time exponent {f.exponent:.3f} (R^2 {f.r2:.4f})")
    return 0


def cmd_verify(args) -> int:
    ks = parse_sizes(args.k)
    rng = Rng(args.seed)
    rows = []
    worst1 = max(theory.verify_theorem1(*theory.random_theorem1_instance(rng.child(i), args.n, args.d))
                 for i in range(args.instances))
    rows.append(("theorem1", "-", args.n, worst1, worst1 < args.tol1))
    for k in ks:
        disc = theory.verify_theorem2(k, args.n, args.d, rng.child(10_000 + k))
        rows.append(("theorem2", k, args.n, disc, disc < args.tol2))
    print(f"{'check':10s} {'K':>3s} {'N':>5s} {'discrepancy':>12s}  result")
    for name, k, n, disc, ok in rows:
        print(f"{name:10s} {str(k):>3s} {n:5d} {disc:12.3e}  {'PASS' if ok else 'FAIL'}")
    if args.out:
        write_json(Path(args.out) / "run.json", run_record(args))
        write_json(Path(args.out) / "verify.json",
                   [{"check": r[0], "K": r[1], "N": r[2], "discrepancy": r[3], "pass": r[4]} for r in rows])
    return 0 if all(r[4] for r in rows) else 1


def cmd_export_attention(args) -> int:
    ds, preset = load_dataset(args)
    if ds.num_nodes > DENSE_GUARD:
        raise ConfigError(f"{ds.num_nodes} nodes exceeds the dense export guard {DENSE_GUARD}")
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint)
    else:
        params = build_params(ds, resolve_config(args, preset), Rng(args.seed).child(0))
    if not 0 <= args.layer < len(params.attention):
        raise ConfigError(f"layer {args.layer} out of range for {len(params.attention)} attention layer(s)")
    x = torch.as_tensor(ds.features, dtype=params.dtype)
    with torch.no_grad():
        z = input_layer(x, params)
        for p in params.attention[:args.layer]:
            beta = 1.0 if not params.self_loop else None
            z = linear_attention(z, p, beta=beta).z
        c = attention_coefficients(z, params.attention[args.layer])
    out = Path(args.out)
    write_json(out / "run.json", run_record(args, dataset_info=dataset_summary(ds)))
    path = export_attention(c, out / "attention.csv")
    print(f"wrote {c.shape[0]}x{c.shape[1]} coefficients to {path}")
    return 0


def cmd_gen_sbm(args) -> int:
    ds = generate_sbm(args.n, args.blocks, args.p_in, args.p_out, args.feat_dim, Rng(args.seed), noise=args.noise)
    split = parse_split(args.split)
    if split is not None:
        ds = ds.with_masks(make_split(ds, split, Rng(args.split_seed)))
    out = Path(args.out)
    save_generic(ds, out)
    write_json(out / "run.json", run_record(args, dataset_info=dataset_summary(ds)))
    print(f"wrote SBM with {ds.num_nodes} nodes and {ds.graph.num_undirected_edges()} edges to {out}")
    return 0


# -------------------------------------------------------------------- parser

def _add_dataset(p):
    p.add_argument("--dataset", required=True,
                   help="cora-raw | citeseer-raw | pubmed-raw | sbm:n=..,blocks=..,p_in=..,p_out=..,feat=.. | directory")
    p.add_argument("--data-root", default=None, help=f"root for raw citation files (default ${DATA_ENV} or ./data)")
    p.add_argument("--split", default=None, help="semi | semi:per_class=..,valid=..,test=.. | ratio:a,b,c | given")
    p.add_argument("--split-seed", type=int, default=0)


def _add_config(p):
    p.add_argument("--config", default=None, help="JSON file of TrainConfig fields")
    p.add_argument("--no-preset", action="store_true", help="ignore per-dataset preset defaults")
    for name, typ in CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--no-self-loop", action="store_true", help="drop the attention residual term")


def build_parser(seed_default: int) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgformer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--out", required=out_required, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=seed_default, help=f"base seed (default ${SEED_ENV} or 0)")

    p = sub.add_parser("train", help="train and report test@best-valid over seeds")
    _add_dataset(p); _add_config(p); common(p)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    _add_dataset(p); common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="grid search then rerun the best config over seeds")
    _add_dataset(p); _add_config(p); common(p)
    p.add_argument("--grid", default=None, help="JSON object of field -> list of values")
    p.add_argument("--budget", type=int, default=None, help="cap on the number of grid points")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("bench-scaling", aliases=["bench"], help="epoch time and memory versus N")
    common(p)
    p.add_argument("--sizes", default=",".join(str(s) for s in bench.DEFAULT_SIZES))
    p.add_argument("--include-100k", action="store_true")
    p.add_argument("--variants", default="linear", help="comma list of linear, softmax-dense")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--precision", default="float32")
    p.add_argument("--memory-budget-gib", type=float, default=2.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify-theory", aliases=["verify"], help="numerical theorem checks")
    common(p, out_required=False)
    p.add_argument("--k", default="1,2,4,8", help="comma list of layer counts")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--tol1", type=float, default=1e-10)
    p.add_argument("--tol2", type=float, default=1e-8)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export-attention", help="write the dense attention matrix as CSV")
    _add_dataset(p); _add_config(p); common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--layer", type=int, default=0)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("gen-sbm", help="write a synthetic SBM dataset directory")
    common(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--p-in", type=float, default=0.02)
    p.add_argument("--p-out", type=float, default=0.002)
    p.add_argument("--feat-dim", type=int, default=32)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--split", default="ratio:0.5,0.25,0.25")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_sbm)
    return parser


def main(argv=None) -> int:
    try:
        seed_default = env_seed()
    except UsageError as exc:
        print(f"sgformer: error: {exc}", file=sys.stderr)
        return 2
    parser = build_parser(seed_default)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sgformer: error: {exc}", file=sys.stderr)
        return 2
    except (SGFormerError, ValueError, OSError) as exc:
        print(f"sgformer: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
