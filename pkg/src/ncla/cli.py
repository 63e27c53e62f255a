"""Command line interface.

Configuration is layered: dataclass defaults, then an INI file (``--config``
or a shipped ``--preset``), then command line flags. Every command writes
the fully resolved configuration to ``resolved_config.json`` in its output
directory.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import graph as G
from . import loss as L
from . import model as M
from .evaluation import DEFAULT_REG, DEFAULT_REG_GRID, SplitSpec, evaluate
from .io import read_embeddings, write_embeddings
from .kernels import gradcheck
from .trainer import (
    TrainConfig,
    load_optimizer_state,
    loss_and_grads,
    save_optimizer_state,
    train,
)

logger = logging.getLogger("ncla")

PRESETS = ("cora", "citeseer", "pubmed", "coauthor-cs", "amazon-photo", "sbm")

_TRAIN_FLAGS = {
    "views": "n_views",
    "dim": "out_dim",
    "tau": "tau",
    "lr": "learning_rate",
    "wd": "weight_decay",
    "epochs": "epochs",
    "seed": "seed",
    "precision": "precision",
    "pivot_policy": "pivot_policy",
    "pivot": "pivot",
    "chunk_size": "chunk_size",
    "log_every": "log_every",
    "variant": "variant",
}
_SBM_KEYS = [f.name for f in fields(G.SbmSpec) if f.name != "name"]
_SWEEP_AXES = {"K": "n_views", "F'": "out_dim", "dim": "out_dim", "tau": "tau"}


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


def _read_ini(args):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if getattr(args, "preset", None):
        cp.read_string(resources.files("ncla.presets").joinpath(f"{args.preset}.ini").read_text())
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file {path} not found")
        cp.read(path)
    return cp


def _coerce(value, like):
    if isinstance(like, bool):
        return str(value).lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(float(value))
    if isinstance(like, float):
        return float(value)
    return str(value)


def resolve_train_config(args, cp) -> TrainConfig:
    base = asdict(TrainConfig())
    if cp.has_section("train"):
        for key, value in cp.items("train"):
            if key not in base:
                raise CliError(f"unknown [train] key {key!r}")
            base[key] = _coerce(value, base[key])
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            base[key] = value
    return TrainConfig(**base)


def resolve_data(args, cp):
    """Returns ``(graph, description)`` from ``--graph`` or the [data] section."""
    data = dict(cp.items("data")) if cp.has_section("data") else {}
    path = getattr(args, "graph", None) or data.get("graph")
    if path:
        return G.load_graph(path), {"graph": str(path)}
    sbm = asdict(G.SbmSpec())
    sbm.pop("name")
    present = False
    for key in _SBM_KEYS:
        if f"sbm_{key}" in data:
            sbm[key] = _coerce(data[f"sbm_{key}"], sbm[key])
            present = True
    if not present:
        raise CliError("no dataset: pass --graph or give a [data] section / --preset sbm")
    return G.generate_sbm(G.SbmSpec(**sbm)), {"sbm": sbm}


def resolve_eval(args, cp):
    ev = dict(cp.items("eval")) if cp.has_section("eval") else {}
    c = getattr(args, "labels_per_class", None) or int(ev.get("labels_per_class", 1))
    validation = getattr(args, "validation", None) or ev.get("validation", "none")
    n_splits = getattr(args, "n_splits", None) or int(ev.get("n_splits", 20))
    seed = getattr(args, "split_seed", None)
    if seed is None:
        seed = int(ev.get("seed", 0))
    grid = getattr(args, "reg_grid", None) or ev.get("reg_grid")
    grid = DEFAULT_REG_GRID if grid is None else tuple(float(x) for x in str(grid).split(",") if x.strip())
    default_reg = float(ev.get("default_reg", DEFAULT_REG))
    return {
        "spec": SplitSpec(int(c), validation, int(seed)),
        "n_splits": int(n_splits),
        "reg_grid": grid,
        "default_reg": default_reg,
    }


def _eval_echo(ev):
    return {
        "split": asdict(ev["spec"]),
        "n_splits": ev["n_splits"],
        "reg_grid": list(ev["reg_grid"]),
        "default_reg": ev["default_reg"],
    }


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(out, payload):
    (out / "resolved_config.json").write_text(json.dumps(payload, indent=2, default=str) + "\n")


# --------------------------------------------------------------------------
# commands


def _train_and_write(g, cfg, out, params=None, opt_state=None, start_epoch=0):
    report = train(g, cfg, params, opt_state, start_epoch)
    digest = M.save_checkpoint(report.params, out / "checkpoint.json")
    save_optimizer_state(report.optimizer_state, start_epoch + cfg.epochs, out / "optimizer_state.json")
    report.save(out / "train_report.json")
    write_embeddings(out / "embeddings.bin", report.embeddings.concatenated, cfg.precision, digest)
    return report


def cmd_train(args):
    cp = _read_ini(args)
    cfg = resolve_train_config(args, cp)
    g, data = resolve_data(args, cp)
    out = _out_dir(args)
    _echo(out, {"command": "train", "data": data, "train": cfg.to_dict(),
                "resume": args.resume, "optimizer_state": args.optimizer_state})
    params = opt_state = None
    start = 0
    if args.resume:
        params = M.load_checkpoint(args.resume)
        if args.optimizer_state:
            opt_state, start = load_optimizer_state(args.optimizer_state, cfg.dtype)
    report = _train_and_write(g, cfg, out, params, opt_state, start)
    print(json.dumps({"final_loss": report.loss_trace[-1], "epochs": len(report.loss_trace),
                      "out": str(out)}))
    return 0


def cmd_evaluate(args):
    cp = _read_ini(args)
    g, data = resolve_data(args, cp)
    if g.labels is None:
        raise CliError(f"graph {data} has no labels file; evaluation needs labels")
    H, meta = read_embeddings(args.embeddings)
    if H.shape[0] != g.num_nodes:
        raise CliError(f"embeddings have {H.shape[0]} rows, graph has {g.num_nodes} nodes")
    ev = resolve_eval(args, cp)
    out = _out_dir(args)
    _echo(out, {"command": "evaluate", "data": data, "embeddings": str(args.embeddings),
                "embedding_header": meta, "eval": _eval_echo(ev)})
    res = evaluate(H, g, ev["spec"], ev["n_splits"], ev["reg_grid"], ev["default_reg"])
    res.to_csv(out / "results.csv")
    res.to_json(out / "summary.json")
    print(json.dumps({"mean": res.mean, "std": res.std, "out": str(out)}))
    return 0


def run_experiment(g, cfg, ev):
    """Train with ``cfg`` and evaluate; returns ``(mean, std, final_loss)``."""
    report = train(g, cfg)
    res = evaluate(report.embeddings.concatenated, g, ev["spec"], ev["n_splits"],
                   ev["reg_grid"], ev["default_reg"])
    return res.mean, res.std, report.loss_trace[-1]


def _run_all(jobs, g, configs, ev):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_experiment, [g] * len(configs), configs, [ev] * len(configs)))
    return [run_experiment(g, c, ev) for c in configs]


def cmd_ablate(args):
    cp = _read_ini(args)
    base = resolve_train_config(args, cp)
    g, data = resolve_data(args, cp)
    if args.labels_per_class is None:
        args.labels_per_class = 1
    ev = resolve_eval(args, cp)
    variants = args.variants or list(L.VARIANTS)
    for v in variants:
        L.Variant(v)
    seeds = [base.seed + s for s in range(args.seeds)]
    out = _out_dir(args)
    _echo(out, {"command": "ablate", "data": data, "train": base.to_dict(), "eval": _eval_echo(ev),
                "variants": variants, "seeds": seeds})
    configs = [TrainConfig(**{**base.to_dict(), "variant": v, "seed": s}) for v in variants for s in seeds]
    results = _run_all(args.jobs, g, configs, ev)

    name = g.name
    rows, by_variant = [], {}
    for cfg, (mean, std, final) in zip(configs, results):
        rows.append([cfg.variant, cfg.seed, mean, std, final])
        by_variant.setdefault(cfg.variant, []).append(mean)
    with open(out / "ablation_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "mean_accuracy", "std_accuracy", "final_loss"])
        w.writerows(rows)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Variants", name])
        for v in variants:
            w.writerow([v, f"{100 * np.mean(by_variant[v]):.1f}"])
    if "NCL" in by_variant:
        for v in variants:
            if v == "NCL":
                continue
            wins = sum(a >= b for a, b in zip(by_variant["NCL"], by_variant[v]))
            logger.info("NCL >= %s in %d of %d seeds", v, wins, len(seeds))
    print(json.dumps({v: float(np.mean(m)) for v, m in by_variant.items()}))
    return 0


def cmd_sweep(args):
    if not args.values:
        raise CliError("sweep needs at least one value")
    key = _SWEEP_AXES[args.axis]
    cp = _read_ini(args)
    base = resolve_train_config(args, cp)
    g, data = resolve_data(args, cp)
    ev = resolve_eval(args, cp)
    caster = float if key == "tau" else int
    values = [caster(v) for v in args.values]
    out = _out_dir(args)
    _echo(out, {"command": "sweep", "axis": args.axis, "values": values, "data": data,
                "train": base.to_dict(), "eval": _eval_echo(ev)})
    configs = [TrainConfig(**{**base.to_dict(), key: v}) for v in values]
    results = _run_all(args.jobs, g, configs, ev)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "value", "mean_accuracy", "std_accuracy", "final_loss"])
        for v, (mean, std, final) in zip(values, results):
            w.writerow([args.axis, v, mean, std, final])
    print(json.dumps([{"value": v, "mean": r[0]} for v, r in zip(values, results)]))
    return 0


def path_graph(n, n_features, seed):
    rng = np.random.default_rng(seed)
    edges = [(i, i + 1) for i in range(n - 1)]
    return G.Graph.from_edges(n, edges, rng.standard_normal((n, n_features)), name=f"path{n}")


def pipeline_gradcheck(g, n_views, out_dim, seed, loss_cfg, pivot=0, step=1e-6, tolerance=1e-5,
                       perturb=0.0):
    """Finite-difference check of the full loss w.r.t. every view parameter.

    ``perturb`` adds a constant to the analytic gradient (negative control).
    """
    mp = M.init_params(g.num_features, out_dim, n_views, seed)
    names = [f"{kind}{k}" for k in range(n_views) for kind in ("W", "phi")]

    def f(params):
        arrays = [params[n] for n in names]
        value, grads = loss_and_grads(g, M.ModelParams.from_arrays(arrays), loss_cfg, pivot)
        return value, {n: a + perturb for n, a in zip(names, grads.arrays())}

    return gradcheck(f, dict(zip(names, mp.arrays())), step, tolerance)


def cmd_gradcheck(args):
    if args.graph:
        g = G.load_graph(args.graph)
    else:
        g = path_graph(args.path, args.features, args.seed)
    cfg = L.LossConfig(tau=args.tau, variant=args.variant, chunk_size=args.chunk_size)
    report = pipeline_gradcheck(g, args.views, args.dim, args.seed, cfg, args.pivot,
                                args.step, args.tol, args.perturb)
    payload = {"graph": repr(g), **report.as_dict()}
    if args.out:
        out = _out_dir(args)
        _echo(out, {"command": "gradcheck", **{k: v for k, v in vars(args).items() if k != "func"}})
        (out / "gradcheck.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload))
    return 0 if report.passed else 1


def cmd_gen_sbm(args):
    spec = G.SbmSpec(args.blocks, args.nodes_per_block, args.p_in, args.p_out,
                     args.feature_dim, args.feature_signal, args.seed)
    g = G.generate_sbm(spec)
    out = _out_dir(args)
    G.write_graph(g, out)
    print(json.dumps({"N": g.num_nodes, "edges": g.num_edges // 2, "out": str(out)}))
    return 0


def cmd_pack_info(args):
    g = G.load_graph(args.path)
    info = {
        "name": g.name,
        "N": g.num_nodes,
        "F": g.num_features,
        "C": g.num_classes,
        "directed_edge_entries": g.num_edges,
        "undirected_edges": g.num_edges // 2,
        "isolated_nodes": int(np.sum(g.degrees() == 0)),
        "mean_degree": float(g.degrees().mean()) if g.num_nodes else 0.0,
    }
    if g.labels is not None:
        info["class_counts"] = np.bincount(g.labels, minlength=g.num_classes).tolist()
    print(json.dumps(info, indent=2))
    return 0


# --------------------------------------------------------------------------
# parser


def _add_config(p):
    p.add_argument("--config", help="INI file with [data], [train], [eval] sections")
    p.add_argument("--preset", choices=PRESETS, help="shipped hyperparameter preset")
    p.add_argument("--graph", help="GraphPack directory (overrides [data])")


def _add_train(p):
    p.add_argument("--views", type=int, help="number of views K (default 2)")
    p.add_argument("--dim", type=int, help="embedding size per view F' (default 32)")
    p.add_argument("--tau", type=float, help="temperature (default 1.0)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 1e-2)")
    p.add_argument("--wd", type=float, help="L2 weight decay (default 1e-4)")
    p.add_argument("--epochs", type=int, help="training epochs (default 200)")
    p.add_argument("--seed", type=int, help="root seed (default 0)")
    p.add_argument("--precision", type=int, choices=(32, 64), help="float width (default 64)")
    p.add_argument("--variant", choices=L.VARIANTS, help="loss variant (default NCL)")
    p.add_argument("--pivot-policy", choices=L.PIVOT_POLICIES, help="default per-epoch")
    p.add_argument("--pivot", type=int, help="pivot view for --pivot-policy fixed (default 0)")
    p.add_argument("--chunk-size", type=int, help="anchor rows per similarity block (default 512)")
    p.add_argument("--log-every", type=int, help="log the loss every n epochs (default 0: never)")


def _add_eval(p):
    p.add_argument("--labels-per-class", type=int, help="training labels per class c")
    p.add_argument("--validation", help="none | fixed_total:N | per_class:M")
    p.add_argument("--n-splits", type=int, help="number of random splits (default 20)")
    p.add_argument("--split-seed", type=int, help="seed of the first split (default 0)")
    p.add_argument("--reg-grid", help="comma-separated penalty grid")


def build_parser():
    parser = argparse.ArgumentParser(prog="ncla", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and write checkpoint + embeddings")
    _add_config(p)
    _add_train(p)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to start from")
    p.add_argument("--optimizer-state", help="optimizer state saved with the checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="node classification on saved embeddings")
    _add_config(p)
    _add_eval(p)
    p.add_argument("--embeddings", required=True, help="embeddings .bin file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train/evaluate every loss variant")
    _add_config(p)
    _add_train(p)
    _add_eval(p)
    p.add_argument("--variants", nargs="+", choices=L.VARIANTS)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds from --seed upward")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="one-axis hyperparameter sweep")
    _add_config(p)
    _add_train(p)
    _add_eval(p)
    p.add_argument("--axis", required=True, choices=sorted(_SWEEP_AXES))
    p.add_argument("--values", nargs="*", default=[])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training gradients")
    p.add_argument("--graph", help="GraphPack directory (default: a path graph)")
    p.add_argument("--path", type=int, default=6, help="path graph size when --graph is absent")
    p.add_argument("--features", type=int, default=3)
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--variant", choices=L.VARIANTS, default="NCL")
    p.add_argument("--pivot", type=int, default=0)
    p.add_argument("--chunk-size", type=int, default=512)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-sbm", help="write a stochastic block model GraphPack")
    p.add_argument("--out", required=True)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--nodes-per-block", type=int, default=100)
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--feature-signal", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_sbm)

    p = sub.add_parser("pack-info", help="summary statistics of a GraphPack")
    p.add_argument("path")
    p.set_defaults(func=cmd_pack_info)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        logger.debug("%s", traceback.format_exc())
        out = getattr(args, "out", None)
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(json.dumps(err, indent=2) + "\n")
        print(json.dumps(err), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
