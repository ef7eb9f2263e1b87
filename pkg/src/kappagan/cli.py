"""Command-line entry point: ``kappagan <subcommand> ...``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, store
from .curvature import CurvatureError, estimate_global_curvature, ricci_map
from .graphdata import (AttackSpec, Graph, GraphFormatError, generate_ba, generate_sbm, generate_ws,
                        load_edge_list, rand_attack, save_edge_list, save_labels, split_edges)
from .training import ConfigError, TrainingConfig, TrainingDiverged, TrainState, train

log = logging.getLogger("kappagan")


class CliError(Exception):
    pass


def labels_path_for(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".labels" + p.suffix)


def read_graph(path, labels=None) -> Graph:
    if not Path(path).exists():
        raise CliError(f"graph file not found: {path}")
    if labels is None and labels_path_for(path).exists():
        labels = labels_path_for(path)
    return load_edge_list(path, labels)


def write_graph(graph: Graph, path) -> list[Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_edge_list(graph, path)
    out = [path]
    if graph.labels is not None:
        save_labels(graph, labels_path_for(path))
        out.append(labels_path_for(path))
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path, overrides) -> TrainingConfig:
    data = {} if path is None else json.loads(Path(path).read_text())
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}")
        data[key] = _parse_value(value)
    return TrainingConfig.from_dict(data)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(run_dir: Path, argv, config: TrainingConfig | None, inputs) -> None:
    import scipy
    import torch

    manifest = {
        "argv": list(argv),
        "config_hash": None if config is None else config.config_hash(),
        "seed": None if config is None else config.seed,
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None and Path(p).exists()},
        "versions": {"kappagan": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "torch": torch.__version__},
        "platform": platform.platform(),
    }
    store.atomic_write_text(run_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _prepare_run_dir(path, config: TrainingConfig | None) -> Path:
    run_dir = Path(path)
    run_dir.mkdir(parents=True, exist_ok=True)
    if config is not None:
        store.atomic_write_text(run_dir / "config.json", config.to_json())
    return run_dir


# -- subcommands ------------------------------------------------------------------


def cmd_gen_graph(args, argv) -> str:
    if args.model == "sbm":
        g = generate_sbm(args.n, args.blocks, args.p, args.q, args.seed)
    elif args.model == "ba":
        g = generate_ba(args.n, (args.m_min, args.m_max), args.seed)
    else:
        g = generate_ws(args.n, args.k, args.beta, args.seed)
    files = write_graph(g, args.output)
    return f"{args.model}: n={g.n} m={g.m} -> {', '.join(map(str, files))}"


def cmd_estimate_kappa(args, argv) -> str:
    g = read_graph(args.graph, args.labels)
    est = estimate_global_curvature(g, args.ns, args.seed)
    return f"kappa={est.kappa:.6g} (n_s={args.ns}, seed={args.seed}, n={g.n}, m={g.m})"


def cmd_ricci(args, argv) -> str:
    g = read_graph(args.graph, args.labels)
    rm = ricci_map(g, args.alpha)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    rm.to_tsv(args.output)
    v = rm.values
    return f"ricci: {g.m} edges, mean={v.mean():.4g} min={v.min():.4g} max={v.max():.4g} -> {args.output}"


def cmd_split(args, argv) -> str:
    g = read_graph(args.graph, args.labels)
    sp = split_edges(g, args.test_ratio, args.seed)
    sp.save(args.output)
    c = sp.counts()
    return f"split: train={c['train']} test_pos={c['test_pos']} test_neg={c['test_neg']} -> {args.output}"


def cmd_attack(args, argv) -> str:
    g = read_graph(args.graph, args.labels)
    out = rand_attack(g, AttackSpec(args.mode, args.ratio, args.seed))
    write_graph(out, args.output)
    return f"attack {args.mode} {args.ratio}: m {g.m} -> {out.m} -> {args.output}"


def cmd_train(args, argv) -> str:
    g = read_graph(args.graph, args.labels)
    config = load_config(args.config, args.set)
    run_dir = _prepare_run_dir(args.output, config)
    write_manifest(run_dir, argv, config, [args.graph, args.config])
    state = None
    if args.resume is not None:
        state = TrainState.load(args.resume)
        if state.disc.n != g.n:
            raise CliError(f"checkpoint has {state.disc.n} nodes but the graph has {g.n}")
        state.config = config
    t0 = time.perf_counter()
    state = train(g, config, state=state, checkpoint_dir=run_dir)
    runtime = time.perf_counter() - t0
    state.write_losses(run_dir / "losses.csv")
    state.save(run_dir / "checkpoint.bin")
    state.disc.to_tsv(run_dir / "embeddings.tsv", g)
    if state.ricci is not None:
        from .curvature import RicciMap
        RicciMap(g, state.ricci, config.alpha).to_tsv(run_dir / "ricci.tsv")
    d, gl = state.losses("D"), state.losses("G")
    metrics = {"task": "training", "epochs": state.epoch, "global_kappa": state.kappa,
               "final_loss_d": float(d[-1]) if len(d) else None, "final_loss_g": float(gl[-1]) if len(gl) else None,
               "runtime_s": runtime, "config_hash": config.config_hash()}
    store.atomic_write_text(run_dir / "metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return f"train: {state.epoch} epochs, kappa={state.kappa:.4g}, final D={metrics['final_loss_d']} -> {run_dir}"


def cmd_eval(args, argv) -> str:
    from .evaluation import run_link_prediction, run_node_classification

    g = read_graph(args.graph, args.labels)
    config = load_config(args.config, args.set)
    run_dir = _prepare_run_dir(args.output, config)
    write_manifest(run_dir, argv, config, [args.graph, args.config])
    if args.task == "lp":
        report = run_link_prediction(g, config, args.runs, args.test_ratio)
    else:
        if g.labels is None:
            raise CliError("node classification needs a label file (--labels)")
        report = run_node_classification(g, config, n_runs=args.runs, train_frac=args.train_frac)
    store.atomic_write_text(run_dir / "metrics.json", report.to_json())
    return report.summary()


def cmd_sweep(args, argv) -> str:
    from .evaluation import run_generalization_sweep, run_robustness_sweep

    g = read_graph(args.graph, args.labels)
    config = load_config(args.config, args.set)
    run_dir = _prepare_run_dir(args.output, config)
    write_manifest(run_dir, argv, config, [args.graph, args.config])
    if args.kind == "robustness":
        ratios = args.ratios or [0.05, 0.10, 0.15, 0.20, 0.25]
        reports = run_robustness_sweep(g, config, ratios, args.mode, args.test_ratio, args.runs)
        key = "attack_ratio"
    else:
        ratios = args.ratios or [round(0.1 * i, 1) for i in range(1, 10)]
        reports = run_generalization_sweep(g, config, ratios, args.runs)
        key = "train_ratio"
    store.atomic_write_text(run_dir / "metrics.json",
                            json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n")
    rows = [f"{key},auc_mean,auc_std"] + [f"{r.extra[key]},{r.mean['auc']!r},{r.std['auc']!r}" for r in reports]
    store.atomic_write_text(run_dir / "sweep.csv", "\n".join(rows) + "\n")
    best = max(reports, key=lambda r: r.mean["auc"])
    return f"sweep {args.kind}: {len(reports)} report(s), best auc={best.mean['auc']:.4f} at {key}={best.extra[key]}"


def cmd_export(args, argv) -> str:
    state = TrainState.load(args.checkpoint)
    table = state.gen if args.role == "generator" else state.disc
    g = read_graph(args.graph) if args.graph is not None else None
    if g is not None and g.n != table.n:
        raise CliError(f"checkpoint has {table.n} nodes but the graph has {g.n}")
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    if args.format == "tsv":
        table.to_tsv(args.output, g)
    else:
        table.save(args.output)
    return f"exported {table.n}x{table.dim} {args.role} embeddings (kappa={table.kappa:.4g}) -> {args.output}"


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kappagan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def graph_args(sp):
        sp.add_argument("-g", "--graph", required=True, help="edge list (src<TAB>dst per line)")
        sp.add_argument("--labels", help="label file; defaults to <graph>.labels.<ext> when present")

    def config_args(sp):
        sp.add_argument("-c", "--config", help="training config JSON")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")

    sp = sub.add_parser("gen-graph", help="generate a synthetic graph")
    sp.add_argument("model", choices=["sbm", "ba", "ws"])
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--blocks", type=int, default=5)
    sp.add_argument("--p", type=float, default=0.21)
    sp.add_argument("--q", type=float, default=0.025)
    sp.add_argument("--m-min", type=int, default=1)
    sp.add_argument("--m-max", type=int, default=10)
    sp.add_argument("--k", type=int, default=24)
    sp.add_argument("--beta", type=float, default=0.21)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_gen_graph)

    sp = sub.add_parser("estimate-kappa", help="estimate global sectional curvature")
    graph_args(sp)
    sp.add_argument("--ns", type=int, default=10, help="triangle samples per node")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_estimate_kappa)

    sp = sub.add_parser("ricci", help="Ollivier-Ricci curvature of every edge")
    graph_args(sp)
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_ricci)

    sp = sub.add_parser("split", help="hold out edges and non-edges for link prediction")
    graph_args(sp)
    sp.add_argument("--test-ratio", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output", required=True, help="output directory")
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("attack", help="random edge insertion or deletion")
    graph_args(sp)
    sp.add_argument("--mode", choices=["add", "remove"], required=True)
    sp.add_argument("--ratio", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("train", help="train embeddings on a graph")
    graph_args(sp)
    config_args(sp)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("-o", "--output", required=True, help="run directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="repeated-run link prediction or node classification")
    sp.add_argument("task", choices=["lp", "nc"])
    graph_args(sp)
    config_args(sp)
    sp.add_argument("--runs", type=int, default=5)
    sp.add_argument("--test-ratio", type=float, default=0.5, help="held-out edge fraction (lp)")
    sp.add_argument("--train-frac", type=float, default=0.5, help="labelled node fraction (nc)")
    sp.add_argument("-o", "--output", required=True, help="run directory")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="robustness or generalization sweep")
    sp.add_argument("kind", choices=["robustness", "generalization"])
    graph_args(sp)
    config_args(sp)
    sp.add_argument("--ratios", type=float, nargs="+")
    sp.add_argument("--mode", choices=["add", "remove"], default="remove")
    sp.add_argument("--test-ratio", type=float, default=0.1, help="clean test fraction (robustness)")
    sp.add_argument("--runs", type=int, default=1)
    sp.add_argument("-o", "--output", required=True, help="run directory")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("export-embeddings", help="write embeddings from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("-g", "--graph", help="graph file, for original node names")
    sp.add_argument("--role", choices=["discriminator", "generator"], default="discriminator")
    sp.add_argument("--format", choices=["tsv", "bin"], default="tsv")
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        print(args.func(args, argv))
    except (CliError, ConfigError, GraphFormatError, CurvatureError, TrainingDiverged,
            store.ContainerError, ValueError, OSError) as exc:
        print(f"kappagan {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
