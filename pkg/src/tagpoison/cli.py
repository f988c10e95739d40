"""Command-line front end: synth, run, ablate, sweep, defend, report.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import evaluation as ev
from . import graph as g
from .codec import build_vocab, encode_all
from .config import load_config, spec_from_dict
from .defense import OdConfig, PruneConfig, detect_outliers, prune_edges
from .errors import ConfigError, TagPoisonError
from .graph import SyntheticSpec


def _apply_overrides(spec, args):
    if args.seed is not None:
        spec = dataclasses.replace(spec, base_seed=args.seed)
    if getattr(args, "target", None):
        spec = dataclasses.replace(spec, target_kind=args.target)
    if getattr(args, "defense", None):
        spec = dataclasses.replace(spec, defense=args.defense)
    if getattr(args, "mode", None):
        if spec.attack is None:
            raise ConfigError("--mode requires an attack section in the config")
        spec = dataclasses.replace(
            spec, attack=dataclasses.replace(spec.attack, mode=args.mode))
    return spec


def _load_spec(args):
    spec = spec_from_dict(load_config(args.config))
    return _apply_overrides(spec, args)


def cmd_synth(args):
    cfgd = load_config(args.config)
    if "dataset" not in cfgd or "synthetic" not in cfgd.get("dataset", {}):
        raise ConfigError("synth requires a config with dataset.synthetic")
    syn = dict(cfgd["dataset"]["synthetic"])
    if args.seed is not None:
        syn["seed"] = args.seed
    if "seed" not in syn:
        raise ConfigError("synthetic spec requires a seed")
    graph = g.generate_synthetic(SyntheticSpec(**syn))
    os.makedirs(args.out, exist_ok=True)
    nodes = os.path.join(args.out, "nodes.jsonl")
    edges = os.path.join(args.out, "edges.tsv")
    g.save_dataset(graph, nodes, edges)
    print(f"wrote {nodes} ({graph.num_nodes} nodes) and {edges} "
          f"({graph.num_undirected_edges} edges)")
    return 0


def cmd_run(args):
    spec = _load_spec(args)
    report = ev.run_experiment(spec)
    machine, human = ev.emit_report(report, args.out)
    print(f"wrote {machine} and {human}")
    if report.partial:
        print("warning: some repetitions failed; report marked partial",
              file=sys.stderr)
        return 1
    return 0


def cmd_ablate(args):
    spec = _load_spec(args)
    code = 0
    for variant in args.variants:
        report = ev.run_ablation(spec, variant)
        out = os.path.join(args.out, variant)
        machine, _ = ev.emit_report(report, out)
        print(f"{variant}: wrote {machine}")
        code = max(code, 1 if report.partial else 0)
    return code


def cmd_sweep(args):
    spec = _load_spec(args)
    values = [float(v) if args.axis == "budget" else int(v)
              for v in args.values.split(",")]
    series = ev.run_sweep(spec, args.axis, values)
    code = 0
    for value, report in series:
        out = os.path.join(args.out, f"{args.axis}_{value}")
        machine, _ = ev.emit_report(report, out)
        print(f"{args.axis}={value}: wrote {machine}")
        code = max(code, 1 if report.partial else 0)
    return code


def cmd_defend(args):
    graph = g.load_dataset(args.nodes, args.edges)
    vocab = build_vocab(graph.texts)
    x = encode_all(graph.texts, vocab)
    os.makedirs(args.out, exist_ok=True)
    audit_path = os.path.join(args.out, "defense_audit.jsonl")
    if args.defense == "prune":
        cfg = PruneConfig(args.prune_mode, args.prune_value)
        defended, removed = prune_edges(graph, x, cfg)
        g.save_dataset(defended, os.path.join(args.out, "nodes.jsonl"),
                       os.path.join(args.out, "edges.tsv"))
        with open(audit_path, "w", encoding="utf-8") as f:
            for u, v, s in removed:
                f.write(json.dumps({"kind": "removed_edge", "u": u, "v": v,
                                    "similarity": s}) + "\n")
        print(f"pruned {len(removed)} edges; wrote defended graph to {args.out}")
    else:
        cfg = OdConfig(args.od_k, args.od_fraction)
        flagged = detect_outliers(x, np.arange(graph.num_nodes), cfg)
        with open(audit_path, "w", encoding="utf-8") as f:
            for nid, score in flagged:
                f.write(json.dumps({"kind": "flagged_node", "node_id": nid,
                                    "score": score}) + "\n")
        print(f"flagged {len(flagged)} nodes; audit at {audit_path}")
    return 0


def cmd_report(args):
    report = ev.load_report(args.path)
    sys.stdout.write(ev.render_table(report))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tagpoison",
        description="Poison-text backdoor laboratory for text-attributed graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("synth", help="materialize a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run the full experiment pipeline")
    common(p)
    p.add_argument("--mode", choices=("overwrite", "append"))
    p.add_argument("--defense", choices=("none", "prune", "od"))
    p.add_argument("--target", choices=("gcn", "sage"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="run ablation variants")
    common(p)
    p.add_argument("--variants", nargs="+", choices=ev.ABLATION_VARIANTS,
                   default=list(ev.ABLATION_VARIANTS))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="sweep budget or trigger length")
    common(p)
    p.add_argument("--axis", required=True, choices=ev.SWEEP_AXES)
    p.add_argument("--values", required=True,
                   help="comma-separated values along the axis")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("defend", help="apply a defense to a graph on disk")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--defense", required=True, choices=("prune", "od"))
    p.add_argument("--prune-mode", choices=("absolute", "percentile"),
                   default="percentile")
    p.add_argument("--prune-value", type=float, default=0.05)
    p.add_argument("--od-k", type=int, default=10)
    p.add_argument("--od-fraction", type=float, default=0.05)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("report", help="render a machine report as a table")
    p.add_argument("path", help="path to report.json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TagPoisonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
