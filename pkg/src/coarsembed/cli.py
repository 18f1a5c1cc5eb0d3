"""Command line driver: embed, eval, coarsen-report and split."""

import argparse
import json
import logging
import os
import re
import sys
import time

import numpy as np

from . import __version__
from ._jit import JIT_ENABLED
from .coarsening import CoarseningConfig, Heuristics, coarsen
from .evaluation import (LogRegConfig, emit_record, eval_link_prediction,
                         eval_node_classification, metrics_record, read_labels)
from .formats import read_gemb, write_gemb, write_text
from .graph import Graph, LinkPredSplit, load_csr, load_edge_list, split_link_pred, write_edge_list
from .partition import PartitionConfig
from .presets import PRESETS, split_seeds
from .sampling import WalkConfig
from .trainer import TrainConfig, embed_multilevel

log = logging.getLogger("coarsembed")

_SIZE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([kmgt]?)(i?b)?\s*$", re.IGNORECASE)


def parse_size(text) -> int:
    """'65536', '64K', '64M', '1.5G', '64MiB' -> bytes (binary multiples)."""
    m = _SIZE.match(str(text))
    if not m:
        raise argparse.ArgumentTypeError(f"invalid size: {text!r}")
    mult = {"": 1, "k": 2**10, "m": 2**20, "g": 2**30, "t": 2**40}[m.group(2).lower()]
    return int(float(m.group(1)) * mult)


def read_graph(path, directed=False) -> Graph:
    if not os.path.exists(path):
        raise SystemExit(f"error: cannot read {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"GCSR":
        return load_csr(path, directed)
    return load_edge_list(path, directed)


def _add_graph_flags(p):
    p.add_argument("--directed", action="store_true", help="treat input edges as directed")


def _add_coarsen_flags(p):
    p.add_argument("--coarsen-threshold", type=int, default=100)
    p.add_argument("--shrink-limit", type=float, default=0.8)


def build_parser():
    ap = argparse.ArgumentParser(prog="coarsembed", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    e = sub.add_parser("embed", help="embed a graph")
    e.add_argument("graph")
    e.add_argument("-o", "--output", help="embedding file (default: <graph>.gemb)")
    e.add_argument("--text", action="store_true", help="write the text format instead of GEMB")
    e.add_argument("--record", help="run record path (default: <output>.run.json)")
    e.add_argument("--preset", choices=sorted(PRESETS), default="normal")
    e.add_argument("--scale", choices=("medium", "large"), default="medium",
                   help="which preset epoch budget to use")
    e.add_argument("--dim", type=int, default=128)
    e.add_argument("--epochs", type=int)
    e.add_argument("--lr", type=float)
    e.add_argument("--smoothing", type=float)
    e.add_argument("--negatives", type=int, default=3)
    e.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    e.add_argument("--memory-budget", type=parse_size)
    e.add_argument("--parts", type=int, help="force the part count K")
    e.add_argument("--pool-b", type=int, default=5)
    e.add_argument("--sub-bins", type=int, default=3)
    e.add_argument("--pool-bins", type=int, default=2)
    e.add_argument("--store-dir", help="keep out-of-arena parts as files here")
    e.add_argument("--trace", help="write the partitioned execution trace here")
    e.add_argument("--sampler", choices=("adjacency", "walk"), default="adjacency")
    e.add_argument("--walk-length", type=int, default=40)
    e.add_argument("--window", type=int, default=5)
    e.add_argument("--sync-period", type=int, default=1)
    e.add_argument("--concurrency", type=int, default=1,
                   help="emulated in-flight update sequences (1 = off)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--heuristics", default=Heuristics.HUB2.value,
                   choices=[h.value for h in Heuristics])
    e.add_argument("--max-levels", type=int)
    _add_coarsen_flags(e)
    _add_graph_flags(e)

    v = sub.add_parser("eval", help="evaluate an embedding")
    v.add_argument("--task", choices=("lp", "nc"), required=True)
    v.add_argument("--graph", required=True, help="the graph the embedding was trained on")
    v.add_argument("--embedding", required=True)
    v.add_argument("--test", help="lp: test pairs file, 'u v label' per line")
    v.add_argument("--labels", help="nc: 'vertex label [label ...]' per line")
    v.add_argument("--labeled", type=float, default=0.10)
    v.add_argument("--top-labels", type=int, default=100)
    v.add_argument("--dim", type=int, help="expected embedding dimension")
    v.add_argument("--record", help="run record of the embedding (supplies seed and preset)")
    v.add_argument("--seed", type=int)
    v.add_argument("--preset", help="preset name for the metrics record")
    v.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    v.add_argument("--logreg-epochs", type=int, default=LogRegConfig.epochs)
    v.add_argument("--metrics-out", help="append records here instead of stdout")
    _add_graph_flags(v)

    c = sub.add_parser("coarsen-report", help="per-level coarsening table")
    c.add_argument("graph")
    c.add_argument("--heuristics", default=Heuristics.HUB2.value,
                   help="comma separated: naive, ordering, ordering+hub2")
    c.add_argument("--threads", type=int, default=1)
    c.add_argument("--json", action="store_true")
    _add_coarsen_flags(c)
    _add_graph_flags(c)

    s = sub.add_parser("split", help="hold out edges for link prediction")
    s.add_argument("graph")
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0, help="master seed")
    s.add_argument("--train-out", required=True)
    s.add_argument("--test-out", required=True)
    _add_graph_flags(s)
    return ap


def _train_config(args, preset):
    epochs = args.epochs if args.epochs is not None else preset.epochs(args.scale)
    lr = args.lr if args.lr is not None else preset.lr
    if args.smoothing is not None:
        p = args.smoothing
    else:
        p = preset.p if preset.p is not None else 0.0
    walk = WalkConfig(args.walk_length, args.window)
    return TrainConfig(dim=args.dim, negatives=args.negatives, epochs=epochs, lr=lr, smoothing=p,
                       epochs_per_sync=args.sync_period, threads=args.threads,
                       sampler=args.sampler, walk=walk, concurrency=args.concurrency)


def cmd_embed(args):
    preset = PRESETS[args.preset]
    seeds = split_seeds(args.seed)
    try:
        tcfg = _train_config(args, preset)
        max_levels = 1 if not preset.coarsening else args.max_levels
        ccfg = CoarseningConfig(threshold=args.coarsen_threshold, shrink_limit=args.shrink_limit,
                                heuristics=args.heuristics, thread_count=args.threads,
                                max_levels=max_levels)
        pcfg = PartitionConfig(sub_bins=args.sub_bins, pool_bins=args.pool_bins, B=args.pool_b,
                               parts=args.parts, seed=seeds["partition"])
    except ValueError as exc:
        raise SystemExit(f"error: {exc}") from None
    tcfg.seed = seeds["train"]
    if args.parts is not None and args.memory_budget is None:
        raise SystemExit("error: --parts needs --memory-budget")

    g = read_graph(args.graph, args.directed)
    out = args.output or os.path.splitext(args.graph)[0] + (".emb.txt" if args.text else ".gemb")
    if args.trace:
        open(args.trace, "w").close()
    info = {}
    t0 = time.perf_counter()
    try:
        M = embed_multilevel(g, ccfg, tcfg, memory_budget=args.memory_budget, partition_cfg=pcfg,
                             store_dir=args.store_dir, trace_path=args.trace, info=info)
    except ValueError as exc:
        raise SystemExit(f"error: {exc}") from None
    wall = time.perf_counter() - t0
    if args.text:
        write_text(M, out, ids=g.ids)
    else:
        write_gemb(M, out)

    record = {
        "command": "embed",
        "version": __version__,
        "graph": os.path.abspath(args.graph),
        "vertices": g.vertex_count,
        "edges": g.num_edges,
        "directed": g.directed,
        "output": os.path.abspath(out),
        "preset": preset.name,
        "scale": args.scale,
        "master_seed": args.seed,
        "seeds": seeds,
        "jit": JIT_ENABLED,
        "train": tcfg.as_record(),
        "coarsening": {"threshold": ccfg.threshold, "shrink_limit": ccfg.shrink_limit,
                       "heuristics": ccfg.heuristics.value, "max_levels": ccfg.max_levels,
                       "thread_count": ccfg.thread_count},
        "partition": {"memory_budget": args.memory_budget, "parts": args.parts, "B": args.pool_b,
                      "sub_bins": args.sub_bins, "pool_bins": args.pool_bins,
                      "store_dir": args.store_dir},
        "run": info,
        "wall_seconds": wall,
    }
    rec_path = args.record or out + ".run.json"
    with open(rec_path, "w") as fh:
        json.dump(record, fh, indent=2, default=_json_default)
    parted = [lv for lv in info.get("levels", []) if lv["path"] == "partitioned"]
    print(f"embedded {g.vertex_count} vertices in {wall:.2f}s: D={info['depth']} "
          f"schedule={info['schedule']} -> {out}")
    for lv in parted:
        print(f"  level {lv['level']}: partitioned K={lv['K']} B={lv['B']} "
              f"P_GPU={lv['sub_bins']} S_GPU={lv['pool_bins']}")
    return 0


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _dense_lookup(g):
    if g.ids is None:
        return None
    return {int(v): i for i, v in enumerate(g.ids)}


def read_test_pairs(path, g):
    """'u v label' lines in input ids -> (pos, neg) arrays of dense ids."""
    data = np.loadtxt(path, dtype=np.int64, ndmin=2)
    if data.shape[1] != 3:
        raise SystemExit(f"error: {path}: expected 'u v label' lines")
    lookup = _dense_lookup(g)
    if lookup is not None:
        try:
            uv = np.array([[lookup[int(u)], lookup[int(v)]] for u, v in data[:, :2]], dtype=np.int64)
        except KeyError as exc:
            raise SystemExit(f"error: test vertex {exc.args[0]} is not in the graph") from None
    else:
        uv = data[:, :2]
    lab = data[:, 2] != 0
    return uv[lab], uv[~lab]


def cmd_eval(args):
    g = read_graph(args.graph, args.directed)
    M = read_gemb(args.embedding)
    if args.dim is not None and M.shape[1] != args.dim:
        raise SystemExit(f"error: embedding dimension {M.shape[1]} does not match --dim {args.dim}")
    if M.shape[0] != g.vertex_count:
        raise SystemExit(f"error: embedding has {M.shape[0]} rows, graph has {g.vertex_count} vertices")
    record = {}
    if args.record:
        with open(args.record) as fh:
            record = json.load(fh)
    seed = args.seed if args.seed is not None else record.get("seeds", {}).get("eval", 0)
    preset = args.preset or record.get("preset", "unknown")
    cfg = LogRegConfig(epochs=args.logreg_epochs, seed=seed)
    name = os.path.basename(args.graph)
    t0 = time.perf_counter()
    if args.task == "lp":
        if not args.test:
            raise SystemExit("error: --task lp needs --test")
        pos, neg = read_test_pairs(args.test, g)
        if len(pos) == 0 or len(neg) == 0:
            raise SystemExit("error: test file needs both positive and negative pairs")
        split = LinkPredSplit(g, pos, neg, np.arange(g.vertex_count))
        auc = eval_link_prediction(M, split, cfg, seed=seed)
        rec = metrics_record("lp", name, preset, seed, time.perf_counter() - t0, auc=auc)
    else:
        if not args.labels:
            raise SystemExit("error: --task nc needs --labels")
        labels = read_labels(args.labels, g.ids)
        micro, macro = eval_node_classification(M, labels, args.labeled, cfg, args.top_labels,
                                                seed=seed, threads=args.threads)
        rec = metrics_record("nc", name, preset, seed, time.perf_counter() - t0,
                             micro_f1=micro, macro_f1=macro)
    if args.metrics_out:
        with open(args.metrics_out, "a") as fh:
            emit_record(rec, fh)
    else:
        emit_record(rec, sys.stdout)
    return 0


def cmd_coarsen_report(args):
    g = read_graph(args.graph, args.directed)
    names = [h.strip() for h in args.heuristics.split(",") if h.strip()]
    try:
        heuristics = [Heuristics(h) for h in names]
    except ValueError as exc:
        raise SystemExit(f"error: {exc}") from None
    for h in heuristics:
        cfg = CoarseningConfig(threshold=args.coarsen_threshold, shrink_limit=args.shrink_limit,
                               heuristics=h, thread_count=args.threads)
        res = coarsen(g, cfg)
        if not args.json:
            print(f"# heuristics={h.value} D={res.depth} total_seconds={sum(res.seconds):.4f}")
            print(f"{'level':>5} {'seconds':>10} {'vertices':>10} {'edges':>12} {'density':>9}")
        for i, (lv, sec) in enumerate(zip(res.levels, res.seconds)):
            dens = lv.num_slots / lv.vertex_count if lv.vertex_count else 0.0
            if args.json:
                print(json.dumps({"heuristics": h.value, "level": i, "seconds": sec,
                                  "vertices": lv.vertex_count, "edges": lv.num_edges,
                                  "density": dens}))
            else:
                print(f"{i:>5} {sec:>10.4f} {lv.vertex_count:>10} {lv.num_edges:>12} {dens:>9.3f}")
    return 0


def cmd_split(args):
    g = read_graph(args.graph, args.directed)
    try:
        sp = split_link_pred(g, args.test_fraction, split_seeds(args.seed)["split"])
    except ValueError as exc:
        raise SystemExit(f"error: {exc}") from None
    write_edge_list(sp.train, args.train_out, original_ids=True)
    ids = sp.train.ids
    with open(args.test_out, "w") as fh:
        for lab, pairs in ((1, sp.test_pos), (0, sp.test_neg)):
            for u, v in pairs:
                fh.write(f"{ids[u]} {ids[v]} {lab}\n")
    print(f"train: {sp.train.num_edges} edges, test: {len(sp.test_pos)} positive, "
          f"{len(sp.test_neg)} negative pairs")
    return 0


COMMANDS = {"embed": cmd_embed, "eval": cmd_eval, "coarsen-report": cmd_coarsen_report,
            "split": cmd_split}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
