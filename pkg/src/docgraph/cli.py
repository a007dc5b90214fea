"""Command-line entry point.

Subcommands cover the whole pipeline: corpus generation, graph
inspection, training, evaluation, the two ablation matrices, the
reading-order shuffle sweep, and SVG rendering. Every output file starts
with a config-echo header so results are reproducible from the file
alone plus the input data.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import nn, tasks
from .data_io import (
    Corpus,
    SyntheticFormSpec,
    gen_synthetic,
    load_corpus,
    load_funsd,
    multi_column_fraction,
    save_corpus,
)
from .errors import DataError, NumericFailure
from .gcn import GcnConfig
from .geometry import build_doc_graph
from .render import render_to_file
from .rope import MODE_ALIASES, RopeEncodingConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; our usage code is 1
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rope", choices=sorted(MODE_ALIASES), default="both",
                   help="reading-order code encoding fed to messages")
    p.add_argument("--edge-geo", choices=["on", "off"], default="on",
                   help="include edge geometry features in messages")
    p.add_argument("--hops", type=int, default=None,
                   help="message-passing rounds (default: 7 synthetic, 2 funsd)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--steps", type=int, default=None,
                   help="override total optimizer steps (wins over --epochs)")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--grad-clip", type=float, default=None)


def _dataset_kind(corpus: Corpus) -> str:
    return corpus.meta.get("dataset", "unknown")


def _experiment_config(args, train_corpus: Corpus) -> tasks.ExperimentConfig:
    dataset = _dataset_kind(train_corpus)
    hops = args.hops if args.hops is not None else (2 if dataset == "funsd" else 7)
    epochs = args.epochs
    if args.steps is not None:
        epochs = max(1, -(-args.steps // len(train_corpus)))  # ceil division
    gcn_cfg = GcnConfig(
        hops=hops,
        n_classes=train_corpus.schema.n_classes,
        use_edge_geo=args.edge_geo == "on",
        rope=RopeEncodingConfig(mode=MODE_ALIASES[args.rope]),
    )
    grouping_ok = all(d.entities is not None for d in train_corpus.documents)
    return tasks.ExperimentConfig(
        dataset_id=dataset,
        gcn=gcn_cfg,
        seed=args.seed,
        epochs=epochs,
        lr=args.lr,
        grad_clip=args.grad_clip,
        tasks=("labeling", "grouping") if grouping_ok else ("labeling",),
    )


def _load_any_corpus(path: str, split: str | None = None) -> Corpus:
    p = Path(path)
    if p.is_dir():
        data = load_funsd(p)
        return data.train if split != "test" else data.test
    return load_corpus(p)


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticFormSpec.from_json(Path(args.spec).read_text(encoding="utf-8")) if args.spec else SyntheticFormSpec()
    corpus = gen_synthetic(spec, n_docs=args.n_docs, seed=args.seed)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} documents to {args.out} "
          f"(multi-column fraction {multi_column_fraction(corpus):.2f})")
    return EXIT_OK


def cmd_build_graph(args) -> int:
    corpus = _load_any_corpus(args.corpus, args.split)
    if args.doc_id:
        try:
            docs = [corpus.by_id(args.doc_id)]
        except KeyError as e:
            raise DataError(str(e)) from e
    else:
        docs = list(corpus.documents)
    n_edges_total = 0
    print("doc_id\tn_tokens\tn_vertices\tund_edges\tmax_possible\tsparsity\tmax_degree")
    for d in docs:
        g = build_doc_graph(d)
        n = g.n_vertices
        u = len(g.skeleton.undirected_edges)
        n_edges_total += u
        max_possible = n * (n - 1) // 2
        degree = np.zeros(n, dtype=int)
        for i, j in g.skeleton.undirected_edges:
            degree[i] += 1
            degree[j] += 1
        sparsity = u / max_possible if max_possible else 0.0
        print(f"{d.id}\t{d.n_tokens}\t{n}\t{u}\t{max_possible}\t{sparsity:.4f}\t{degree.max() if n else 0}")
    print(f"# total undirected edges over {len(docs)} docs: {n_edges_total}")
    return EXIT_OK


def cmd_train(args) -> int:
    train_corpus = _load_any_corpus(args.corpus, "train")
    eval_corpus = _load_any_corpus(args.eval_corpus, "test") if args.eval_corpus else None
    cfg = _experiment_config(args, train_corpus)
    result = tasks.train(
        train_corpus, cfg, eval_corpus=eval_corpus, log_path=args.log,
        progress=lambda msg: print(msg, flush=True),
    )
    nn.save_checkpoint(args.out_checkpoint, result.store, cfg.to_dict(), tasks.FEATURE_LAYOUT_VERSION)
    print(f"checkpoint written to {args.out_checkpoint} after {result.total_steps} steps")
    return EXIT_OK


def cmd_eval(args) -> int:
    corpus = _load_any_corpus(args.corpus, "test")
    store, meta = nn.load_checkpoint(args.checkpoint)
    cfg = tasks.ExperimentConfig.from_dict(meta["config"])
    prepared = tasks.prepare_corpus(corpus, cfg.text_cfg)
    reports = []
    if args.task in ("labeling", "both"):
        reports.append(tasks.evaluate_labeling(store, corpus, cfg, prepared))
    if args.task in ("grouping", "both"):
        reports.append(tasks.evaluate_grouping(store, corpus, cfg, prepared))
    for rep in reports:
        print(f"{rep.task}: {tasks.format_metrics_line(rep)}")
        if args.out:
            out = Path(args.out)
            path = out if len(reports) == 1 else out.with_suffix(f".{rep.task}{out.suffix}")
            tasks.write_metrics_report(rep, path)
            print(f"wrote {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    train_corpus = _load_any_corpus(args.train, "train")
    test_corpus = _load_any_corpus(args.test, "test")
    cfg = _experiment_config(args, train_corpus)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    rows = tasks.TABLE_ENCODING_TYPES if args.axis == "types" else tasks.TABLE_ENCODING_FUNCTIONS
    cache: dict = {}
    table = tasks.run_ablation_matrix(
        train_corpus, test_corpus, cfg, seeds, rows=rows,
        axis=f"encoding_{args.axis}", cell_cache=cache,
        progress=lambda msg: print(msg, flush=True),
    )
    tasks.write_ablation_table(table, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_sweep_shuffle(args) -> int:
    train_corpus = _load_any_corpus(args.train, "train")
    test_corpus = _load_any_corpus(args.test, "test")
    cfg = _experiment_config(args, train_corpus)
    fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    sweep = tasks.run_shuffle_sweep(
        train_corpus, test_corpus, cfg, fractions, test_only=args.test_only,
        progress=lambda msg: print(msg, flush=True),
    )
    tasks.write_sweep_curve(sweep, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    corpus = _load_any_corpus(args.corpus, args.split)
    try:
        doc = corpus.by_id(args.doc_id)
    except KeyError as e:
        raise DataError(str(e)) from e
    target = args.target if args.show_rope else None
    if args.show_rope and target is None:
        raise DataError("--show-rope requires --target <vertex id>")
    render_to_file(doc, args.out, show_rope_target=target, show_text=args.show_text)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="docgraph", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic form corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-docs", type=int, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--spec", default=None, help="generator spec JSON (sformv1)")
    p.set_defaults(fn=cmd_gen_synthetic)

    p = sub.add_parser("build-graph", help="construct skeleton graphs and print stats")
    p.add_argument("--corpus", required=True, help="corpv1 file or FUNSD root dir")
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--doc-id", default=None)
    p.set_defaults(fn=cmd_build_graph)

    p = sub.add_parser("train", help="train a model, write a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--eval-corpus", default=None)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--log", default=None)
    _add_model_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--task", choices=["labeling", "grouping", "both"], default="both")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation matrix over encoding configs")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--axis", choices=["types", "functions"], default="types")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep-shuffle", help="reading-order shuffle sensitivity curve")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--fractions", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--test-only", action="store_true", help="shuffle only the test serialization")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(fn=cmd_sweep_shuffle)

    p = sub.add_parser("render", help="render a document and its graph to SVG")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--doc-id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--show-rope", action="store_true")
    p.add_argument("--target", type=int, default=None, help="target vertex for code labels")
    p.add_argument("--show-text", action="store_true")
    p.set_defaults(fn=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailure, nn.NonFiniteError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
