"""Command-line surface.

Subcommands: train-supervised, train-sar, agree0-eval, eval, synth-gen,
split-views, collapse-labels, loss-surface. Any flag can also be set from a
plain ``key = value`` config file via --config; explicit flags override the
file. Commands that involve randomness (synth-gen, split-views, train-sar)
require --seed so every run is reproducible.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
SAR_THREADS optionally caps worker threads for the agreement projections.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

import numpy as np

from . import chain as ch
from . import data as dio
from . import maxent as mx
from . import metrics as mt
from .agreement import LabelMapping, SolverConfig
from .errors import DataError, NumericalError
from .features import FeatureIndexer
from .optim import OptConfig
from .probs import LabelSet
from .trainer import (
    SarConfig,
    agree0_decode,
    agree0_predict,
    one_hot,
    train_sar,
    write_trace_csv,
)

_CSV_SCHEMA = ("CSV report schema: one 'metric,label,value' row per entry; "
               "global metrics leave the label empty, confusion cells use "
               "'true->predicted'.")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we own the exit codes
        raise _UsageError(message)


def _read_config_args(path) -> list[str]:
    """Turn 'key = value' lines into argv tokens (booleans: true/false)."""
    injected: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"config line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            flag = "--" + key.strip().replace("_", "-")
            value = value.strip()
            if value.lower() in ("true", "yes", "on"):
                injected.append(flag)
            elif value.lower() in ("false", "no", "off"):
                continue
            else:
                injected.extend([flag, value])
    return injected


def _inject_config(argv: list[str]) -> list[str]:
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise _UsageError("--config needs a file path")
    injected = _read_config_args(argv[i + 1])
    # Prepend right after the subcommand so explicit flags win (last wins).
    return argv[:1] + injected + argv[1:]


def _parse_columns(text: str) -> dio.ColumnSpec:
    parts = text.split(",")
    if len(parts) == 2:
        return dio.ColumnSpec(int(parts[0]), int(parts[1]), None)
    if len(parts) == 3:
        return dio.ColumnSpec(int(parts[0]), int(parts[1]), int(parts[2]))
    raise _UsageError("--columns wants 'word,pos' or 'word,pos,tag' indices")


def _parse_noise(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) == 1:
        return (parts[0], parts[0])
    if len(parts) == 2:
        return (parts[0], parts[1])
    raise _UsageError("--noise wants one rate or 'view1,view2'")


def _labeled_rows(corpus: dio.FlatCorpus, path) -> list[dio.FlatExample]:
    rows = corpus.labeled()
    if not rows:
        raise DataError(f"no labeled rows in {path}")
    return rows


def _flat_view_pairs(rows, view: int, indexer: FeatureIndexer):
    return [(indexer.vectorize(ex.view1 if view == 1 else ex.view2), ex.label)
            for ex in rows]


def _sorted_label_set(names) -> LabelSet:
    return LabelSet(tuple(sorted(set(names))))


def _maybe_mapping(args) -> Optional[LabelMapping]:
    return dio.parse_mapping(args.mapping) if getattr(args, "mapping", None) else None


def _emit_report(report: mt.EvalReport, csv_path: Optional[str]) -> None:
    print(report.render())
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("metric,label,value\n")
            for metric, label, value in report.csv_rows():
                fh.write(f"{metric},{label},{value}\n")


# ----------------------------------------------------------------- commands


def cmd_synth_gen(args) -> None:
    config = dio.GenConfig(
        num_labels=args.labels,
        features_per_view=args.features_per_view,
        tokens_per_example=args.tokens_per_example,
        noise=_parse_noise(args.noise),
        n_labeled=args.labeled,
        n_unlabeled=args.unlabeled,
        n_test=args.test,
    )
    train_corpus, test_corpus = dio.synth_two_view(config, args.seed)
    dio.write_flat(train_corpus, args.out_train)
    dio.write_flat(test_corpus, args.out_test)
    print(f"wrote {len(train_corpus)} training rows to {args.out_train} "
          f"and {len(test_corpus)} test rows to {args.out_test}")


def cmd_split_views(args) -> None:
    corpus = dio.parse_flat(args.input)
    dio.write_flat(dio.random_feature_split(corpus, args.seed), args.output)
    print(f"wrote {len(corpus)} rows to {args.output}")


def cmd_collapse_labels(args) -> None:
    mapping = dio.parse_mapping(args.mapping)
    if args.format == "flat":
        corpus = dio.parse_flat(args.input)
        dio.write_flat(dio.collapse_labels(corpus, mapping), args.output)
    else:
        corpus = dio.parse_conll(args.input, _parse_columns(args.columns))
        dio.write_conll(dio.collapse_labels(corpus, mapping), args.output)
    print(f"wrote collapsed corpus to {args.output}")


def _opt_config(args) -> OptConfig:
    return OptConfig(grad_tol=args.grad_tol, max_iters=args.max_iters)


def cmd_train_supervised(args) -> None:
    indexer = FeatureIndexer()
    if args.model_kind == "flat":
        rows = _labeled_rows(dio.parse_flat(args.labeled), args.labeled)
        pairs = _flat_view_pairs(rows, args.view, indexer)
        label_set = _sorted_label_set(y for _, y in pairs)
        init = mx.MaxentParams.zeros(label_set, len(indexer) + 1, args.sigma2)
        data = [mx.SoftExample(fv, one_hot(label_set, y), 1.0 / len(pairs))
                for fv, y in pairs]
        result = mx.train(data, init, _opt_config(args))
        mx.save_maxent(result.params, args.out)
    else:
        seq = dio.parse_conll(args.labeled, _parse_columns(args.columns))
        examples = dio.chain_examples_from_seq(seq, args.view, args.window,
                                               indexer, args.char_ngrams)
        tags = [t for ex in examples for t in (ex.gold or ())]
        if not tags:
            raise DataError(f"no gold tags in {args.labeled}")
        label_set = _sorted_label_set(tags)
        init = ch.CrfParams.zeros(label_set, max(len(indexer), 1), args.sigma2)
        data = [(ex, None, 1.0 / len(examples)) for ex in examples]
        result = ch.train_crf(data, init, _opt_config(args))
        ch.save_crf(result.params, args.out)
    indexer.freeze()
    indexer.save(args.out + ".features")
    status = "converged" if result.converged else "hit iteration budget"
    print(f"wrote model to {args.out} ({status}, {result.iterations} iterations, "
          f"grad norm {result.grad_norm:.3g}, objective {result.objective:.6f})")


def _sar_config(args) -> SarConfig:
    opt = OptConfig(grad_tol=args.grad_tol, max_iters=args.max_iters)
    return SarConfig(
        c=args.c,
        balance_mode=args.balance,
        iterations=args.iterations,
        sigma2_view1=args.sigma2_1,
        sigma2_view2=args.sigma2_2,
        opt_view1=opt,
        opt_view2=opt,
        solver=SolverConfig(max_iters=args.solver_max_iters, tol=args.solver_tol),
        seed=args.seed,
        early_stop_tol=args.early_stop_tol,
    )


def cmd_train_sar(args) -> None:
    mapping = _maybe_mapping(args)
    config = _sar_config(args)
    ix1, ix2 = FeatureIndexer(), FeatureIndexer()
    if args.model_kind == "flat":
        rows1 = _labeled_rows(dio.parse_flat(args.labeled1, label_side=1),
                              args.labeled1)
        rows2 = _labeled_rows(dio.parse_flat(args.labeled2, label_side=2),
                              args.labeled2)
        unl = dio.parse_flat(args.unlabeled).unlabeled()
        labeled1 = _flat_view_pairs(rows1, 1, ix1)
        labeled2 = _flat_view_pairs(rows2, 2, ix2)
        unlabeled = [(ix1.vectorize(ex.view1), ix2.vectorize(ex.view2))
                     for ex in unl]
    else:
        cols = _parse_columns(args.columns)
        unl_cols = _parse_columns(args.unlabeled_columns)
        seq1 = dio.parse_conll(args.labeled1, cols)
        seq2 = dio.parse_conll(args.labeled2, cols)
        unl_seq = dio.parse_conll(args.unlabeled, unl_cols)
        labeled1 = dio.chain_examples_from_seq(seq1, 1, args.window, ix1,
                                               args.char_ngrams)
        labeled2 = dio.chain_examples_from_seq(seq2, 2, args.window, ix2,
                                               args.char_ngrams)
        unlabeled = list(zip(
            dio.chain_examples_from_seq(unl_seq, 1, args.window, ix1,
                                        args.char_ngrams),
            dio.chain_examples_from_seq(unl_seq, 2, args.window, ix2,
                                        args.char_ngrams),
        ))
    if mapping is None:
        if args.model_kind == "flat":
            names = [y for _, y in labeled1] + [y for _, y in labeled2]
        else:
            names = [t for ex in labeled1 + labeled2 for t in ex.gold]
        label_set, mapping_arg = _sorted_label_set(names), None
    else:
        label_set, mapping_arg = None, mapping

    state = train_sar(labeled1, labeled2, unlabeled, config, args.model_kind,
                      mapping=mapping_arg, label_set=label_set)
    save = mx.save_maxent if args.model_kind == "flat" else ch.save_crf
    save(state.params1, args.out_prefix + ".view1.model")
    save(state.params2, args.out_prefix + ".view2.model")
    ix1.freeze()
    ix2.freeze()
    ix1.save(args.out_prefix + ".view1.model.features")
    ix2.save(args.out_prefix + ".view2.model.features")
    write_trace_csv(state.trace, args.out_prefix + ".trace.csv")
    first, last = state.trace[0], state.trace[-1]
    print(f"wrote models and trace under prefix {args.out_prefix}")
    print(f"objective: {first.total:.6f} -> {last.total:.6f} "
          f"over {last.iteration} rounds")
    for stat in state.estep_stats:
        print(f"  round {stat.iteration}: {stat.converged}/{stat.instances} "
              f"projections converged (max {stat.max_solver_iterations} "
              f"solver iterations)")


def _load_flat_model(path):
    return mx.load_maxent(path), FeatureIndexer.load(path + ".features")


def _load_chain_model(path):
    return ch.load_crf(path), FeatureIndexer.load(path + ".features")


def cmd_eval(args) -> None:
    if args.model_kind == "flat":
        params, indexer = _load_flat_model(args.model)
        rows = _labeled_rows(dio.parse_flat(args.test), args.test)
        preds, golds = [], []
        for ex in rows:
            fv = indexer.vectorize(ex.view1 if args.view == 1 else ex.view2)
            preds.append(params.label_set.name(
                mx.predict_dist(params, fv).argmax()))
            golds.append(ex.label)
        tag_seqs = None
    else:
        params, indexer = _load_chain_model(args.model)
        seq = dio.parse_conll(args.test, _parse_columns(args.columns))
        examples = dio.chain_examples_from_seq(seq, args.view, args.window,
                                               indexer, args.char_ngrams)
        pred_seqs, gold_seqs = [], []
        for ex in examples:
            if ex.gold is None:
                raise DataError("test sentences must carry gold tags")
            path = ch.viterbi(ch.build_potentials(params, ex))
            pred_seqs.append([params.label_set.name(int(i)) for i in path])
            gold_seqs.append(list(ex.gold))
        preds = [t for s in pred_seqs for t in s]
        golds = [t for s in gold_seqs for t in s]
        tag_seqs = (pred_seqs, gold_seqs) if args.chunk_f1 else None
    report = mt.evaluate(preds, golds, baseline_acc=args.baseline_acc,
                         baseline_name=args.baseline_name,
                         tag_sequences=tag_seqs)
    _emit_report(report, args.csv)


def cmd_agree0_eval(args) -> None:
    mapping = _maybe_mapping(args)
    if args.model_kind == "flat":
        params1, ix1 = _load_flat_model(args.model1)
        params2, ix2 = _load_flat_model(args.model2)
        rows = _labeled_rows(dio.parse_flat(args.test), args.test)
        preds, golds = [], []
        for ex in rows:
            preds.append(agree0_predict(params1, params2,
                                        ix1.vectorize(ex.view1),
                                        ix2.vectorize(ex.view2), mapping))
            golds.append(ex.label)
        tag_seqs = None
    else:
        params1, ix1 = _load_chain_model(args.model1)
        params2, ix2 = _load_chain_model(args.model2)
        seq = dio.parse_conll(args.test, _parse_columns(args.columns))
        ex1s = dio.chain_examples_from_seq(seq, 1, args.window, ix1,
                                           args.char_ngrams)
        ex2s = dio.chain_examples_from_seq(seq, 2, args.window, ix2,
                                           args.char_ngrams)
        pred_seqs, gold_seqs = [], []
        for ex1, ex2 in zip(ex1s, ex2s):
            if ex1.gold is None:
                raise DataError("test sentences must carry gold tags")
            pred_seqs.append(list(agree0_decode(params1, params2, ex1, ex2,
                                                mapping)))
            gold_seqs.append(list(ex1.gold))
        preds = [t for s in pred_seqs for t in s]
        golds = [t for s in gold_seqs for t in s]
        tag_seqs = (pred_seqs, gold_seqs) if args.chunk_f1 else None
    report = mt.evaluate(preds, golds, baseline_acc=args.baseline_acc,
                         baseline_name=args.baseline_name,
                         tag_sequences=tag_seqs)
    _emit_report(report, args.csv)


def cmd_loss_surface(args) -> None:
    mt.write_loss_surface_csv(args.half_range, args.step, args.out)
    print(f"wrote loss surface grid to {args.out}")


# ------------------------------------------------------------------ parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="read 'key = value' defaults; explicit flags override")


def _add_chain_flags(p: argparse.ArgumentParser, with_unlabeled=False) -> None:
    p.add_argument("--window", type=int, default=1,
                   help="context window for the neighbor view (default 1)")
    p.add_argument("--char-ngrams", action="store_true",
                   help="add character trigram features to the content view")
    p.add_argument("--columns", default="0,1,2",
                   help="CoNLL column indices 'word,pos,tag' (default 0,1,2)")
    if with_unlabeled:
        p.add_argument("--unlabeled-columns", default="0,1",
                       help="column indices for the unlabeled file (default 0,1)")


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--baseline-acc", type=float, default=None,
                   help="baseline accuracy for relative error reduction")
    p.add_argument("--baseline-name", default=None)
    p.add_argument("--chunk-f1", action="store_true",
                   help="score BIO spans as well (chain models)")
    p.add_argument("--csv", default=None, help="also write the report as CSV. "
                   + _CSV_SCHEMA)


def build_parser() -> _Parser:
    parser = _Parser(prog="sar", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic two-view corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--labels", type=int, default=2)
    p.add_argument("--features-per-view", type=int, default=40)
    p.add_argument("--tokens-per-example", type=int, default=4)
    p.add_argument("--noise", default="0.0", help="corruption rate, or 'v1,v2'")
    p.add_argument("--labeled", type=int, default=20)
    p.add_argument("--unlabeled", type=int, default=500)
    p.add_argument("--test", type=int, default=500)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("split-views",
                       help="split an undivided feature space into two views")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_split_views)

    p = sub.add_parser("collapse-labels",
                       help="rewrite labels through a fine->coarse mapping")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mapping", required=True,
                   help="file of 'fine<TAB>coarse' lines")
    p.add_argument("--format", choices=("flat", "conll"), default="flat")
    p.add_argument("--columns", default="0,1,2")
    _add_common(p)
    p.set_defaults(func=cmd_collapse_labels)

    p = sub.add_parser("train-supervised", help="train one view model")
    p.add_argument("--model-kind", choices=("flat", "chain"), required=True)
    p.add_argument("--labeled", required=True)
    p.add_argument("--view", type=int, choices=(1, 2), default=1,
                   help="flat: feature column; chain: 1=content, 2=context")
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--grad-tol", type=float, default=1e-5)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--out", required=True,
                   help="model path; features map goes to OUT.features")
    _add_chain_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train_supervised)

    p = sub.add_parser("train-sar",
                       help="semi-supervised training of both views")
    p.add_argument("--model-kind", choices=("flat", "chain"), required=True)
    p.add_argument("--labeled1", required=True)
    p.add_argument("--labeled2", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--mapping", default=None,
                   help="fine->coarse label mapping for partial agreement")
    p.add_argument("--c", type=float, default=1.0,
                   help="weight of the unlabeled agreement term")
    p.add_argument("--balance", action="store_true",
                   help="scale so each unlabeled instance counts like "
                        "|labeled|/|unlabeled| labeled ones")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--sigma2-1", type=float, default=1.0)
    p.add_argument("--sigma2-2", type=float, default=1.0)
    p.add_argument("--grad-tol", type=float, default=1e-5)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--solver-max-iters", type=int, default=200)
    p.add_argument("--solver-tol", type=float, default=1e-6)
    p.add_argument("--early-stop-tol", type=float, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-prefix", required=True)
    _add_chain_flags(p, with_unlabeled=True)
    _add_common(p)
    p.set_defaults(func=cmd_train_sar)

    p = sub.add_parser("eval", help="evaluate one trained model. " + _CSV_SCHEMA)
    p.add_argument("--model-kind", choices=("flat", "chain"), required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--view", type=int, choices=(1, 2), default=1)
    _add_chain_flags(p)
    _add_eval_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("agree0-eval",
                       help="evaluate the projected combination of two models. "
                            + _CSV_SCHEMA)
    p.add_argument("--model-kind", choices=("flat", "chain"), required=True)
    p.add_argument("--model1", required=True)
    p.add_argument("--model2", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--mapping", default=None)
    _add_chain_flags(p)
    _add_eval_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_agree0_eval)

    p = sub.add_parser("loss-surface",
                       help="export the pairwise disagreement penalty grid")
    p.add_argument("--half-range", type=float, default=5.0,
                   help="scores run over [-a, a] (default 5)")
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_loss_surface)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        argv = _inject_config(argv)
        args = build_parser().parse_args(argv)
        args.func(args)
        return 0
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
