"""Command-line entry points: convert, train, eval, predict, gradcheck,
inspect-transitions, disagreement.

Options can come from a JSON config file (--config, or the ENTREL_CONFIG
environment variable); explicit flags always win. Exit codes: 0 success,
1 runtime failure, 2 usage/config error.
"""

import argparse
import json
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from entrel import analysis, evaluation, model, synth, training
from entrel.corpus import (
    ColumnMap,
    CorpusError,
    LabelSpace,
    NO_RELATION,
    Sentence,
    corpus_vocabulary,
    load_canonical,
    load_embeddings,
    parse_raw,
    random_embeddings,
    write_canonical,
)
from entrel.querygen import (
    ConfigError,
    Query,
    QueryError,
    dump_queries,
    gen_setup1,
    gen_setup2,
    gen_setup3,
    subsample_negatives,
)

CONFIG_ENV = "ENTREL_CONFIG"
DEFAULT_KEEP_PROB = 0.3  # train/dev negative subsampling for setups 2/3


def _generate_queries(sentences, setup):
    if setup == 1:
        return gen_setup1(sentences), None
    if setup == 2:
        return gen_setup2(sentences)
    return gen_setup3(sentences)


def _counts(sentences):
    entity_counts = Counter()
    relation_counts = Counter()
    tokens = 0
    for sentence in sentences:
        tokens += len(sentence.tokens)
        for ent in sentence.entities:
            entity_counts[ent.type] += 1
        for rel in sentence.relations:
            relation_counts[rel.type] += 1
    return tokens, entity_counts, relation_counts


def cmd_convert(args) -> int:
    cmap = ColumnMap(
        sent_col=args.sent_col,
        tag_col=args.tag_col,
        idx_col=args.idx_col,
        word_col=args.word_col,
        split_slash=not args.no_split_slash,
    )
    sentences = parse_raw(args.input, cmap)
    write_canonical(args.output, sentences)
    tokens, entity_counts, relation_counts = _counts(sentences)
    print(f"sentences: {len(sentences)}")
    print(f"tokens: {tokens}")
    for label in LabelSpace().ec_labels:
        print(f"entities[{label}]: {entity_counts.get(label, 0)}")
    for label in LabelSpace().re_labels:
        if label == NO_RELATION:
            continue
        print(f"relations[{label}]: {relation_counts.get(label, 0)}")
    setup1 = gen_setup1(sentences)
    print(f"queries[setup1]: {len(setup1)}")
    print(f"N[setup1]: {sum(1 for q in setup1 if q.gold_rel == NO_RELATION)}")
    setup2, _ = gen_setup2(sentences)
    print(f"queries[setup2]: {len(setup2)}")
    print(f"N[setup2]: {sum(1 for q in setup2 if q.gold_rel == NO_RELATION)}")
    setup3, _ = gen_setup3(sentences)
    print(f"queries[setup3]: {len(setup3)}")
    print(f"N[setup3]: {sum(1 for q in setup3 if q.gold_rel == NO_RELATION)}")
    return 0


def _build_table(sentences, args, hyper, seed):
    rng = np.random.default_rng((seed, 2))
    vocab = corpus_vocabulary(sentences)
    if args.embeddings:
        table = load_embeddings(args.embeddings, vocab, rng=rng,
                                trainable=not args.freeze_embeddings,
                                dtype=hyper.np_dtype)
        if table.dim != hyper.emb_dim:
            raise ConfigError(
                f"embedding file dim {table.dim} != configured emb-dim {hyper.emb_dim}"
            )
        return table
    return random_embeddings(vocab, hyper.emb_dim, rng,
                             trainable=not args.freeze_embeddings,
                             dtype=hyper.np_dtype)


def _hyper_from_args(args) -> model.HyperParams:
    overrides = {}
    for name in ("nk_c", "nk_e", "h_c", "h_e", "k", "emb_dim"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    return model.HyperParams.defaults_for(args.setup, args.output_layer, **overrides)


def cmd_train(args) -> int:
    train_sentences = load_canonical(args.train)
    dev_sentences = load_canonical(args.dev) if args.dev else []
    hyper = _hyper_from_args(args)
    config = training.TrainConfig(
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        l2=args.l2,
        max_epochs=args.max_epochs,
        seed=args.seed,
        setup=args.setup,
        output_layer=args.output_layer,
        neg_keep_prob=args.keep_prob,
        masked_decode=args.masked_decode,
        freeze_embeddings=args.freeze_embeddings,
    )

    train_queries, _ = _generate_queries(train_sentences, config.setup)
    dev_queries, _ = _generate_queries(dev_sentences, config.setup)
    if config.setup == 1:
        if config.neg_keep_prob is not None:
            print("warning: --keep-prob ignored for setup 1", file=sys.stderr)
    else:
        keep = config.neg_keep_prob if config.neg_keep_prob is not None else DEFAULT_KEEP_PROB
        train_queries = subsample_negatives(train_queries, keep, (config.seed, 3, 0))
        dev_queries = subsample_negatives(dev_queries, keep, (config.seed, 3, 1))

    table = _build_table(train_sentences + dev_sentences, args, hyper, config.seed)
    params = model.init_params(hyper, LabelSpace(), table, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.dump_queries:
        dump_queries(args.dump_queries, train_queries)

    state = training.train_loop(
        params,
        train_queries,
        dev_queries,
        config,
        out_dir=out_dir,
        dev_sentences=dev_sentences,
        log_path=out_dir / "log.jsonl",
    )
    print(f"epochs: {state.epoch}")
    print(f"best dev Avg EC+RE: {state.best_metric}")
    print(f"best checkpoint: {state.best_path}")
    print(f"final checkpoint: {out_dir / 'final'}")
    return 0


def _load_and_check(checkpoint):
    params, meta = model.load_checkpoint(checkpoint)
    expected = LabelSpace()
    ls = params.label_space
    if ls.ec_labels != expected.ec_labels or ls.re_labels != expected.re_labels:
        raise RuntimeError(
            "checkpoint label space does not match this build: "
            f"{ls.ec_labels}/{ls.re_labels}"
        )
    return params, meta


def cmd_eval(args) -> int:
    params, _ = _load_and_check(args.checkpoint)
    sentences = load_canonical(args.corpus)
    queries, _ = _generate_queries(sentences, args.setup)
    ls = params.label_space
    if args.oracle:
        preds = [model.gold_indices(q, ls) for q in queries]
    else:
        preds = model.predict_queries(queries, params, args.masked_decode)
    report = evaluation.score_queries(queries, preds, args.setup, ls,
                                      sentences, args.omit_other)
    text = evaluation.format_report(report, ls)
    print(text)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.json", "w", encoding="utf-8") as handle:
            json.dump(report.as_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")
        (out_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
    return 0


def _parse_span(text):
    try:
        start, end = text.split(":")
        span = (int(start), int(end))
    except ValueError:
        raise ConfigError(f"span must be start:end token indices, got {text!r}")
    if span[0] >= span[1]:
        raise ConfigError(f"span {text!r} is empty")
    return span


def cmd_predict(args) -> int:
    params, _ = _load_and_check(args.checkpoint)
    tokens = args.sentence.split()
    span_i = _parse_span(args.span1)
    span_j = _parse_span(args.span2)
    if span_i == span_j:
        raise ConfigError("the two spans must differ")
    if span_i > span_j:
        span_i, span_j = span_j, span_i
    sentence = Sentence("cli", tokens, [], [])
    query = Query(sentence, span_i, span_j, "O", NO_RELATION, "O", setup=1)
    d, _ = model.forward_query(query, params)
    pred = model.decode_query(d, params, args.masked_decode)
    ls = params.label_space
    t1, r, t2 = (ls.label_of(i) for i in pred)
    e1 = " ".join(tokens[span_i[0] : span_i[1]])
    e2 = " ".join(tokens[span_j[0] : span_j[1]])
    print(f"({e1!r}, {e2!r}) => ({t1}, {r}, {t2})")
    print(f"scores: t1={d[0, pred[0]]:.4f} r={d[1, pred[1]]:.4f} t2={d[2, pred[2]]:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    grammar = synth.default_grammar(seed=args.seed)
    sentences = synth.generate(grammar, max(8, args.queries * 2))
    queries = gen_setup1(sentences)[: args.queries]
    hyper = model.HyperParams(nk_c=4, nk_e=3, h_c=5, h_e=4, k=2, emb_dim=6,
                              output_layer=args.output_layer)
    rng = np.random.default_rng((args.seed, 2))
    table = random_embeddings(corpus_vocabulary(sentences), hyper.emb_dim, rng)
    params = model.init_params(hyper, LabelSpace(), table, seed=args.seed)
    report = training.grad_check(params, queries, l2=args.l2, tolerance=args.tolerance)
    for name in sorted(report.errors):
        status = "ok" if report.errors[name] < report.tolerance else "FAIL"
        print(f"{name:<14} max rel err {report.errors[name]:.3e}  {status}")
    print(f"gradcheck: {'PASS' if report.passed else 'FAIL'}")
    return 0 if report.passed else 1


def cmd_inspect_transitions(args) -> int:
    params, _ = _load_and_check(args.checkpoint)
    report = analysis.inspect_transitions(params.transitions.value,
                                          params.label_space, args.threshold)
    print(f"transitions above {report.threshold}: {len(report.edges)}")
    for edge in report.edges:
        tag = " [tag]" if edge.involves_tag else ""
        print(f"{edge.from_label} -> {edge.to_label}: {edge.score:.4f}{tag}")
    return 0


def cmd_disagreement(args) -> int:
    params, _ = _load_and_check(args.checkpoint)
    sentences = load_canonical(args.corpus)
    queries, _ = _generate_queries(sentences, args.setup)
    preds = model.predict_queries(queries, params, args.masked_decode)
    groups, _ = evaluation.assemble_votes(queries, preds, params.label_space)
    voted = [(evaluation.majority_vote(g.votes, params.label_space), g.votes)
             for g in groups.values()]
    stats = analysis.disagreement_report(voted)
    print(f"entities: {stats.n_groups}")
    print(f"disagreeing: {stats.n_disagreeing} ({100 * stats.fraction:.2f}%)")
    if stats.n_disagreeing:
        print(f"max disagreement: {100 * stats.max_fraction:.0f}%")
        print(f"median disagreement: {100 * stats.median_fraction:.0f}%")
        print(f"min disagreement: {100 * stats.min_fraction:.0f}%")
    return 0


def _add_common_model_flags(parser):
    parser.add_argument("--setup", type=int, choices=(1, 2, 3), default=1)
    parser.add_argument("--masked-decode", action="store_true",
                        help="restrict decoding to task-valid classes per position")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entrel",
        description="Joint entity classification and relation extraction toolkit",
    )
    parser.add_argument("--config", help="JSON config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="parse a raw corpus into canonical JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--sent-col", type=int, default=0)
    p.add_argument("--tag-col", type=int, default=1)
    p.add_argument("--idx-col", type=int, default=2)
    p.add_argument("--word-col", type=int, default=5)
    p.add_argument("--no-split-slash", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="train a model on a canonical corpus")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--embeddings")
    p.add_argument("--out", required=True)
    _add_common_model_flags(p)
    p.add_argument("--output-layer", choices=("crf", "softmax"), default="crf")
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--max-epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--keep-prob", type=float, default=None)
    p.add_argument("--nk-c", type=int, default=None)
    p.add_argument("--nk-e", type=int, default=None)
    p.add_argument("--h-c", type=int, default=None)
    p.add_argument("--h-e", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--emb-dim", type=int, default=None)
    p.add_argument("--freeze-embeddings", action="store_true")
    p.add_argument("--dump-queries", help="write generated train queries as JSONL")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a canonical corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.add_argument("--omit-other", action="store_true")
    p.add_argument("--oracle", action="store_true",
                   help="substitute gold labels for predictions (pipeline check)")
    _add_common_model_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one sentence with two spans")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sentence", required=True, help="space-separated tokens")
    p.add_argument("--span1", required=True, help="start:end token indices")
    p.add_argument("--span2", required=True)
    p.add_argument("--masked-decode", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--queries", type=int, default=5)
    p.add_argument("--output-layer", choices=("crf", "softmax"), default="crf")
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect-transitions", help="transition scores above a threshold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_inspect_transitions)

    p = sub.add_parser("disagreement", help="entity-vote disagreement statistics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    _add_common_model_flags(p)
    p.set_defaults(func=cmd_disagreement)

    return parser


def _apply_config_file(parser, argv):
    """Merge JSON config values under flag defaults; explicit flags win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    path = known.config or os.environ.get(CONFIG_ENV)
    if not path:
        return argv
    with open(path, encoding="utf-8") as handle:
        values = json.load(handle)
    if not isinstance(values, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    for sub_action in parser._subparsers._group_actions:  # noqa: SLF001
        for sub_parser in sub_action.choices.values():
            defaults = {}
            for action in sub_parser._actions:  # noqa: SLF001
                key = action.dest.replace("-", "_")
                if key in values:
                    defaults[action.dest] = values[key]
            if defaults:
                sub_parser.set_defaults(**defaults)
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, QueryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
