"""Command-line interface.

Subcommands cover the whole pipeline: synthetic data generation, entity
vector training and evaluation, prior construction, candidate selection,
model training, prediction, scoring, breakdowns, hyperparameter sweeps and
embedding inspection.  Exit codes: 0 success, 1 validation failure, 2 I/O
error.  ENTLINK_DATA_DIR provides the default data directory for commands
that read a generated benchmark.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .attention import LocalParams, predict_local
from .crf import GlobalParams, predict_global
from .docs import build_context_windows, load_corpus, resolve_gold
from .embed_train import (
    EmbedTrainConfig,
    eval_relatedness,
    load_counts_file,
    load_relatedness_queries,
    train_all_entities,
)
from .errors import ValidationError
from .experiment import (
    ExperimentConfig,
    parse_config_file,
    run_experiment,
    run_sweep,
    write_sweep_outputs,
)
from .metrics import breakdown_report, evaluate
from .model_io import load_model, save_model
from .priors import (
    PriorSource,
    build_prior,
    coref_person_merge,
    gold_recall,
    load_count_index,
    load_person_predicate,
    load_prior,
    load_uniform_index,
    save_prior,
    select_candidates,
)
from .synthetic import SyntheticSpec, generate_synthetic, write_synthetic
from .training import TrainConfig, train_global, train_local
from .vectors import (
    EmbeddingStore,
    load_entity_vectors,
    load_word_vectors,
    nearest_words,
    save_vectors_binary,
    save_vectors_text,
)
from .vocab import load_stop_words, load_word_frequencies

DATA_ENV = "ENTLINK_DATA_DIR"


def _data_path(args, name: str, flag_value: str | None) -> str:
    if flag_value:
        return flag_value
    base = getattr(args, "data_dir", None) or os.environ.get(DATA_ENV)
    if not base:
        raise ValidationError(
            f"missing --{name.replace('_', '-')} and no data directory "
            f"(--data-dir or ${DATA_ENV})")
    defaults = {
        "train": "corpus_train.jsonl",
        "val": "corpus_validation.jsonl",
        "corpus": "corpus_test.jsonl",
        "word_vectors": "word_vectors.txt",
        "prior": "prior.tsv",
        "counts": "counts.tsv",
        "queries": "queries.tsv",
    }
    return str(Path(base) / defaults[name])


def _load_store(args) -> EmbeddingStore:
    stop = load_stop_words(args.stopwords) if getattr(args, "stopwords", None) else None
    store = load_word_vectors(_data_path(args, "word_vectors", args.word_vectors),
                              fmt=args.vector_format, stop_words=stop)
    if getattr(args, "entities", None):
        load_entity_vectors(args.entities, store, fmt=args.vector_format)
    return store


def _prepare_corpus(args, store, path: str, split: str):
    corpus = load_corpus(path, fmt=args.corpus_format, split=split)
    resolve_gold(corpus, store.entity_vocab)
    build_context_windows(corpus, store.word_vocab, k=args.k)
    prior = load_prior(_data_path(args, "prior", args.prior), store.entity_vocab)
    store.sync_entities()
    for doc in corpus:
        for mention in doc.mentions:
            mention.candidates = select_candidates(
                mention.surface, mention.context or [], prior, store,
                s=args.s, prior_top=args.prior_top, context_top=args.context_top)
    if getattr(args, "persons", None):
        is_person = load_person_predicate(args.persons, store.entity_vocab)
        for doc in corpus:
            coref_person_merge(doc, prior, is_person, s=args.s)
    return corpus


def _add_vector_flags(p):
    p.add_argument("--word-vectors", help="word vector file")
    p.add_argument("--entities", help="entity vector file")
    p.add_argument("--vector-format", choices=("text", "binary"), default="text")
    p.add_argument("--stopwords", help="stop-word list, one token per line")


def _add_candidate_flags(p):
    p.add_argument("--prior", help="prior index file")
    p.add_argument("--s", type=int, default=7, help="candidate budget")
    p.add_argument("--prior-top", type=int, default=4)
    p.add_argument("--context-top", type=int, default=3)
    p.add_argument("--persons", help="entity<TAB>is_person file for coref merging")
    p.add_argument("--k", type=int, default=100, help="context window size")
    p.add_argument("--corpus-format", choices=("json-lines", "column-text"),
                   default="json-lines")


def _add_train_flags(p, local: bool):
    p.add_argument("--train", help="training corpus")
    p.add_argument("--val", help="validation corpus")
    p.add_argument("--out", required=True, help="model output path")
    p.add_argument("--r", type=int, default=50 if local else 25,
                   help="hard-attention budget")
    p.add_argument("--hidden", type=int, default=100)
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--lr", type=float, default=1e-3 if local else 1e-4)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--eval-every", type=int, default=5)
    p.add_argument("--patience", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    if not local:
        p.add_argument("--t", type=int, default=10, help="message-passing layers")
        p.add_argument("--delta", type=float, default=0.5, help="damping factor")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entlink",
        description="Document-level entity disambiguation pipeline.")
    parser.add_argument("--data-dir", help=f"default data directory (${DATA_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-synthetic", help="write a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--kb-size", type=int, default=200)
    p.add_argument("--words-per-entity", type=int, default=8)
    p.add_argument("--vocab-size", type=int, default=1400)
    p.add_argument("--docs", type=int, default=160)
    p.add_argument("--mentions-per-doc", type=int, default=6)
    p.add_argument("--ambiguity", type=int, default=4)
    p.add_argument("--coherence", type=float, default=0.9)
    p.add_argument("--noise-rate", type=float, default=0.5)
    p.add_argument("--n-topics", type=int, default=4)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--ctx-per-side", type=int, default=8)
    p.add_argument("--weak-context-rate", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train-embeddings", help="train entity vectors from counts")
    _add_vector_flags(p)
    p.add_argument("--counts", help="entity<TAB>word<TAB>count file")
    p.add_argument("--link-counts", help="hyperlink-window counts file")
    p.add_argument("--queries", help="relatedness queries for early stopping")
    p.add_argument("--out", required=True, help="entity vector output file")
    p.add_argument("--out-format", choices=("text", "binary"), default="text")
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--link-iterations", type=int, default=200)
    p.add_argument("--positives", type=int, default=20)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_embeddings)

    p = sub.add_parser("eval-relatedness", help="NDCG/MAP of entity vectors")
    p.add_argument("--queries")
    p.add_argument("--entities", required=True, help="entity vector file")
    p.add_argument("--vector-format", choices=("text", "binary"), default="text")
    p.set_defaults(func=cmd_eval_relatedness)

    p = sub.add_parser("build-prior", help="merge raw indexes into a prior")
    p.add_argument("--count-index", action="append", default=[],
                   help="mention<TAB>entity<TAB>count file (repeatable)")
    p.add_argument("--uniform-index", action="append", default=[],
                   help="mention<TAB>entity file (repeatable)")
    p.add_argument("--weights", help="comma-separated per-source weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_prior)

    p = sub.add_parser("select-candidates", help="emit candidate sets for a corpus")
    _add_vector_flags(p)
    _add_candidate_flags(p)
    p.add_argument("--corpus", help="corpus file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select_candidates)

    p = sub.add_parser("train-local", help="train the local attention model")
    _add_vector_flags(p)
    _add_candidate_flags(p)
    _add_train_flags(p, local=True)
    p.set_defaults(func=cmd_train_local)

    p = sub.add_parser("train-global", help="train the joint message-passing model")
    _add_vector_flags(p)
    _add_candidate_flags(p)
    _add_train_flags(p, local=False)
    p.set_defaults(func=cmd_train_global)

    p = sub.add_parser("predict", help="annotate a corpus with a trained model")
    _add_vector_flags(p)
    _add_candidate_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", help="corpus file")
    p.add_argument("--out", required=True, help="predictions output file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", help="corpus file")
    p.add_argument("--corpus-format", choices=("json-lines", "column-text"),
                   default="json-lines")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("breakdown", help="accuracy by gold frequency and prior")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", help="corpus file")
    p.add_argument("--corpus-format", choices=("json-lines", "column-text"),
                   default="json-lines")
    p.add_argument("--prior", help="prior index file")
    p.add_argument("--freq", help="entity<TAB>count frequency table")
    p.set_defaults(func=cmd_breakdown)

    p = sub.add_parser("sweep", help="retrain and evaluate across one parameter")
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("run-experiment", help="run the full pipeline from a config")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", help="output directory (overrides config)")
    p.set_defaults(func=cmd_run_experiment)

    p = sub.add_parser("inspect-neighbors", help="closest words to an entity")
    p.add_argument("--entities", required=True, help="entity vector file")
    p.add_argument("--word-vectors")
    p.add_argument("--vector-format", choices=("text", "binary"), default="text")
    p.add_argument("--entity", required=True, help="entity name")
    p.add_argument("--freq", help="word<TAB>count frequency table")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--min-freq", type=int, default=0)
    p.set_defaults(func=cmd_inspect_neighbors)

    # maintenance command used by CI; intentionally undocumented
    p = sub.add_parser("grad-check")
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    return parser


def cmd_generate(args) -> int:
    spec = SyntheticSpec(
        kb_size=args.kb_size, words_per_entity=args.words_per_entity,
        vocab_size=args.vocab_size, n_docs=args.docs,
        mentions_per_doc=args.mentions_per_doc, ambiguity=args.ambiguity,
        coherence=args.coherence, noise_rate=args.noise_rate, seed=args.seed,
        n_topics=args.n_topics, dim=args.dim, ctx_per_side=args.ctx_per_side,
        weak_context_rate=args.weak_context_rate)
    data = generate_synthetic(spec)
    paths = write_synthetic(data, args.out)
    # containment of the gold entity in the top-7 prior mass, before any
    # model-dependent candidate selection
    total = hits = 0
    for corpus in data.corpora.values():
        for doc in corpus:
            for mention in doc.mentions:
                total += 1
                top = [e for e, _ in data.prior.lookup(mention.surface)[:7]]
                hits += int(mention.gold_id in top)
    print(f"wrote {len(paths)} files to {args.out}")
    print(f"docs={spec.n_docs} mentions/doc={spec.mentions_per_doc} "
          f"gold_in_prior_top7={100.0 * hits / max(total, 1):.1f}%")
    return 0


def cmd_train_embeddings(args) -> int:
    store = load_word_vectors(
        _data_path(args, "word_vectors", args.word_vectors),
        fmt=args.vector_format,
        stop_words=load_stop_words(args.stopwords) if args.stopwords else None)
    counts = load_counts_file(_data_path(args, "counts", args.counts),
                              store.word_vocab, store.entity_vocab,
                              alpha=args.alpha)
    if args.link_counts:
        link = load_counts_file(args.link_counts, store.word_vocab,
                                store.entity_vocab, alpha=args.alpha,
                                source="hyperlink")
        counts.hyperlink = link.hyperlink
        counts.word_freq = counts.word_freq + link.word_freq
    store.sync_entities()
    queries = None
    if args.queries:
        queries = load_relatedness_queries(args.queries, store.entity_vocab)
    cfg = EmbedTrainConfig(
        gamma=args.gamma, positives_per_iter=args.positives,
        negatives_per_positive=args.negatives, learning_rate=args.lr,
        description_iters=args.iterations, hyperlink_iters=args.link_iterations,
        window=args.window, seed=args.seed, eval_every=args.eval_every,
        patience=args.patience)
    skipped = train_all_entities(counts, cfg, store, validation=queries,
                                 threads=args.threads,
                                 log=lambda m: print(m, file=sys.stderr))
    names = [store.entity_vocab.token(i) for i in range(store.n_entities)]
    writer = save_vectors_text if args.out_format == "text" else save_vectors_binary
    writer(args.out, names, store.entity_matrix())
    print(f"trained {store.n_entities - len(skipped)} entities "
          f"({len(skipped)} untrainable) -> {args.out}")
    if queries:
        res = eval_relatedness(queries, store)
        print(f"relatedness: ndcg1={res.ndcg1:.3f} ndcg5={res.ndcg5:.3f} "
              f"ndcg10={res.ndcg10:.3f} map={res.map:.3f} "
              f"sum={res.validation_score:.3f}")
    return 0


def _entity_store_from_file(path: str, fmt: str) -> EmbeddingStore:
    # peek the dimension, then load entities into a word-less store
    from .vectors import _parse_binary_vectors, _parse_text_vectors

    names, rows = (_parse_text_vectors(path) if fmt == "text"
                   else _parse_binary_vectors(path))
    store = EmbeddingStore(rows.shape[1])
    for name, vec in zip(names, rows):
        store.add_entity(name, vec)
    return store


def cmd_eval_relatedness(args) -> int:
    store = _entity_store_from_file(args.entities, args.vector_format)
    queries = load_relatedness_queries(
        _data_path(args, "queries", args.queries), store.entity_vocab)
    store.sync_entities()
    res = eval_relatedness(queries, store)
    print(f"queries={res.n_queries} excluded={res.excluded}")
    print(f"NDCG@1={res.ndcg1:.4f}")
    print(f"NDCG@5={res.ndcg5:.4f}")
    print(f"NDCG@10={res.ndcg10:.4f}")
    print(f"MAP={res.map:.4f}")
    print(f"validation_score={res.validation_score:.4f}")
    return 0


def cmd_build_prior(args) -> int:
    if not args.count_index and not args.uniform_index:
        raise ValidationError("need at least one --count-index or --uniform-index")
    from .vocab import Vocab

    entities = Vocab()
    sources = []
    for path in args.count_index:
        sources.append(PriorSource("count", load_count_index(path, entities)))
    for path in args.uniform_index:
        sources.append(PriorSource("uniform", load_uniform_index(path, entities)))
    if args.weights:
        weights = [float(w) for w in args.weights.split(",")]
        if len(weights) != len(sources):
            raise ValidationError("one --weights entry per source required")
        for source, w in zip(sources, weights):
            source.weight = w
    prior = build_prior(sources)
    save_prior(args.out, prior, entities)
    print(f"wrote prior for {len(prior)} mentions -> {args.out}")
    return 0


def cmd_select_candidates(args) -> int:
    store = _load_store(args)
    corpus = _prepare_corpus(args, store,
                             _data_path(args, "corpus", args.corpus), "input")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("doc\tmention\tentity\tprior\treason\n")
        for doc in corpus:
            for idx, mention in enumerate(doc.mentions):
                for cand in mention.candidates or []:
                    fh.write(f"{doc.doc_id}\t{idx}\t"
                             f"{store.entity_vocab.token(cand.entity)}\t"
                             f"{cand.prior:.6f}\t{cand.reason}\n")
    recall = gold_recall(corpus)
    print(f"selected candidates for {corpus.n_mentions} mentions "
          f"(gold recall {recall:.1f}%) -> {args.out}")
    return 0


def _run_training(args, local: bool) -> int:
    store = _load_store(args)
    train = _prepare_corpus(args, store, _data_path(args, "train", args.train),
                            "train")
    val = _prepare_corpus(args, store, _data_path(args, "val", args.val),
                          "validation")
    tcfg = TrainConfig(gamma=args.gamma, learning_rate=args.lr,
                       epochs=args.epochs, eval_every=args.eval_every,
                       patience=args.patience, seed=args.seed)
    if local:
        params = LocalParams.init(store.dim, hidden=args.hidden, k=args.k,
                                  r=args.r)
        history = train_local(params, train, val, store, tcfg)
    else:
        params = GlobalParams.init(store.dim, hidden=args.hidden, k=args.k,
                                   r=args.r, delta=args.delta, t=args.t)
        history = train_global(params, train, val, store, tcfg)
    save_model(args.out, params, extra={"gamma": args.gamma, "seed": args.seed,
                                        "epochs_run": history.epochs_run})
    print(f"trained {'local' if local else 'global'} model: "
          f"epochs={history.epochs_run} "
          f"best_val_accuracy={history.best_val_accuracy:.4f} -> {args.out}")
    return 0


def cmd_train_local(args) -> int:
    return _run_training(args, local=True)


def cmd_train_global(args) -> int:
    return _run_training(args, local=False)


def cmd_predict(args) -> int:
    params = load_model(args.model)
    store = _load_store(args)
    corpus = _prepare_corpus(args, store,
                             _data_path(args, "corpus", args.corpus), "input")
    is_global = isinstance(params, GlobalParams)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("doc\tmention\tentity\n")
        for doc in corpus:
            preds = (predict_global(doc, params, store) if is_global
                     else predict_local(doc, params, store))
            for idx, pred in enumerate(preds):
                name = store.entity_vocab.token(pred) if pred is not None else ""
                fh.write(f"{doc.doc_id}\t{idx}\t{name}\n")
    print(f"annotated {corpus.n_mentions} mentions -> {args.out}")
    return 0


def _read_predictions(path: str) -> dict[tuple[str, int], str]:
    preds: dict[tuple[str, int], str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("doc\t"):
            raise ValidationError(f"{path}: missing predictions header")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 columns")
            preds[(parts[0], int(parts[1]))] = parts[2]
    return preds


def _aligned_eval_inputs(args, preds_by_key):
    corpus = load_corpus(_data_path(args, "corpus", args.corpus),
                         fmt=args.corpus_format, split="test")
    preds: list[int | None] = []
    golds: list[int | None] = []
    names: list[tuple] = []
    name_ids: dict[str, int] = {}

    def intern(name: str) -> int:
        return name_ids.setdefault(name, len(name_ids))

    for doc in corpus:
        for idx, mention in enumerate(doc.mentions):
            raw = preds_by_key.get((doc.doc_id, idx), "")
            preds.append(intern(raw) if raw else None)
            golds.append(intern(mention.gold) if mention.gold is not None else None)
            names.append((doc.doc_id, idx, mention))
    return corpus, preds, golds, names


def cmd_evaluate(args) -> int:
    preds_by_key = _read_predictions(args.predictions)
    _, preds, golds, _ = _aligned_eval_inputs(args, preds_by_key)
    res = evaluate(preds, golds)
    print(f"gold_mentions={res.gold} predicted={res.predicted} correct={res.correct}")
    print(f"in_kb_accuracy={res.in_kb_accuracy:.4f}")
    print(f"precision={res.precision:.4f}")
    print(f"recall={res.recall:.4f}")
    print(f"micro_f1={res.f1:.4f}")
    return 0


def cmd_breakdown(args) -> int:
    preds_by_key = _read_predictions(args.predictions)
    _, preds, golds, rows = _aligned_eval_inputs(args, preds_by_key)
    from .vocab import Vocab

    entities = Vocab()
    prior = load_prior(_data_path(args, "prior", args.prior), entities)
    freq: dict[str, int] = {}
    if args.freq:
        with open(args.freq, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line:
                    name, count = line.split("\t")
                    freq[name] = int(count)
    gold_priors, gold_freqs, in_cands = [], [], []
    for (_, _, mention) in rows:
        p = prior.prior(mention.surface, entities.id(mention.gold)) \
            if mention.gold is not None and entities.id(mention.gold) is not None \
            else 0.0
        gold_priors.append(p)
        gold_freqs.append(freq.get(mention.gold or "", 0))
        in_cands.append(p > 0.0)
    freq_buckets, prior_buckets = breakdown_report(preds, golds, gold_priors,
                                                   gold_freqs, in_cands)
    print("axis\tbucket\tcount\taccuracy")
    for b in freq_buckets:
        print(f"frequency\t{b.label}\t{b.count}\t{b.accuracy:.4f}")
    for b in prior_buckets:
        print(f"prior\t{b.label}\t{b.count}\t{b.accuracy:.4f}")
    return 0


def _experiment_config(args) -> ExperimentConfig:
    values = parse_config_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    cfg = ExperimentConfig.from_dict(values)
    if getattr(args, "out", None):
        from dataclasses import replace

        cfg = replace(cfg, out_dir=args.out)
    return cfg


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    values = [float(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = run_sweep(cfg, args.param.replace("-", "_").lower(), values, seeds)
    write_sweep_outputs(rows, args.param, args.out, plot=not args.no_plot)
    for row in rows:
        print(f"{args.param}={row['value']:g} mean_accuracy={row['mean']:.4f}")
    return 0


def cmd_run_experiment(args) -> int:
    cfg = _experiment_config(args)
    metrics = run_experiment(cfg)
    for section in sorted(k for k in metrics if not k.startswith("_")):
        parts = " ".join(f"{m}={v:.4f}" for m, v in sorted(metrics[section].items()))
        print(f"{section}: {parts}")
    print(f"artifacts in {cfg.out_dir}")
    return 0


def cmd_inspect_neighbors(args) -> int:
    store = _entity_store_from_file(args.entities, args.vector_format)
    words = load_word_vectors(
        _data_path(args, "word_vectors", args.word_vectors),
        fmt=args.vector_format)
    # rebuild a combined store: words plus the entity table
    combined = EmbeddingStore(words.dim, word_vocab=words.word_vocab)
    combined._words = words.word_matrix()
    if store.dim != words.dim:
        raise ValidationError("entity and word dimensions differ")
    for i in range(store.n_entities):
        combined.add_entity(store.entity_vocab.token(i), store.entity_vec(i))
    if args.freq:
        load_word_frequencies(args.freq, combined.word_vocab)
    idx = combined.entity_vocab.id(args.entity)
    if idx is None:
        raise ValidationError(f"unknown entity {args.entity!r}")
    for word, sim in nearest_words(combined, idx, k=args.k,
                                   min_freq=args.min_freq):
        print(f"{combined.word_vocab.token(word)}\t{sim:.4f}")
    return 0


def cmd_grad_check(args) -> int:
    from . import autodiff as ad
    from .attention import FNet, MentionInstance, floored_log_prior, local_loss_closure
    from .crf import global_loss_closure

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.instances):
        def make_instances(n, s, k_ctx):
            out = []
            for _ in range(n):
                vecs = rng.normal(size=(s, 8))
                vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
                p = rng.dirichlet(np.ones(s))
                out.append(MentionInstance(
                    cand_vecs=vecs, ctx_vecs=rng.normal(size=(k_ctx, 8)),
                    log_priors=np.array([floored_log_prior(x) for x in p]),
                    gold_index=int(rng.integers(s)), entities=list(range(s))))
            return out

        fnet = FNet.random(hidden=20, rng=rng)
        params = {"A": 1.0 + 0.1 * rng.normal(size=8),
                  "B": 1.0 + 0.1 * rng.normal(size=8),
                  **fnet.param_dict()}
        f = local_loss_closure(make_instances(2, 3, 10), fnet, gamma=0.05, r=5)
        rep = ad.grad_check(f, params, coords_per_param=10, rng=rng)
        worst = max(worst, rep.overall_max())
        params["C"] = 1.0 + 0.1 * rng.normal(size=8)
        g = global_loss_closure(make_instances(3, 3, 6), fnet, gamma=0.05,
                                r=3, delta=0.5, t=3)
        rep = ad.grad_check(g, params, coords_per_param=10, rng=rng)
        worst = max(worst, rep.overall_max())
    print(f"max relative error over {args.instances} instances: {worst:.3e}")
    if worst >= args.tolerance:
        print(f"FAIL: exceeds tolerance {args.tolerance:g}")
        return 1
    print(f"OK: within tolerance {args.tolerance:g}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
