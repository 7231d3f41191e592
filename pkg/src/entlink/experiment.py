"""End-to-end experiment orchestration and reporting.

A single flat key = value config file drives the pipeline: generate (or
load) a corpus, train entity vectors, build the prior, select candidates,
train the local and global models, evaluate everything and write the
report artifacts.  With a fixed seed and one thread, reruns are
byte-identical.

Artifacts: ``metrics.tsv`` (machine readable), ``report.txt`` (rendered
tables), ``attention.tsv`` (per-mention attended words, weight-sorted),
``breakdown.tsv`` (accuracy by gold frequency and gold prior), plus the
two trained model files.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .attention import (
    LocalParams,
    attention_weights,
    context_matrix,
    predict_local,
    support_scores,
)
from .crf import GlobalParams, predict_global
from .docs import Corpus, build_context_windows, load_corpus, resolve_gold
from .embed_train import (
    EmbedTrainConfig,
    eval_relatedness,
    load_counts_file,
    load_relatedness_queries,
    train_all_entities,
)
from .errors import ValidationError
from .metrics import breakdown_report, evaluate
from .model_io import save_model
from .priors import gold_recall, load_prior, select_candidates
from .synthetic import SyntheticSpec, generate_synthetic
from .training import TrainConfig, predict_prior_baseline, train_global, train_local
from .vectors import load_word_vectors


@dataclass
class ExperimentConfig:
    """Every pipeline knob; mirrors the CLI flags one to one."""

    seed: int = 0
    out_dir: str = "run"
    threads: int = 1
    # data: synthetic by default, or an existing directory of corpus files
    data_dir: str = ""
    kb_size: int = 200
    words_per_entity: int = 8
    vocab_size: int = 1400
    n_docs: int = 160
    mentions_per_doc: int = 6
    ambiguity: int = 4
    coherence: float = 0.9
    noise_rate: float = 0.5
    n_topics: int = 4
    dim: int = 16
    ctx_per_side: int = 8
    weak_context_rate: float = 0.25
    # entity vectors
    embed_iters: int = 400
    embed_lr: float = 0.3
    embed_gamma: float = 0.1
    alpha: float = 0.6
    # candidate selection
    s: int = 7
    prior_top: int = 4
    context_top: int = 3
    # context window and attention budgets
    k: int = 40
    local_r: int = 10
    global_r: int = 10
    hidden: int = 100
    # model training
    gamma: float = 0.01
    local_lr: float = 0.05
    local_epochs: int = 40
    global_lr: float = 5e-3
    global_epochs: int = 30
    eval_every: int = 5
    patience: int = 30
    t: int = 10
    delta: float = 0.5

    @classmethod
    def from_file(cls, path: str, overrides: dict | None = None) -> "ExperimentConfig":
        values = parse_config_file(path)
        if overrides:
            values.update(overrides)
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        cfg = cls()
        casts = {f.name: type(getattr(cfg, f.name)) for f in fields(cls)}
        parsed = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in casts:
                raise ValidationError(f"unknown config key {key!r}")
            kind = casts[name]
            try:
                parsed[name] = kind(raw) if kind is not bool else _parse_bool(raw)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"bad value for {key!r}: {raw!r}") from exc
        return replace(cfg, **parsed)


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    if str(raw).lower() in ("1", "true", "yes"):
        return True
    if str(raw).lower() in ("0", "false", "no"):
        return False
    raise ValueError(raw)


def parse_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; blank lines and '#' comments ignored."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = text.split("=", 1)
            values[key.strip()] = value.strip()
    return values


@dataclass
class PreparedData:
    store: object
    prior: object
    corpora: dict[str, Corpus]
    queries: list
    signatures: dict[int, set[int]] | None
    entity_freq: dict[int, int]
    counts: object = None
    relatedness: object | None = None


class StageFailure(ValidationError):
    pass


def _stage(name: str):
    def wrap(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageFailure:
                raise
            except Exception as exc:
                raise StageFailure(f"stage {name} failed: {exc}") from exc
        return run
    return wrap


def synthetic_spec_from(cfg: ExperimentConfig) -> SyntheticSpec:
    return SyntheticSpec(
        kb_size=cfg.kb_size, words_per_entity=cfg.words_per_entity,
        vocab_size=cfg.vocab_size, n_docs=cfg.n_docs,
        mentions_per_doc=cfg.mentions_per_doc, ambiguity=cfg.ambiguity,
        coherence=cfg.coherence, noise_rate=cfg.noise_rate, seed=cfg.seed,
        n_topics=cfg.n_topics, dim=cfg.dim, ctx_per_side=cfg.ctx_per_side,
        weak_context_rate=cfg.weak_context_rate)


def _check_disjoint_splits(corpora: dict[str, Corpus]) -> None:
    seen: dict[str, str] = {}
    for split, corpus in corpora.items():
        for doc in corpus:
            if doc.doc_id in seen:
                raise ValidationError(
                    f"doc id {doc.doc_id!r} appears in both "
                    f"{seen[doc.doc_id]!r} and {split!r} splits")
            seen[doc.doc_id] = split


@_stage("generate")
def _load_or_generate(cfg: ExperimentConfig) -> PreparedData:
    if cfg.data_dir:
        base = Path(cfg.data_dir)
        store = load_word_vectors(str(base / "word_vectors.txt"))
        counts = load_counts_file(str(base / "counts.tsv"), store.word_vocab,
                                  store.entity_vocab, alpha=cfg.alpha)
        prior = load_prior(str(base / "prior.tsv"), store.entity_vocab)
        store.sync_entities()
        corpora = {split: load_corpus(str(base / f"corpus_{split}.jsonl"),
                                      split=split)
                   for split in ("train", "validation", "test")}
        _check_disjoint_splits(corpora)
        queries = load_relatedness_queries(str(base / "queries.tsv"),
                                           store.entity_vocab)
        return PreparedData(store=store, prior=prior, corpora=corpora,
                            queries=queries, signatures=None,
                            entity_freq={}, counts=counts)
    data = generate_synthetic(synthetic_spec_from(cfg))
    return PreparedData(store=data.store, prior=data.prior,
                        corpora=data.corpora, queries=data.queries,
                        signatures=data.signatures,
                        entity_freq=dict(data.entity_freq), counts=data.counts)


@_stage("embeddings")
def _train_embeddings(cfg: ExperimentConfig, prepared: PreparedData):
    embed_cfg = EmbedTrainConfig(
        gamma=cfg.embed_gamma, learning_rate=cfg.embed_lr,
        description_iters=cfg.embed_iters, hyperlink_iters=0, seed=cfg.seed)
    train_all_entities(prepared.counts, embed_cfg, prepared.store,
                       threads=cfg.threads)
    prepared.relatedness = eval_relatedness(prepared.queries, prepared.store)


@_stage("candidates")
def _select_all_candidates(cfg: ExperimentConfig, prepared: PreparedData):
    store = prepared.store
    for corpus in prepared.corpora.values():
        resolve_gold(corpus, store.entity_vocab)
        build_context_windows(corpus, store.word_vocab, k=cfg.k)
        for doc in corpus:
            for mention in doc.mentions:
                mention.candidates = select_candidates(
                    mention.surface, mention.context or [], prepared.prior,
                    store, s=cfg.s, prior_top=cfg.prior_top,
                    context_top=cfg.context_top)


@_stage("train-local")
def _fit_local(cfg: ExperimentConfig, prepared: PreparedData) -> LocalParams:
    params = LocalParams.init(prepared.store.dim, hidden=cfg.hidden,
                              k=cfg.k, r=cfg.local_r)
    tcfg = TrainConfig(gamma=cfg.gamma, learning_rate=cfg.local_lr,
                       epochs=cfg.local_epochs, eval_every=cfg.eval_every,
                       patience=cfg.patience, seed=cfg.seed)
    train_local(params, prepared.corpora["train"], prepared.corpora["validation"],
                prepared.store, tcfg)
    return params


@_stage("train-global")
def _fit_global(cfg: ExperimentConfig, prepared: PreparedData) -> GlobalParams:
    params = GlobalParams.init(prepared.store.dim, hidden=cfg.hidden, k=cfg.k,
                               r=cfg.global_r, delta=cfg.delta, t=cfg.t)
    tcfg = TrainConfig(gamma=cfg.gamma, learning_rate=cfg.global_lr,
                       epochs=cfg.global_epochs, eval_every=cfg.eval_every,
                       patience=cfg.patience, seed=cfg.seed)
    train_global(params, prepared.corpora["train"], prepared.corpora["validation"],
                 prepared.store, tcfg)
    return params


def _collect_predictions(corpus: Corpus, predictor):
    preds, golds = [], []
    for doc in corpus:
        doc_preds = predictor(doc)
        for mention, pred in zip(doc.mentions, doc_preds):
            preds.append(pred)
            golds.append(mention.gold_id)
    return preds, golds


@_stage("evaluate")
def _evaluate_models(cfg: ExperimentConfig, prepared: PreparedData,
                     local: LocalParams, global_: GlobalParams) -> dict:
    store = prepared.store
    out: dict[str, dict[str, float]] = {}
    predictors = {
        "prior": predict_prior_baseline,
        "local": lambda d: predict_local(d, local, store),
        "global": lambda d: predict_global(d, global_, store),
    }
    for split in ("validation", "test"):
        corpus = prepared.corpora[split]
        for model, predictor in predictors.items():
            preds, golds = _collect_predictions(corpus, predictor)
            res = evaluate(preds, golds)
            out[f"{model}/{split}"] = {
                "accuracy": res.in_kb_accuracy,
                "precision": res.precision,
                "recall": res.recall,
                "f1": res.f1,
            }
    out["data/test"] = {"gold_recall": gold_recall(prepared.corpora["test"]) / 100.0}
    if prepared.relatedness is not None:
        rel = prepared.relatedness
        out["embeddings/relatedness"] = {
            "ndcg1": rel.ndcg1, "ndcg5": rel.ndcg5, "ndcg10": rel.ndcg10,
            "map": rel.map, "validation_score": rel.validation_score,
        }
    return out


def attention_dump(corpus: Corpus, params: LocalParams, store) -> list[dict]:
    """Per-mention attended words (weight-summed per distinct token, sorted).

    Rows also carry the local model's prediction so downstream analysis can
    look at correctly solved low-prior cases.
    """
    rows = []
    for doc in corpus:
        preds = predict_local(doc, params, store)
        for idx, (mention, pred) in enumerate(zip(doc.mentions, preds)):
            if not mention.candidates or not mention.context:
                continue
            cand_vecs = np.stack([store.entity_vec(c.entity)
                                  for c in mention.candidates])
            ctx_vecs = context_matrix(mention, store)
            u = support_scores(cand_vecs, ctx_vecs, params.a)
            beta = attention_weights(u, params.r)
            weights: dict[str, float] = {}
            for w, b in zip(mention.context, beta):
                if b > 0.0:
                    token = store.word_vocab.token(w)
                    weights[token] = weights.get(token, 0.0) + float(b)
            ranked = sorted(weights.items(), key=lambda kv: (-kv[1], kv[0]))
            gold_prior = 0.0
            for c in mention.candidates:
                if c.entity == mention.gold_id:
                    gold_prior = c.prior
            rows.append({
                "doc": doc.doc_id, "mention": idx, "surface": mention.surface,
                "gold": mention.gold, "gold_prior": gold_prior,
                "predicted": store.entity_vocab.token(pred) if pred is not None else "",
                "correct": int(pred == mention.gold_id),
                "words": ranked,
            })
    return rows


def f_monotonicity_probe(params: LocalParams, n_grid: int = 25) -> float:
    """Fraction of grid points where f does not decrease in the context score.

    Recorded in the report only: the combination network's shape is
    learned, not constrained, so violations are informative rather than
    fatal.
    """
    xs = np.linspace(-2.0, 2.0, n_grid)
    ys = np.linspace(np.log(1e-4), 0.0, n_grid)
    ok = 0
    total = 0
    for y in ys:
        vals = params.fnet.forward(np.column_stack([xs, np.full(n_grid, y)]))
        diffs = np.diff(vals)
        ok += int((diffs >= -1e-9).sum())
        total += diffs.shape[0]
    return ok / total if total else 1.0


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_metrics_tsv(path: str, metrics: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("section\tmetric\tvalue\n")
        for section in sorted(metrics):
            for metric in sorted(metrics[section]):
                fh.write(f"{section}\t{metric}\t{_fmt(metrics[section][metric])}\n")


def render_report(metrics: dict, extras: list[str]) -> str:
    lines = ["experiment report", "=" * 17, ""]
    width = max(len(s) for s in metrics) + 2
    for section in sorted(metrics):
        parts = [f"{m}={_fmt(v)}" for m, v in sorted(metrics[section].items())]
        lines.append(f"{section:<{width}} " + "  ".join(parts))
    lines.extend(["", *extras, ""])
    return "\n".join(lines)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Full pipeline; returns the metrics dict and writes all artifacts."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    prepared = _load_or_generate(cfg)
    _train_embeddings(cfg, prepared)
    _select_all_candidates(cfg, prepared)
    local = _fit_local(cfg, prepared)
    global_ = _fit_global(cfg, prepared)
    metrics = _evaluate_models(cfg, prepared, local, global_)

    rows = attention_dump(prepared.corpora["test"], local, prepared.store)
    with open(out / "attention.tsv", "w", encoding="utf-8") as fh:
        fh.write("doc\tmention\tsurface\tgold\tgold_prior\tpredicted\tcorrect\twords\n")
        for row in rows:
            words = " ".join(f"{t}:{_fmt(w)}" for t, w in row["words"])
            fh.write(f"{row['doc']}\t{row['mention']}\t{row['surface']}\t"
                     f"{row['gold']}\t{_fmt(row['gold_prior'])}\t{row['predicted']}\t"
                     f"{row['correct']}\t{words}\n")

    preds, golds = _collect_predictions(
        prepared.corpora["test"], lambda d: predict_global(d, global_, prepared.store))
    gold_priors, gold_freqs, in_cands = [], [], []
    for doc in prepared.corpora["test"]:
        for mention in doc.mentions:
            prior = 0.0
            contained = False
            for c in mention.candidates or []:
                if c.entity == mention.gold_id:
                    prior = c.prior
                    contained = True
            gold_priors.append(prior)
            gold_freqs.append(prepared.entity_freq.get(mention.gold_id, 0))
            in_cands.append(contained)
    freq_buckets, prior_buckets = breakdown_report(preds, golds, gold_priors,
                                                   gold_freqs, in_cands)
    with open(out / "breakdown.tsv", "w", encoding="utf-8") as fh:
        fh.write("axis\tbucket\tcount\taccuracy\n")
        for bucket in freq_buckets:
            fh.write(f"frequency\t{bucket.label}\t{bucket.count}\t{_fmt(bucket.accuracy)}\n")
        for bucket in prior_buckets:
            fh.write(f"prior\t{bucket.label}\t{bucket.count}\t{_fmt(bucket.accuracy)}\n")

    probe = f_monotonicity_probe(local)
    metrics["fprobe/local"] = {"monotone_fraction": probe}
    write_metrics_tsv(str(out / "metrics.tsv"), metrics)
    extras = [
        f"attention rows: {len(rows)}",
        f"f monotonicity probe (recorded only): {_fmt(probe)}",
    ]
    (out / "report.txt").write_text(render_report(metrics, extras),
                                    encoding="utf-8")
    save_model(str(out / "local.model"), local,
               extra={"gamma": cfg.gamma, "seed": cfg.seed})
    save_model(str(out / "global.model"), global_,
               extra={"gamma": cfg.gamma, "seed": cfg.seed})
    metrics["_meta"] = {"seconds": time.time() - started}
    return metrics


SWEEPABLE = ("t", "delta", "local_r", "global_r", "k", "noise_rate", "coherence")


def run_sweep(cfg: ExperimentConfig, param: str, values: list[float],
              seeds: list[int]) -> list[dict]:
    """Retrain at every parameter value (and seed); returns accuracy rows.

    Truncated fitting means train and test always share the setting, so
    each point is a full train/evaluate cycle on the shared data seed.
    """
    if param not in SWEEPABLE:
        raise ValidationError(f"cannot sweep {param!r}; one of {SWEEPABLE}")
    rows = []
    for value in values:
        accs = []
        for seed in seeds:
            sub = replace(cfg, seed=seed)
            caster = type(getattr(sub, param))
            sub = replace(sub, **{param: caster(value)})
            prepared = _load_or_generate(sub)
            _train_embeddings(sub, prepared)
            _select_all_candidates(sub, prepared)
            if param == "local_r":
                model = _fit_local(sub, prepared)
                from .attention import predict_local as plocal
                preds, golds = _collect_predictions(
                    prepared.corpora["test"],
                    lambda d: plocal(d, model, prepared.store))
            else:
                model = _fit_global(sub, prepared)
                preds, golds = _collect_predictions(
                    prepared.corpora["test"],
                    lambda d: predict_global(d, model, prepared.store))
            accs.append(evaluate(preds, golds).in_kb_accuracy)
        rows.append({"value": value, "accuracies": accs,
                     "mean": float(np.mean(accs))})
    return rows


def write_sweep_outputs(rows: list[dict], param: str, out_dir: str,
                        plot: bool = True) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.tsv", "w", encoding="utf-8") as fh:
        fh.write(f"{param}\tmean_accuracy\tper_seed\n")
        for row in rows:
            per_seed = ",".join(_fmt(a) for a in row["accuracies"])
            fh.write(f"{row['value']:g}\t{_fmt(row['mean'])}\t{per_seed}\n")
    if plot:
        svg = line_plot_svg([row["value"] for row in rows],
                            [row["mean"] for row in rows],
                            x_label=param, y_label="accuracy")
        (out / "sweep.svg").write_text(svg, encoding="utf-8")


def line_plot_svg(xs: list[float], ys: list[float], x_label: str,
                  y_label: str, width: int = 480, height: int = 320) -> str:
    """Minimal deterministic SVG line chart (no plotting dependency)."""
    if len(xs) != len(ys) or not xs:
        raise ValidationError("plot needs matching nonempty series")
    pad = 50
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    xr = (x1 - x0) or 1.0
    yr = (y1 - y0) or 1.0

    def sx(x):
        return pad + (x - x0) / xr * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / yr * (height - 2 * pad)

    points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    marks = "".join(
        f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="#1f6feb"/>'
        for x, y in zip(xs, ys))
    labels = "".join(
        f'<text x="{sx(x):.2f}" y="{height - pad + 18:.2f}" font-size="11" '
        f'text-anchor="middle">{x:g}</text>' for x in xs)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        f'<polyline points="{points}" fill="none" stroke="#1f6feb" stroke-width="2"/>'
        f"{marks}{labels}"
        f'<text x="{width / 2:.0f}" y="{height - 12}" font-size="12" '
        f'text-anchor="middle">{x_label}</text>'
        f'<text x="14" y="{height / 2:.0f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {height / 2:.0f})">{y_label}</text>'
        f"</svg>\n"
    )
