"""Subcommand front-end wiring the pipeline end to end.

Every subcommand takes --seed and --config (a key=value file whose entries
act as flag defaults; explicit flags win), writes its outputs atomically
(temp file + rename), and drops a run manifest with content hashes next
to the primary output. Exit codes: 0 success, 1 usage, 2 data error,
3 service error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import classifier as clf
from . import analysis, clustering, landscape, mixing, oracle, sampling, taxonomy
from .corpus import Corpus, group_stats, load_jsonl, write_jsonl
from .embedding import embed_local, embed_remote, read_embeddings, write_embeddings
from .errors import DataError, MixError, ServiceError
from .ioutil import atomic_write_json, atomic_write_text, write_run_manifest

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SERVICE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config files: key=value lines become default flags
# ---------------------------------------------------------------------------

def load_config_pairs(path: str | Path) -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{path}: line {lineno}: expected key=value, got {raw!r}")
        value = value.strip().strip('"').strip("'")
        pairs.append((key.strip().replace("_", "-"), value))
    return pairs


def apply_config(argv: list[str]) -> list[str]:
    """Expand --config entries into flags placed before the explicit ones,
    so explicit flags override the file."""
    if "--config" not in argv:
        return argv
    config_path = argv[argv.index("--config") + 1]
    pairs = load_config_pairs(config_path)
    insert_at = len(argv)
    for i, token in enumerate(argv):
        if token.startswith("-"):
            insert_at = i
            break
    injected: list[str] = []
    for key, value in pairs:
        if value.lower() in ("true", "yes", "on") and key in BOOL_FLAGS:
            injected.append(f"--{key}")
        elif value.lower() in ("false", "no", "off") and key in BOOL_FLAGS:
            continue
        else:
            injected.extend([f"--{key}", value])
    return argv[:insert_at] + injected + argv[insert_at:]


BOOL_FLAGS = {"local", "stub", "weighted"}


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--config", help="key=value file of default flags")


def corpus_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--input", required=True, help="corpus JSONL path")
    parser.add_argument("--text-field", default="text")
    parser.add_argument("--source-field", default="source")
    parser.add_argument("--id-field", default="id")


def read_corpus(args) -> Corpus:
    return load_jsonl(args.input, schema={
        "text": args.text_field, "source": args.source_field, "id": args.id_field,
    })


def chat_client(args):
    if getattr(args, "stub", False):
        return taxonomy.StubChatClient()
    if not getattr(args, "chat_endpoint", None):
        raise UsageError("need --stub or --chat-endpoint")
    return taxonomy.HttpChatClient(args.chat_endpoint, model=getattr(args, "chat_model", None))


def finish(args, command: str, inputs: list, outputs: list) -> None:
    params = {k: v for k, v in vars(args).items()
              if k not in ("func", "config") and v is not None}
    manifest_path = str(outputs[0]) + ".manifest.json"
    write_run_manifest(manifest_path, command, params, inputs, outputs)
    print(f"wrote {', '.join(str(o) for o in outputs)} (+ run manifest)")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_embed(args):
    corpus = read_corpus(args)
    if args.local or not args.endpoint:
        mat = embed_local(corpus, dim=args.dim, seed=args.seed)
    else:
        mat = embed_remote(corpus, args.endpoint, batch=args.batch, model=args.model)
    write_embeddings(args.out, mat)
    finish(args, "embed", [args.input], [args.out, args.out + ".ids"])


def cmd_cluster(args):
    mat = read_embeddings(args.emb)
    model = clustering.two_level_fit(
        mat, k1=args.k1, k2=args.k2, seed=args.seed, max_iter=args.max_iter,
        tol=args.tol, weighted=args.weighted, minibatch=args.minibatch,
        n_init=args.n_init,
    )
    clustering.save_two_level(args.out, model)
    outputs = [f"{args.out}.{level}{suffix}" for level in ("l1", "l2")
               for suffix in (".json", ".centroids.emb", ".centroids.emb.ids",
                              ".assign", ".assign.ids")]
    finish(args, "cluster", [args.emb], outputs)


def cmd_summarize(args):
    corpus = read_corpus(args)
    model = clustering.load_two_level(args.cluster)
    cache = taxonomy.PromptCache(args.cache) if args.cache else None
    summaries = taxonomy.cluster_summaries(
        corpus, model, chat_client(args), seed=args.seed,
        n_summary_docs=args.n_docs, char_budget=args.char_budget, cache=cache,
    )
    if cache is not None:
        cache.save()
    atomic_write_json(args.out, {"summaries": summaries})
    finish(args, "summarize", [args.input], [args.out])


def cmd_merge(args):
    model = clustering.load_two_level(args.cluster)
    with open(args.summaries, "r", encoding="utf-8") as fh:
        summaries = json.load(fh)["summaries"]
    cache = taxonomy.PromptCache(args.cache) if args.cache else None
    tax = taxonomy.taxonomy_from_summaries(
        model, summaries, chat_client(args), m=args.m, seed=args.seed,
        n_pool=args.n_pool, cache=cache,
    )
    if cache is not None:
        cache.save()
    atomic_write_text(args.out, json.dumps(tax.to_json(), sort_keys=True, indent=2) + "\n")
    finish(args, "merge", [args.summaries], [args.out])


def cmd_annotate(args):
    corpus = read_corpus(args)
    mat = read_embeddings(args.emb)
    tax = taxonomy.load_taxonomy(args.taxonomy)
    if args.provider == "cluster":
        if not args.cluster:
            raise UsageError("--provider cluster needs --cluster")
        model = clustering.load_two_level(args.cluster)
        provider = clf.ClusterLabelProvider(model, tax)
    elif args.provider == "file":
        if not args.gold:
            raise UsageError("--provider file needs --gold")
        provider = clf.FileLabelProvider.from_path(args.gold)
    else:
        provider = clf.ChatLabelProvider(chat_client(args), tax)
    lset = clf.annotate_sample(corpus, mat, args.n, tax, provider, seed=args.seed)
    clf.save_labeled_set(lset, args.out)
    finish(args, "annotate", [args.input, args.emb, args.taxonomy], [args.out])


def cmd_train_classifier(args):
    mat = read_embeddings(args.emb)
    lset = clf.load_labeled_set(args.labels, mat)
    model = clf.train(lset, epochs=args.epochs, lr=args.lr, seed=args.seed, l2=args.l2)
    clf.save_classifier(model, args.out)
    report = clf.evaluate(model, lset, "test")
    print(f"dev accuracy {model.metadata['dev_accuracy']}, "
          f"test accuracy {report['accuracy']}")
    finish(args, "train-classifier", [args.labels, args.emb],
           [args.out + ".json", args.out + ".weights.emb", args.out + ".weights.emb.ids"])


def cmd_classify(args):
    corpus = read_corpus(args)
    mat = read_embeddings(args.emb)
    model = clf.load_classifier(args.model)
    labeled = clf.classify_corpus(corpus, mat, model)
    write_jsonl(labeled, args.out)
    finish(args, "classify", [args.input, args.emb], [args.out])


def cmd_stats(args):
    corpus = read_corpus(args)
    stats = group_stats(corpus, args.grouping)
    atomic_write_json(args.out, stats.to_json())
    finish(args, "stats", [args.input], [args.out])


def cmd_npmi(args):
    corpus = read_corpus(args)
    table = analysis.joint_counts(corpus, weight=args.weight)
    mat = analysis.npmi(table)
    atomic_write_text(args.out, analysis.npmi_matrix_csv(mat))
    long_out = args.long_out or args.out + ".long.csv"
    atomic_write_text(long_out, analysis.npmi_long_csv(mat))
    finish(args, "npmi", [args.input], [args.out, long_out])


def cmd_report(args):
    corpus = read_corpus(args)
    report = analysis.topic_report(corpus)
    atomic_write_text(args.out, report.csv())
    finish(args, "report", [args.input], [args.out])


def _stats_for_mix(args):
    if args.stats:
        from .corpus import GroupStats
        with open(args.stats, "r", encoding="utf-8") as fh:
            return GroupStats.from_json(json.load(fh))
    if not args.input:
        raise UsageError("need --stats or --input")
    return group_stats(read_corpus(args), args.grouping)


def cmd_mix_temperature(args):
    stats = _stats_for_mix(args)
    weights = mixing.temperature_weights(stats, args.t)
    mixing.save_weights(weights, args.out)
    finish(args, "mix temperature", [args.stats or args.input], [args.out])


def cmd_mix_perfre(args):
    base = mixing.load_weights(args.base)
    if args.groups:
        groups = [g for g in args.groups.split(",") if g]
    else:
        if not args.scores:
            raise UsageError("need --groups or --scores")
        with open(args.scores, "r", encoding="utf-8") as fh:
            table = json.load(fh)
        groups = mixing.perfre_select(table["scores"], table["baseline"], args.k)
    weights = mixing.perfre_upsample(base, groups, args.factor)
    mixing.save_weights(weights, args.out)
    inputs = [args.base] + ([args.scores] if args.scores else [])
    finish(args, "mix perfre", inputs, [args.out])


def cmd_mix_regmix(args):
    trials = mixing.read_trials(args.trials)
    model = mixing.fit_surrogate(trials, kind=args.kind, seed=args.seed)
    if args.base:
        base = mixing.load_weights(args.base)
    else:
        base = mixing.MixtureWeights.uniform(model.grouping, model.names)
    weights = mixing.regmix_best(model, base, n_sim=args.n_sim, top_k=args.top_k,
                                 seed=args.seed, tau=args.tau)
    mixing.save_weights(weights, args.out)
    print(f"surrogate train RMSE {model.train_rmse:.6f} on {model.n_trials} trials")
    finish(args, "mix regmix", [args.trials], [args.out])


def cmd_mix_doremi(args):
    orc = oracle.load_oracle(args.oracle)
    if args.ref_loss:
        with open(args.ref_loss, "r", encoding="utf-8") as fh:
            ref = np.asarray(json.load(fh), dtype=np.float64)
    else:
        uniform = mixing.MixtureWeights.uniform(orc.grouping, orc.names)
        ref = orc.eval(uniform).per_group
    weights = mixing.doremi_weights(orc, ref, steps=args.steps, eta=args.eta,
                                    smooth=args.smooth, seed=args.seed)
    mixing.save_weights(weights, args.out)
    inputs = [args.oracle] + ([args.ref_loss] if args.ref_loss else [])
    finish(args, "mix doremi", inputs, [args.out])


def cmd_mix_cartesian(args):
    topic_w = mixing.load_weights(args.topic_weights)
    source_w = mixing.load_weights(args.source_weights)
    available = None
    if args.input:
        corpus = read_corpus(args)
        cells = group_stats(corpus, "topic_source").names
        from .corpus import split_cell
        available = [split_cell(name) for name in cells]
    weights = mixing.cartesian_weights(topic_w, source_w, available)
    mixing.save_weights(weights, args.out)
    inputs = [args.topic_weights, args.source_weights] + ([args.input] if args.input else [])
    finish(args, "mix cartesian", inputs, [args.out])


def cmd_trials(args):
    orc = oracle.load_oracle(args.oracle)
    if args.base:
        base = mixing.load_weights(args.base)
    else:
        base = mixing.MixtureWeights.uniform(orc.grouping, orc.names)
    draws = mixing.sample_mixtures(base, args.n, tau=args.tau, seed=args.seed)
    trials = [mixing.MixtureTrial.from_losses(w, orc.eval(w).per_group) for w in draws]
    mixing.write_trials(trials, args.out)
    inputs = [args.oracle] + ([args.base] if args.base else [])
    finish(args, "trials", inputs, [args.out])


def cmd_sample(args):
    corpus = read_corpus(args)
    weights = mixing.load_weights(args.weights)
    manifest = sampling.build_mixture(corpus, weights, args.total_tokens,
                                      seed=args.seed, policy=args.policy)
    sampling.write_manifest(manifest, args.out)
    finish(args, "sample", [args.input, args.weights], [args.out])


def cmd_select(args):
    corpus = read_corpus(args)
    weights = mixing.load_weights(args.weights)
    scorer = (sampling.FieldQualityScorer() if args.scorer == "field"
              else sampling.HashQualityScorer(seed=args.seed))
    manifest = sampling.mix_then_select(corpus, weights, args.total_tokens,
                                        scorer, seed=args.seed,
                                        min_score=args.min_score)
    sampling.write_manifest(manifest, args.out)
    finish(args, "select", [args.input, args.weights], [args.out])


def cmd_landscape(args):
    trials = mixing.read_trials(args.trials)
    model = mixing.fit_surrogate(trials, kind=args.kind, seed=args.seed)
    if args.base:
        base = mixing.load_weights(args.base)
    else:
        base = mixing.MixtureWeights.uniform(model.grouping, model.names)
    result = landscape.probe(model, base, n=args.n, seed=args.seed, tau=args.tau)
    atomic_write_json(args.out, result.to_json())
    outputs = [args.out]
    if args.slice:
        gi, gj = args.slice
        grid = landscape.slice_grid(model, base, gi, gj, steps=args.steps,
                                    mode=args.slice_mode)
        grid_out = args.grid_out or args.out + ".grid.csv"
        atomic_write_text(grid_out, grid.csv())
        outputs.append(grid_out)
    print(f"lowest-half mean {result.lowest_half_mean:.6f} over {args.n} probes")
    finish(args, "landscape", [args.trials], outputs)


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="topicmix",
                     description="corpus partitioning and data-mixture optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="embed a corpus (local featurizer or remote service)")
    corpus_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--local", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="two-level K-Means over embeddings")
    p.add_argument("--emb", required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--k1", type=int, default=10000)
    p.add_argument("--k2", type=int, default=300)
    p.add_argument("--max-iter", type=int, default=clustering.DEFAULT_MAX_ITER)
    p.add_argument("--tol", type=float, default=clustering.DEFAULT_TOL)
    p.add_argument("--n-init", type=int, default=clustering.DEFAULT_N_INIT)
    p.add_argument("--minibatch", type=int)
    p.add_argument("--weighted", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("summarize", help="summarize each level-1 cluster")
    corpus_flags(p)
    p.add_argument("--cluster", required=True, help="cluster model path prefix")
    p.add_argument("--out", required=True)
    p.add_argument("--n-docs", type=int, default=taxonomy.MAX_SUMMARY_DOCS)
    p.add_argument("--char-budget", type=int, default=taxonomy.DEFAULT_CHAR_BUDGET)
    p.add_argument("--stub", action="store_true")
    p.add_argument("--chat-endpoint")
    p.add_argument("--chat-model")
    p.add_argument("--cache")
    add_common(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("merge", help="abstract fine topics and merge into finals")
    p.add_argument("--summaries", required=True)
    p.add_argument("--cluster", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, default=12)
    p.add_argument("--n-pool", type=int, default=taxonomy.MAX_POOL_SUMMARIES)
    p.add_argument("--stub", action="store_true")
    p.add_argument("--chat-endpoint")
    p.add_argument("--chat-model")
    p.add_argument("--cache")
    add_common(p)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("annotate", help="label a document sample for training")
    corpus_flags(p)
    p.add_argument("--emb", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100000)
    p.add_argument("--provider", choices=("cluster", "chat", "file"), default="cluster")
    p.add_argument("--cluster", help="cluster model prefix (provider=cluster)")
    p.add_argument("--gold", help="gold label file (provider=file)")
    p.add_argument("--stub", action="store_true")
    p.add_argument("--chat-endpoint")
    p.add_argument("--chat-model")
    add_common(p)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("train-classifier", help="train the topic classifier")
    p.add_argument("--labels", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--out", required=True, help="model path prefix")
    p.add_argument("--epochs", type=int, default=clf.DEFAULT_EPOCHS)
    p.add_argument("--lr", type=float, default=clf.DEFAULT_LR)
    p.add_argument("--l2", type=float, default=clf.L2_PENALTY)
    add_common(p)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("classify", help="label the whole corpus with a trained model")
    corpus_flags(p)
    p.add_argument("--emb", required=True)
    p.add_argument("--model", required=True, help="classifier path prefix")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("stats", help="per-group document/token statistics")
    corpus_flags(p)
    p.add_argument("--grouping", choices=("source", "topic", "topic_source"),
                   default="source")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("npmi", help="topic x source NPMI matrix")
    corpus_flags(p)
    p.add_argument("--weight", choices=analysis.WEIGHTINGS, default="documents")
    p.add_argument("--out", required=True)
    p.add_argument("--long-out")
    add_common(p)
    p.set_defaults(func=cmd_npmi)

    p = sub.add_parser("report", help="ranked topic share report")
    corpus_flags(p)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_report)

    mix = sub.add_parser("mix", help="produce mixture weights")
    mix_sub = mix.add_subparsers(dest="mix_command", required=True)

    p = mix_sub.add_parser("temperature")
    p.add_argument("--stats")
    p.add_argument("--input")
    p.add_argument("--text-field", default="text")
    p.add_argument("--source-field", default="source")
    p.add_argument("--id-field", default="id")
    p.add_argument("--grouping", choices=("source", "topic", "topic_source"),
                   default="topic")
    p.add_argument("--t", type=float, default=0.4)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_mix_temperature)

    p = mix_sub.add_parser("perfre")
    p.add_argument("--base", required=True, help="base weights JSON")
    p.add_argument("--scores", help="JSON {baseline, scores:{group:score}}")
    p.add_argument("--groups", help="comma-separated explicit selection")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--factor", type=float, default=1.3)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_mix_perfre)

    p = mix_sub.add_parser("regmix")
    p.add_argument("--trials", required=True)
    p.add_argument("--base")
    p.add_argument("--kind", choices=mixing.SURROGATE_KINDS, default="gbdt")
    p.add_argument("--n-sim", type=int, default=100000)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_mix_regmix)

    p = mix_sub.add_parser("doremi")
    p.add_argument("--oracle", required=True)
    p.add_argument("--ref-loss", help="JSON list of reference per-group losses")
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--smooth", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_mix_doremi)

    p = mix_sub.add_parser("cartesian")
    p.add_argument("--topic-weights", required=True)
    p.add_argument("--source-weights", required=True)
    p.add_argument("--input", help="annotated corpus for the availability mask")
    p.add_argument("--text-field", default="text")
    p.add_argument("--source-field", default="source")
    p.add_argument("--id-field", default="id")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_mix_cartesian)

    p = sub.add_parser("trials", help="evaluate an oracle on sampled mixtures")
    p.add_argument("--oracle", required=True)
    p.add_argument("--base")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_trials)

    p = sub.add_parser("sample", help="materialize a token budget from weights")
    corpus_flags(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--total-tokens", type=int, required=True)
    p.add_argument("--policy", choices=sampling.POLICIES, default="epoch")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("select", help="mix then select by quality score")
    corpus_flags(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--total-tokens", type=int, required=True)
    p.add_argument("--scorer", choices=("field", "hash"), default="field")
    p.add_argument("--min-score", type=float,
                   help="exclude documents scoring below this threshold")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("landscape", help="probe a surrogate's loss landscape")
    p.add_argument("--trials", required=True)
    p.add_argument("--base")
    p.add_argument("--kind", choices=mixing.SURROGATE_KINDS, default="gbdt")
    p.add_argument("--n", type=int, default=100000)
    p.add_argument("--tau", type=float, default=landscape.PROBE_TAU)
    p.add_argument("--slice", nargs=2, metavar=("GROUP_I", "GROUP_J"))
    p.add_argument("--slice-mode", choices=landscape.SLICE_MODES,
                   default="rescale")
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--grid-out")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_landscape)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = apply_config(argv)
        args = parser.parse_args(argv)
        args.func(args)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ServiceError as exc:
        print(f"service error: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except (MixError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
