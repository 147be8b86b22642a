"""Command-line front end binding the pipelines together.

Configuration resolves in four layers, later layers winning:
defaults <- JSON config file (./layman_eval.json or --config) <- environment
variables <- command-line flags. Primary data goes to --output (or stdout);
summaries print to stdout when the data went to a file, otherwise to stderr;
progress goes to stderr and --quiet silences it. Exit codes: 0 success,
1 validation/usage error, 2 provider or runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import random
import sys

from . import datapipe, readability, semeval, statkit
from .embedkit import EmbeddingCache, EmbeddingProviderSpec
from .errors import ProviderError
from .jsonio import dumps_record, load_jsonl, write_jsonl

ENV_EMBED_URL = "LAYMAN_EVAL_EMBED_URL"
ENV_CHAT_URL = "LAYMAN_EVAL_CHAT_URL"
ENV_API_KEY = "LAYMAN_EVAL_API_KEY"
ENV_CACHE = "LAYMAN_EVAL_CACHE"

CONFIG_FILENAME = "layman_eval.json"

DEFAULTS = {
    "provider": "local",
    "dim": 256,
    "max_batch": 50,
    "embed_endpoint": None,
    "embed_model": "default",
    "instruction_prefix": "",
    "chat": "mock",
    "chat_endpoint": None,
    "chat_model": "default",
    "api_key": None,
    "glossary": None,
    "fixes": None,
    "theta": 0.8,
    "batch_size": 50,
    "max_iterations": 3,
    "cache": None,
    "parallelism": 1,
    "seed": 0,
}

_ENV_MAP = {
    ENV_EMBED_URL: "embed_endpoint",
    ENV_CHAT_URL: "chat_endpoint",
    ENV_API_KEY: "api_key",
    ENV_CACHE: "cache",
}


class _Session:
    """Resolved configuration plus output plumbing for one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.quiet = bool(getattr(args, "quiet", False))
        self.config = dict(DEFAULTS)

        config_path = getattr(args, "config", None) or (
            CONFIG_FILENAME if os.path.exists(CONFIG_FILENAME) else None
        )
        if config_path:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_config = json.load(fh)
            unknown = set(file_config) - set(DEFAULTS)
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            self.config.update(file_config)

        for env_name, key in _ENV_MAP.items():
            if env_name in os.environ:
                self.config[key] = os.environ[env_name]

        for key in DEFAULTS:
            value = getattr(args, key, None)
            if value is not None:
                self.config[key] = value

    def progress(self, message: str) -> None:
        if not self.quiet:
            print(message, file=sys.stderr)

    def embed_provider(self):
        kind = {"local": "deterministic-local", "remote": "remote-http"}.get(
            self.config["provider"]
        )
        if kind is None:
            raise ValueError(f"unknown embedding provider: {self.config['provider']!r}")
        return EmbeddingProviderSpec(
            kind=kind,
            dim=int(self.config["dim"]),
            max_batch=int(self.config["max_batch"]),
            endpoint=self.config["embed_endpoint"],
            model=self.config["embed_model"],
            api_key=self.config["api_key"],
            instruction_prefix=self.config["instruction_prefix"],
        ).build()

    def chat_provider(self):
        kind = {"mock": "mock-glossary", "remote": "remote-http"}.get(self.config["chat"])
        if kind is None:
            raise ValueError(f"unknown chat provider: {self.config['chat']!r}")
        return datapipe.ChatProviderSpec(
            kind=kind,
            endpoint=self.config["chat_endpoint"],
            model=self.config["chat_model"],
            api_key=self.config["api_key"],
            glossary_path=self.config["glossary"],
            fixes_path=self.config["fixes"],
        ).build()

    def cache(self, override: str | None = None) -> EmbeddingCache | None:
        path = override or self.config["cache"]
        return EmbeddingCache(path) if path else None

    def emit_records(self, records, output: str | None) -> None:
        if output:
            write_jsonl(records, output)
        else:
            for record in records:
                print(dumps_record(record))

    def emit_summary(self, summary: dict, data_went_to_file: bool) -> None:
        rendered = json.dumps(summary, ensure_ascii=False, indent=2, sort_keys=True)
        print(rendered, file=sys.stdout if data_went_to_file else sys.stderr)


def _read_scores(path: str, value_field: str = "score") -> dict[str, float]:
    out = {}
    for record in load_jsonl(path):
        out[str(record["id"])] = float(record[value_field])
    return out


def _join_on_id(a: dict, b: dict, what: str) -> list[str]:
    only_a = sorted(set(a) - set(b))
    only_b = sorted(set(b) - set(a))
    if only_a or only_b:
        raise ValueError(f"id mismatch in {what}: only left {only_a}; only right {only_b}")
    return list(a)


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_dedup(session: _Session) -> int:
    args = session.args
    records = load_jsonl(args.input)
    sentences = [
        datapipe.SentenceRecord(
            id=str(r["id"]), text=r["text"],
            report_id=str(r.get("report_id")) if r.get("report_id") is not None else None,
            position=int(r.get("position", 0)),
        )
        for r in records
    ]
    result = datapipe.deduplicate(
        sentences,
        threshold=float(session.config["theta"]),
        provider=session.embed_provider(),
        cache=session.cache(),
    )
    kept_records = [
        {"id": s.id, "text": s.text, "report_id": s.report_id, "position": s.position}
        for s in result.kept
    ]
    session.emit_records(kept_records, args.output)
    session.emit_summary(
        {
            "kept": len(result.kept),
            "dropped": result.dropped,
            "degenerate": result.degenerate,
            "comparisons": result.comparisons,
        },
        data_went_to_file=bool(args.output),
    )
    return 0


def _cmd_translate(session: _Session) -> int:
    args = session.args
    records = load_jsonl(args.input)
    texts = [r["text"] for r in records]
    translations = datapipe.translate_batch(
        texts, session.chat_provider(), batch_size=int(session.config["batch_size"])
    )
    out = [
        {"id": str(r["id"]), "professional": r["text"], "layman": t}
        for r, t in zip(records, translations)
    ]
    session.emit_records(out, args.output)
    return 0


def _cmd_refine(session: _Session) -> int:
    args = session.args
    records = load_jsonl(args.input)
    chat = session.chat_provider()
    provider = session.embed_provider()
    cache = session.cache()
    out = []
    for i, record in enumerate(records):
        pair = datapipe.refine(
            record["text"],
            threshold=float(session.config["theta"]),
            max_iterations=int(session.config["max_iterations"]),
            chat_provider=chat,
            embed_provider=provider,
            cache=cache,
            pair_id=str(record["id"]),
            retranslate=bool(getattr(args, "retranslate", False)),
        )
        out.append(pair.as_dict())
        session.progress(f"refined {i + 1}/{len(records)}")
    session.emit_records(out, args.output)
    return 0


def _cmd_build_dataset(session: _Session) -> int:
    args = session.args
    stats = datapipe.build_dataset(
        args.input,
        args.output,
        level=args.level,
        chat_provider=session.chat_provider(),
        embed_provider=session.embed_provider(),
        cache=session.cache(),
        threshold=float(session.config["theta"]),
        max_iterations=int(session.config["max_iterations"]),
        batch_size=int(session.config["batch_size"]),
        checkpoint_path=args.checkpoint,
        resume=args.resume,
        retranslate=args.retranslate,
        parallelism=int(session.config["parallelism"]),
        progress=None if session.quiet else (
            lambda done, total: print(f"built {done}/{total}", file=sys.stderr)
        ),
    )
    session.emit_summary(stats.as_dict(), data_went_to_file=True)
    return 0


def _cmd_evaluate(session: _Session) -> int:
    args = session.args
    provider = session.embed_provider()
    cache = session.cache()
    substitution = not args.no_substitute
    index = None
    if substitution:
        if not args.dataset:
            raise ValueError("--dataset is required unless --no-substitute is given")
        vectors_path = args.vectors or args.dataset + ".vec"
        index = semeval.load_index(args.dataset, provider, EmbeddingCache(vectors_path))
    config = semeval.EvalConfig(
        provider=provider,
        cache=cache,
        theta=float(session.config["theta"]),
        substitution=substitution,
        substitution_floor=args.floor,
        best_match=args.best_match,
    )
    aggregate, reports, similarities = semeval.evaluate_corpus(
        args.candidates, args.references, index, config
    )

    metrics = [m.strip() for m in args.metrics.split(",")] if args.metrics else None
    if metrics:
        keep = set()
        for metric in metrics:
            if metric == "bleu":
                keep.update(["bleu1", "bleu2", "bleu3", "bleu4"])
            elif metric == "rouge":
                keep.update(["rouge1", "rouge2", "rougeL"])
            elif metric == "meteor":
                keep.add("meteor")
            elif metric == "semantic":
                keep.update(["semantic_precision", "semantic_recall", "semantic_f1"])
            else:
                raise ValueError(f"unknown metric group: {metric!r}")
        aggregate = {k: v for k, v in aggregate.items() if k in keep or k == "reports"}

    if args.per_report:
        write_jsonl(
            [{"id": rid, **report.as_dict()} for rid, report in reports],
            args.per_report,
        )
    if args.similarities:
        write_jsonl([{"score": s} for s in similarities], args.similarities)

    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(aggregate, fh, ensure_ascii=False, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        print(json.dumps(aggregate, ensure_ascii=False, indent=2, sort_keys=True))
    return 0


def _cmd_readability(session: _Session) -> int:
    args = session.args
    records = load_jsonl(args.input)
    rows = []
    totals: dict[str, float] = {}
    for record in records:
        stats = readability.text_stats(record["text"])
        report = readability.readability_suite(stats)
        row = report.as_dict()
        if args.round:
            row = {k: round(v) for k, v in row.items()}
        for key, value in row.items():
            totals[key] = totals.get(key, 0.0) + value
        rows.append({"id": str(record["id"]), **row})
    session.emit_records(rows, args.output)
    if rows:
        session.emit_summary(
            {"mean_" + k: v / len(rows) for k, v in totals.items()} | {"texts": len(rows)},
            data_went_to_file=bool(args.output),
        )
    return 0


def _cmd_correlate(session: _Session) -> int:
    args = session.args
    x = _read_scores(args.scores)
    y = _read_scores(args.human)
    ids = _join_on_id(x, y, "correlate inputs")
    series = statkit.PairedSeries.from_lists(ids, [x[i] for i in ids], [y[i] for i in ids])
    summary = {
        "pearson": statkit.pearson(series),
        "spearman": statkit.spearman(series),
        "n": len(ids),
    }
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_kappa(session: _Session) -> int:
    args = session.args
    a_records = {str(r["id"]): r for r in load_jsonl(args.a)}
    b_records = {str(r["id"]): r for r in load_jsonl(args.b)}
    ids = _join_on_id(a_records, b_records, "kappa inputs")

    def labels(records: dict) -> list:
        values = [records[i] for i in ids]
        if all("label" in v for v in values):
            return [v["label"] for v in values]
        scores = [float(v["score"]) for v in values]
        return statkit.discretize(scores, bins=args.bins)

    summary = {
        "kappa": statkit.cohens_kappa(labels(a_records), labels(b_records)),
        "n": len(ids),
        "bins": args.bins,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_hist(session: _Session) -> int:
    args = session.args
    values = [float(r["score"]) for r in load_jsonl(args.input)]
    hist = statkit.similarity_histogram(
        values, bins=args.bins, value_range=(args.min, args.max)
    )
    summary = {
        "bin_edges": list(hist.bin_edges),
        "counts": list(hist.counts),
        "high_threshold": hist.high_threshold,
        "high_proportion": hist.high_proportion,
        "total": hist.total,
    }
    if not session.quiet:
        peak = max(hist.counts) or 1
        for left, right, count in zip(hist.bin_edges, hist.bin_edges[1:], hist.counts):
            bar = "#" * round(40 * count / peak)
            print(f"[{left:6.3f}, {right:6.3f}) {count:6d} {bar}", file=sys.stderr)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("bin_left,bin_right,count\n")
            for left, right, count in zip(hist.bin_edges, hist.bin_edges[1:], hist.counts):
                fh.write(f"{left},{right},{count}\n")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_diversity(session: _Session) -> int:
    args = session.args
    records = load_jsonl(args.input)
    mean, variance = statkit.diversity(
        [r["text"] for r in records],
        provider=session.embed_provider(),
        cache=session.cache(),
    )
    summary = {
        "mean": mean,
        "variance": variance,
        "reports": len(records),
        "pairs": len(records) * (len(records) - 1) // 2,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_sample_export(session: _Session) -> int:
    args = session.args
    records = load_jsonl(args.input)
    n = min(args.n, len(records))
    rng = random.Random(int(session.config["seed"]))
    sample = rng.sample(records, n)
    session.emit_records(sample, args.output)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser, *, output: bool = True) -> None:
    parser.add_argument("--config", help="JSON config file (default ./layman_eval.json)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    parser.add_argument("--cache", help="embedding cache file path")
    if output:
        parser.add_argument("--output", help="write primary output here instead of stdout")


def _add_embed_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--provider", choices=["local", "remote"], help="embedding backend")
    parser.add_argument("--dim", type=int, help="embedding dimension")
    parser.add_argument("--max-batch", dest="max_batch", type=int, help="embedding batch limit")
    parser.add_argument("--embed-endpoint", dest="embed_endpoint", help="remote embeddings URL")
    parser.add_argument("--embed-model", dest="embed_model", help="remote embedding model name")


def _add_chat_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--chat", choices=["mock", "remote"], help="chat backend")
    parser.add_argument("--chat-endpoint", dest="chat_endpoint", help="remote chat URL")
    parser.add_argument("--chat-model", dest="chat_model", help="remote chat model name")
    parser.add_argument("--glossary", help="glossary JSON for the mock chat provider")
    parser.add_argument("--fixes", help="fix-table JSON for the mock chat provider")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layman-eval",
        description="Layman-style dataset building and report evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dedup", help="greedy similarity dedup of a sentence file")
    p.add_argument("--input", required=True)
    p.add_argument("--threshold", dest="theta", type=float)
    _add_embed_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_dedup)

    p = sub.add_parser("translate", help="batch-translate texts to plain language")
    p.add_argument("--input", required=True)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    _add_chat_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_translate)

    p = sub.add_parser("refine", help="translate-and-verify each input text")
    p.add_argument("--input", required=True)
    p.add_argument("--threshold", dest="theta", type=float)
    p.add_argument("--max-iters", dest="max_iterations", type=int)
    p.add_argument("--retranslate", action="store_true",
                   help="re-translate on every round instead of check-and-modify")
    _add_chat_flags(p)
    _add_embed_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("build-dataset", help="run the full dataset pipeline")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--level", choices=["sentence", "report"], default="sentence")
    p.add_argument("--threshold", dest="theta", type=float)
    p.add_argument("--max-iters", dest="max_iterations", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--resume", action="store_true", help="resume from checkpoint")
    p.add_argument("--checkpoint", help="checkpoint path (default <output>.checkpoint.json)")
    p.add_argument("--retranslate", action="store_true")
    _add_chat_flags(p)
    _add_embed_flags(p)
    _add_common(p, output=False)
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("evaluate", help="evaluate candidate reports against references")
    p.add_argument("--candidates", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--dataset", help="sentence-level dataset used for substitution")
    p.add_argument("--vectors", help="sidecar vector cache for the dataset")
    p.add_argument("--threshold", dest="theta", type=float)
    p.add_argument("--no-substitute", action="store_true")
    p.add_argument("--floor", type=float, help="minimum similarity for substitution")
    p.add_argument("--best-match", dest="best_match", action="store_true")
    p.add_argument("--metrics", help="comma list: bleu,rouge,meteor,semantic")
    p.add_argument("--per-report", dest="per_report", help="write per-report metrics here")
    p.add_argument("--similarities", help="write matched-pair similarities here")
    _add_embed_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("readability", help="score texts with the readability suite")
    p.add_argument("--input", required=True)
    p.add_argument("--round", action="store_true", help="display integer scores")
    _add_common(p)
    p.set_defaults(func=_cmd_readability)

    p = sub.add_parser("correlate", help="Pearson/Spearman of metric vs human scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--human", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser("kappa", help="Cohen's kappa between two annotators")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--bins", type=int, default=10,
                   help="bins for discretizing continuous scores")
    _add_common(p, output=False)
    p.set_defaults(func=_cmd_kappa)

    p = sub.add_parser("hist", help="similarity histogram with the >=0.8 share")
    p.add_argument("--input", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--min", type=float, default=0.0)
    p.add_argument("--max", type=float, default=1.0)
    p.add_argument("--csv", help="write bin edges/counts as CSV here")
    _add_common(p)
    p.set_defaults(func=_cmd_hist)

    p = sub.add_parser("diversity", help="mean/variance of pairwise report cosines")
    p.add_argument("--input", required=True)
    _add_embed_flags(p)
    _add_common(p, output=False)
    p.set_defaults(func=_cmd_diversity)

    p = sub.add_parser("sample-export", help="seeded random sample for external review")
    p.add_argument("--input", required=True)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int)
    _add_common(p)
    p.set_defaults(func=_cmd_sample_export)

    return parser


def run(argv: list[str]) -> int:
    """Execute one CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; --help exits 0, errors exit 1.
        return 0 if exc.code == 0 else 1
    try:
        session = _Session(args)
        return args.func(session)
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ProviderError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
