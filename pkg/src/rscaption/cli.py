"""Command-line entry point: ``rscaption <command> [options]``.

Exit codes: 0 success, 2 validation error, 3 backend exhaustion.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .genbridge import BackendError
from .pipeline import ConfigError, Pipeline, RunConfig, audit, manifest_stats

EXIT_OK, EXIT_INVALID, EXIT_BACKEND = 0, 2, 3


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed, "output_dir": args.output_dir}
    if getattr(args, "alpha", None) is not None:
        overrides["fusion.alpha"] = args.alpha
    return RunConfig.load(args.config, overrides)


def cmd_ingest(args):
    return Pipeline(_config(args)).ingest()


def cmd_stage1(args):
    return Pipeline(_config(args)).stage1()


def cmd_stage2(args):
    return Pipeline(_config(args)).stage2()


def cmd_fuse(args):
    cfg = _config(args)
    alphas = args.sweep if args.sweep else (cfg.alpha_sweep or None)
    return Pipeline(cfg).fuse(alphas)


def cmd_longret(args):
    return Pipeline(_config(args)).longret(args.input, args.mode)


def cmd_eval(args):
    from .evalkit import captioning, classify, io, retrieval

    if args.kind == "retrieval":
        m = io.load_similarity(args.scores, args.caption_map)
        value = retrieval.retrieval_report(m)
        return io.metric_report("retrieval", value, {"ks": [1, 5, 10]}, tie_break=retrieval.TIE_BREAK)
    if args.kind == "captioning":
        hyps, refs = [], []
        with open(args.pairs, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    hyps.append(row["hypothesis"])
                    refs.append(row["references"])
        value = captioning.all_metrics(hyps, refs)
        return io.metric_report("captioning", value, {"rouge_beta2": 8.0, "cider_sigma": 6.0},
                                tokenizer=captioning.TOKENIZER)
    if args.kind == "zeroshot":
        images = io.read_embeddings(args.embeddings, args.labels)
        texts, _ = io.read_embedding_matrix(args.class_embeddings)
        value = classify.zero_shot_top1(images, texts)
        return io.metric_report("zero_shot_top1", value, {"unit": "percent"})
    if args.kind == "fewshot":
        e = io.read_embeddings(args.embeddings, args.labels, args.test_mask)
        cfg = classify.EpisodeConfig(args.n_way, args.k_shot, args.n_query, args.episodes, args.seed or 0, args.setting)
        mean, half = classify.few_shot_eval(e, cfg)
        config = {**cfg.__dict__, "classifier": classify.CLASSIFIER, "ci": "1.96*std/sqrt(episodes)", "unit": "percent"}
        return io.metric_report("few_shot", {"mean": mean, "ci95": half}, config)
    if args.kind == "selo":
        rows = json.loads(Path(args.selo).read_text(encoding="utf-8"))
        return io.metric_report("selo", io.tabulate_selo(rows), {"source": "external"})
    raise ConfigError("kind", f"unknown eval kind {args.kind!r}")


def cmd_stats(args):
    from .evalkit.stats import similarity_histogram

    manifest = args.manifest or str(_config(args).output_dir / "manifest.jsonl")
    source = None if args.source == "all" else args.source
    report = manifest_stats(manifest, source)
    if args.scores:
        report["similarity_histogram"] = similarity_histogram(np.loadtxt(args.scores, ndmin=1), args.score_bins)
    return report


def cmd_audit(args):
    if args.manifest:
        manifest = Path(args.manifest)
        out = Path(args.out) if args.out else manifest.with_name("audit.jsonl")
    else:
        cfg = _config(args)
        manifest = cfg.output_dir / "manifest.jsonl"
        out = Path(args.out) if args.out else cfg.output_dir / "audit.jsonl"
    return audit(manifest, args.sample_n, args.seed or 0, out, args.source)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rscaption", description="Remote-sensing caption dataset toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help, config_required=True):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=config_required, help="run config (YAML)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--output-dir", help="override the config output directory")
        p.set_defaults(func=func)
        return p

    add("ingest", cmd_ingest, "parse, clean, dedup and tile the corpus")
    add("stage1", cmd_stage1, "generate the three per-image descriptions")
    add("stage2", cmd_stage2, "summarize descriptions into Prompt-1 and Prompt-2 captions")
    p = add("fuse", cmd_fuse, "mix Prompt-1 and Prompt-2 captions into the final manifest")
    p.add_argument("--alpha", type=float, help="probability of taking the Prompt-2 caption")
    p.add_argument("--sweep", type=float, nargs="+", help="write one manifest per alpha")
    p = add("longret", cmd_longret, "build the long-caption retrieval test set")
    p.add_argument("--input", help="JSONL rows with id, path and five captions")
    p.add_argument("--mode", choices=["join", "rewrite"])

    p = add("eval", cmd_eval, "compute evaluation metrics from precomputed files", config_required=False)
    p.add_argument("kind", choices=["retrieval", "captioning", "zeroshot", "fewshot", "selo"])
    p.add_argument("--scores", help="image x text score matrix (.npy or text)")
    p.add_argument("--caption-map", help="caption map JSONL")
    p.add_argument("--pairs", help="JSONL rows with hypothesis and references")
    p.add_argument("--embeddings")
    p.add_argument("--labels")
    p.add_argument("--test-mask")
    p.add_argument("--class-embeddings")
    p.add_argument("--selo", help="JSON list of externally computed Rsu/Ras/Rda/Rmi rows")
    p.add_argument("--n-way", type=int, default=5)
    p.add_argument("--k-shot", type=int, default=1)
    p.add_argument("--n-query", type=int, default=15)
    p.add_argument("--episodes", type=int, default=600)
    p.add_argument("--setting", choices=["A", "B", "C", "D"], default="A")

    p = add("stats", cmd_stats, "caption length and word statistics", config_required=False)
    p.add_argument("--manifest")
    p.add_argument("--source", default="Fused", help="caption source, or 'all'")
    p.add_argument("--scores", help="text file of paired image-caption scores")
    p.add_argument("--score-bins", type=int, default=20)

    p = add("audit", cmd_audit, "sample captions for manual review", config_required=False)
    p.add_argument("sample_n", type=int)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--source", nargs="+")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    needs_config = args.command in ("ingest", "stage1", "stage2", "fuse", "longret")
    if not needs_config and args.command != "eval" and not args.config and not getattr(args, "manifest", None):
        parser.error("--config or --manifest is required")
    try:
        report = args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "validation", "field": exc.field, "message": str(exc)}), file=sys.stderr)
        return EXIT_INVALID
    except BackendError as exc:
        print(json.dumps({"error": "backend", "message": str(exc), "last_status": str(exc.last_status)}),
              file=sys.stderr)
        return EXIT_BACKEND
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(json.dumps({"error": "validation", "message": str(exc)}), file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps(report, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
