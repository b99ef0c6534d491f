"""Config-driven orchestration of ingest, caption generation, fusion and reporting."""

from __future__ import annotations

import json
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import yaml

from . import ingest
from ._util import config_hash, derive_seed, read_jsonl, write_json, write_jsonl
from .compose import (
    FUSED, MLLM_A, MLLM_B, PROMPT1, PROMPT2, RMRELAY,
    CaptionRecord, ComposeError, FusionConfig, ManifestEntry,
    build_stage2_request, emit_manifest, fuse_captions, load_manifest, pick_one,
)
from .genbridge import Backend, BackendProfile, CallLog, FilterPolicy, GenRequest, Message, filter_caption
from .instructgen import DETAIL_INSTRUCTION, a2i
from .longbench import JOIN, REWRITE, benchmark_stats, build_long_records
from .rulegen import a2d, build_class_expansion_request

log = logging.getLogger(__name__)

BACKEND_KEYS = ("mllm_a", "mllm_b", "llm")
OPTIONAL_BACKENDS = ("relay",)
TOP_LEVEL = ("seed", "output_dir", "corpus", "cleaning", "tiling", "dedup", "backends",
             "filter", "fusion", "relay_images", "longret")
CHOSEN = "chosen"

# the three stage-1 perspectives and the backend that produces each
STAGE1 = ((RMRELAY, "relay"), (MLLM_A, "mllm_a"), (MLLM_B, "mllm_b"))


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class CorpusSpec:
    root: Path
    layout: str = "annotation-manifest"
    source: str | None = None
    splits: tuple[str, ...] | None = None


@dataclass
class RunConfig:
    corpus: list[CorpusSpec]
    output_dir: Path
    backends: dict[str, BackendProfile]
    seed: int = 0
    cleaning: ingest.CleaningRules = field(default_factory=ingest.CleaningRules)
    tile_window: tuple[int, int] | None = None
    min_area_fraction: float = ingest.DEFAULT_MIN_AREA_FRACTION
    dedup_threshold: int = 0
    filter: FilterPolicy = field(default_factory=FilterPolicy)
    alpha: float = 0.5
    fusion_seed: int = 0
    alpha_sweep: tuple[float, ...] = ()
    relay_images: int = 9
    longret_input: Path | None = None
    longret_mode: str = JOIN
    raw: dict[str, Any] = field(default_factory=dict)

    @property
    def hash(self) -> str:
        # the output location does not change results, so it stays out of the hash
        return config_hash({k: v for k, v in self.raw.items() if k != "output_dir"})

    def meta(self) -> dict[str, Any]:
        return {"config_hash": self.hash, "config": self.raw}

    @classmethod
    def load(cls, path: str | Path, overrides: dict[str, Any] | None = None) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError("config", f"file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"not valid YAML: {exc}") from exc
        return cls.from_dict(raw, path.parent, overrides)

    @classmethod
    def from_dict(cls, raw: dict[str, Any], base_dir: str | Path = ".",
                  overrides: dict[str, Any] | None = None) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a mapping")
        raw = json.loads(json.dumps(raw))
        for key, value in (overrides or {}).items():
            if value is not None:
                _set_path(raw, key, value)
        base = Path(base_dir)
        for key in raw:
            if key not in TOP_LEVEL:
                raise ConfigError(key, "unknown field")

        def resolve(p: Any, name: str) -> Path:
            if not isinstance(p, str) or not p:
                raise ConfigError(name, "expected a path string")
            q = Path(p)
            q = q if q.is_absolute() else base / q
            if not q.exists():
                raise ConfigError(name, f"path does not exist: {q}")
            return q

        corpus_raw = raw.get("corpus")
        if not isinstance(corpus_raw, list) or not corpus_raw:
            raise ConfigError("corpus", "expected a non-empty list of corpus entries")
        corpus = []
        for i, c in enumerate(corpus_raw):
            name = f"corpus[{i}]"
            if isinstance(c, str):
                c = {"root": c}
            if not isinstance(c, dict):
                raise ConfigError(name, "expected a mapping")
            unknown = set(c) - {"root", "layout", "source", "splits"}
            if unknown:
                raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown field")
            layout = c.get("layout", "annotation-manifest")
            if layout not in ("annotation-manifest", "class-folders"):
                raise ConfigError(f"{name}.layout", f"unknown layout {layout!r}")
            splits = c.get("splits")
            if splits is not None:
                bad = [s for s in splits if s not in ingest.SPLITS]
                if bad:
                    raise ConfigError(f"{name}.splits", f"unknown split(s) {bad}")
                splits = tuple(splits)
            corpus.append(CorpusSpec(resolve(c.get("root"), f"{name}.root"), layout, c.get("source"), splits))

        cleaning_raw = raw.get("cleaning")
        if isinstance(cleaning_raw, str):
            cleaning_raw = yaml.safe_load(resolve(cleaning_raw, "cleaning").read_text(encoding="utf-8")) or {}
        try:
            cleaning = ingest.CleaningRules.from_dict(cleaning_raw)
        except (ingest.IngestError, TypeError) as exc:
            raise ConfigError("cleaning", str(exc)) from exc

        tiling = raw.get("tiling") or {}
        window = tiling.get("window")
        if window is not None:
            if isinstance(window, int):
                window = (window, window)
            if len(window) != 2 or min(window) < 1:
                raise ConfigError("tiling.window", "expected a positive size or [width, height]")
            window = (int(window[0]), int(window[1]))
        frac = float(tiling.get("min_area_fraction", ingest.DEFAULT_MIN_AREA_FRACTION))
        if not 0.0 < frac <= 1.0:
            raise ConfigError("tiling.min_area_fraction", "must lie in (0, 1]")

        threshold = (raw.get("dedup") or {}).get("threshold", 0)
        if not isinstance(threshold, int) or not 0 <= threshold <= 10:
            raise ConfigError("dedup.threshold", "must be an integer in [0, 10]")

        backends_raw = raw.get("backends")
        if not isinstance(backends_raw, dict):
            raise ConfigError("backends", "expected a mapping of backend profiles")
        for key in backends_raw:
            if key not in BACKEND_KEYS + OPTIONAL_BACKENDS:
                raise ConfigError(f"backends.{key}",
                                  "unknown backend; stage 1 uses RMRelay plus exactly mllm_a and mllm_b")
        backends = {}
        for key in BACKEND_KEYS:
            if key not in backends_raw:
                raise ConfigError(f"backends.{key}", "missing backend profile")
        for key, prof in backends_raw.items():
            if isinstance(prof, str):
                prof = yaml.safe_load(resolve(prof, f"backends.{key}").read_text(encoding="utf-8"))
            if not isinstance(prof, dict):
                raise ConfigError(f"backends.{key}", "expected a profile mapping or file")
            try:
                backends[key] = BackendProfile.from_dict({"name": key, **prof})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"backends.{key}", str(exc)) from exc
        # class-folder images are expanded by the first MLLM unless a relay profile is given
        backends.setdefault("relay", backends["mllm_a"])

        try:
            policy = FilterPolicy.from_dict(raw.get("filter"))
        except TypeError as exc:
            raise ConfigError("filter", str(exc)) from exc

        fusion = raw.get("fusion") or {}
        alpha = fusion.get("alpha", 0.5)
        sweep = tuple(fusion.get("sweep") or ())
        for name, a in [("fusion.alpha", alpha)] + [("fusion.sweep", a) for a in sweep]:
            if not isinstance(a, (int, float)) or not 0.0 <= a <= 1.0:
                raise ConfigError(name, f"alpha must lie in [0, 1], got {a!r}")

        longret = raw.get("longret") or {}
        mode = longret.get("mode", JOIN)
        if mode not in (JOIN, REWRITE):
            raise ConfigError("longret.mode", "must be join or rewrite")
        lr_input = resolve(longret["input"], "longret.input") if longret.get("input") else None

        out = raw.get("output_dir")
        if not isinstance(out, str) or not out:
            raise ConfigError("output_dir", "required")
        out_path = Path(out) if Path(out).is_absolute() else base / out

        seed = raw.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed", "must be an integer")
        n_images = raw.get("relay_images", 9)
        if not isinstance(n_images, int) or n_images < 1:
            raise ConfigError("relay_images", "must be a positive integer")

        return cls(corpus=corpus, output_dir=out_path, backends=backends, seed=seed, cleaning=cleaning,
                   tile_window=window, min_area_fraction=frac, dedup_threshold=threshold, filter=policy,
                   alpha=float(alpha), fusion_seed=int(fusion.get("seed", seed)),
                   alpha_sweep=tuple(float(a) for a in sweep), relay_images=n_images,
                   longret_input=lr_input, longret_mode=mode, raw=raw)


def _set_path(tree: dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


# --------------------------------------------------------------------------
# runner


class Pipeline:
    """Runs stages against one config. Every backend call goes through a
    per-backend call log in ``<output_dir>/calllog`` so reruns resume."""

    def __init__(self, config: RunConfig, backend_factory: Callable[[BackendProfile, CallLog], Backend] | None = None):
        self.config = config
        self.out = config.output_dir
        self._factory = backend_factory or (lambda prof, clog: Backend(prof, clog))
        self._backends: dict[str, Backend] = {}

    def backend(self, key: str) -> Backend:
        if key not in self._backends:
            prof = self.config.backends[key]
            self._backends[key] = self._factory(prof, CallLog(self.out / "calllog" / f"{key}.jsonl"))
        return self._backends[key]

    def path(self, name: str) -> Path:
        return self.out / name

    # ---- ingest

    def ingest(self) -> dict[str, Any]:
        cfg = self.config
        records: list[ingest.ImageRecord] = []
        errors: list[dict[str, Any]] = []
        removed: list[ingest.Exclusion] = []
        for spec in cfg.corpus:
            parsed = ingest.parse_corpus(spec.root, spec.layout, spec.source)
            errors.extend({**e, "corpus": str(spec.root)} for e in parsed.errors)
            removed.extend(parsed.excluded)
            for r in parsed.records:
                if spec.source and r.source_dataset != spec.source:
                    r.source_dataset = spec.source
                if spec.splits is not None and r.split not in spec.splits:
                    removed.append(ingest.Exclusion(r.id, "split filtered", r.split))
                else:
                    records.append(r)
        parsed_count = len(records) + len(removed)
        records, dropped = ingest.clean_annotations(records, cfg.cleaning)
        removed.extend(dropped)
        records, dropped = ingest.dedup(records, cfg.dedup_threshold)
        removed.extend(dropped)
        if cfg.tile_window is not None:
            tiled = []
            for r in records:
                tiled.extend(ingest.tile_image(r, *cfg.tile_window, min_area_fraction=cfg.min_area_fraction))
            records = tiled
        write_jsonl(self.path("corpus.jsonl"), (r.to_dict() for r in records))
        report = {
            "stage": "ingest",
            "config_hash": cfg.hash,
            "parsed": parsed_count,
            "parse_errors": len(errors),
            "kept": len(records),
            "removed_by_reason": dict(sorted(Counter(e.reason for e in removed).items())),
            "errors": errors,
            "removed": [e.to_dict() for e in removed],
        }
        write_json(self.path("ingest_report.json"), report)
        return report

    def corpus(self) -> list[ingest.ImageRecord]:
        p = self.path("corpus.jsonl")
        if not p.exists():
            raise ConfigError("output_dir", f"{p} missing; run ingest first")
        return ingest.read_records(p)

    # ---- generation helpers

    def _generate_filtered(self, key: str, requests: Sequence[GenRequest]) -> list[list[tuple[str, str | None]]]:
        """Generate, filter, and retry rejected requests once with ``seed + 1``.

        Returns per request a list of ``(text, rejection reason or None)``
        for each sample; samples still rejected after the retry keep their reason.
        """
        backend = self.backend(key)
        first = backend.generate_many(list(requests))
        results = []
        retry_idx = []
        for i, resp in enumerate(first):
            samples = [(t, _reject_reason(t, self.config.filter)) for t in resp.texts]
            results.append(samples)
            if all(reason is not None for _, reason in samples):
                retry_idx.append(i)
        if retry_idx:
            retries = [_reseed(requests[i]) for i in retry_idx]
            for i, resp in zip(retry_idx, backend.generate_many(retries)):
                samples = [(t, _reject_reason(t, self.config.filter)) for t in resp.texts]
                if any(reason is None for _, reason in samples):
                    results[i] = samples
                else:
                    log.info("%s: generation rejected after retry (%s)", requests[i].tag, samples[0][1])
        return results

    # ---- stage 1

    def stage1(self) -> dict[str, Any]:
        cfg = self.config
        records = self.corpus()
        entries = {r.id: ManifestEntry(r.id, r.image_ref, []) for r in records}

        # R-M relay: rule sentences for annotated images, expanded class seeds otherwise
        for r in records:
            if r.bboxes:
                entries[r.id].captions.append(CaptionRecord(r.id, a2d(r.bboxes, r.width, r.height, r.id).text, RMRELAY))
        pools: dict[str, list[str]] = defaultdict(list)
        for r in records:
            if not r.bboxes:
                pools[r.class_label].append(r.image_ref)
        relay = self.config.backends["relay"]
        classes = sorted(pools)
        reqs = [build_class_expansion_request(c, pools[c], cfg.seed, relay.name, cfg.relay_images, relay.temperature)
                for c in classes]
        class_text = {}
        for c, samples in zip(classes, self._generate_filtered("relay", reqs)):
            text = _first_accepted(samples)
            if text is not None:
                class_text[c] = text
        for r in records:
            if not r.bboxes:
                if r.class_label in class_text:
                    entries[r.id].captions.append(CaptionRecord(r.id, class_text[r.class_label], RMRELAY))
                else:
                    entries[r.id].gaps.append(RMRELAY)

        # MLLM A: template instructions; answers to a record's instructions are concatenated
        prof_a = cfg.backends["mllm_a"]
        owners, reqs = [], []
        for r in records:
            for ins in a2i(r, prof_a.templates or None, prof_a.box_format):
                owners.append(r.id)
                reqs.append(GenRequest(prof_a.name, [Message("user", ins.text, (r.image_ref,))], 1,
                                       prof_a.temperature, cfg.seed, f"stage1-a2i-{ins.template_id}",
                                       {"image_id": r.id}))
        answers: dict[str, list[str | None]] = defaultdict(list)
        for rid, samples in zip(owners, self._generate_filtered("mllm_a", reqs)):
            answers[rid].append(_first_accepted(samples))
        for r in records:
            parts = answers[r.id]
            if parts and all(p is not None for p in parts):
                entries[r.id].captions.append(CaptionRecord(r.id, " ".join(p.strip() for p in parts), MLLM_A))
            else:
                entries[r.id].gaps.append(MLLM_A)

        # MLLM B: one generic detail instruction
        prof_b = cfg.backends["mllm_b"]
        reqs = [GenRequest(prof_b.name, [Message("user", DETAIL_INSTRUCTION, (r.image_ref,))], 1,
                           prof_b.temperature, cfg.seed, "stage1-detail", {"image_id": r.id}) for r in records]
        for r, samples in zip(records, self._generate_filtered("mllm_b", reqs)):
            text = _first_accepted(samples)
            if text is not None:
                entries[r.id].captions.append(CaptionRecord(r.id, text.strip(), MLLM_B))
            else:
                entries[r.id].gaps.append(MLLM_B)

        rows = [entries[r.id] for r in records]
        emit_manifest(rows, self.path("stage1.jsonl"), cfg.meta())
        report = {
            "stage": "stage1",
            "config_hash": cfg.hash,
            "images": len(rows),
            "complete": sum(1 for e in rows if not e.gaps),
            "gaps_by_source": dict(sorted(Counter(g for e in rows for g in e.gaps).items())),
        }
        write_json(self.path("stage1_report.json"), report)
        return report

    # ---- stage 2

    def stage2(self) -> dict[str, Any]:
        cfg = self.config
        p = self.path("stage1.jsonl")
        if not p.exists():
            raise ConfigError("output_dir", f"{p} missing; run stage1 first")
        stage1 = load_manifest(p)
        llm = cfg.backends["llm"]
        ready, out = [], []
        for e in stage1:
            d = {src: (e.by_source(src) or [None])[0] for src in (RMRELAY, MLLM_A, MLLM_B)}
            entry = ManifestEntry(e.id, e.path, [])
            if any(v is None for v in d.values()):
                entry.gaps = [PROMPT1, PROMPT2]
            else:
                ready.append((entry, d))
            out.append(entry)

        def requests(prompt_id):
            return [build_stage2_request(d[MLLM_A], d[RMRELAY], d[MLLM_B], prompt_id, cfg.seed, llm.name, llm.temperature)
                    for _, d in ready]

        p1 = self._generate_filtered("llm", requests(1))
        p2 = self._generate_filtered("llm", requests(2))
        for (entry, _), s1, s2 in zip(ready, p1, p2):
            text = _first_accepted(s1)
            if text is None:
                entry.gaps.append(PROMPT1)
            else:
                entry.captions.append(CaptionRecord(entry.id, text.strip(), PROMPT1))
            accepted = [reason is None for _, reason in s2]
            if not any(accepted):
                entry.gaps.append(PROMPT2)
                continue
            _, chosen, short = pick_one([t for t, _ in s2], derive_seed(cfg.seed, "pick", entry.id), accepted)
            for i, (t, reason) in enumerate(s2):
                flags = []
                if i == chosen:
                    flags.append(CHOSEN)
                    if short:
                        flags.append("few_survivors")
                if reason is not None:
                    flags.append(f"rejected:{reason}")
                entry.captions.append(CaptionRecord(entry.id, t.strip(), PROMPT2, i, flags))

        emit_manifest(out, self.path("stage2.jsonl"), cfg.meta())
        report = {
            "stage": "stage2",
            "config_hash": cfg.hash,
            "images": len(out),
            "captions": sum(len(e.captions) for e in out),
            "over_token_budget": sum(1 for e in out for c in e.captions if "over_token_budget" in c.flags),
            "gaps_by_source": dict(sorted(Counter(g for e in out for g in e.gaps).items())),
        }
        write_json(self.path("stage2_report.json"), report)
        return report

    # ---- fusion

    def fuse(self, alphas: Sequence[float] | None = None) -> dict[str, Any]:
        cfg = self.config
        p = self.path("stage2.jsonl")
        if not p.exists():
            raise ConfigError("output_dir", f"{p} missing; run stage2 first")
        stage2 = load_manifest(p)
        runs = [(a, f"manifest_alpha{a:g}.jsonl") for a in alphas] if alphas else [(cfg.alpha, "manifest.jsonl")]
        report: dict[str, Any] = {"stage": "fuse", "config_hash": cfg.hash, "manifests": []}
        for alpha, name in runs:
            fc = FusionConfig(alpha, cfg.fusion_seed)
            entries = []
            for e in stage2:
                c1 = (e.by_source(PROMPT1) or [None])[0]
                c2 = e.chosen_prompt2()
                fused = None
                if c1 is not None or c2 is not None:
                    fused = fuse_captions(c1, c2, fc, e.id)
                entries.append(ManifestEntry(e.id, e.path, e.captions, fused, e.gaps))
            meta = {**cfg.meta(), "alpha": alpha, "fusion_seed": cfg.fusion_seed}
            emit_manifest(entries, self.path(name), meta)
            fused = [e.fused for e in entries if e.fused is not None]
            n2 = sum(1 for f in fused if f.winner == PROMPT2)
            report["manifests"].append({"alpha": alpha, "path": str(self.path(name)), "images": len(entries),
                                        "prompt2_fraction": n2 / len(fused) if fused else 0.0})
        write_json(self.path("fuse_report.json"), report)
        return report

    # ---- long-caption benchmark

    def longret(self, input_path: str | Path | None = None, mode: str | None = None) -> dict[str, Any]:
        cfg = self.config
        src = Path(input_path) if input_path else cfg.longret_input
        if src is None:
            raise ConfigError("longret.input", "no retrieval test set given")
        mode = mode or cfg.longret_mode
        backend = self.backend("llm") if mode == REWRITE else None
        records, excluded = build_long_records(read_jsonl(src), mode, backend, cfg.seed)
        out = self.path(f"longret_{mode}.jsonl")
        write_jsonl(out, (r.to_dict() for r in records))
        report = {"stage": "longret", "config_hash": cfg.hash, "mode": mode, "path": str(out),
                  "excluded": excluded}
        if records:
            report["stats"] = benchmark_stats(records)
        write_json(self.path(f"longret_{mode}_report.json"), report)
        return report


def _reject_reason(text: str, policy: FilterPolicy) -> str | None:
    v = filter_caption(text, policy)
    return None if v.accepted else v.reason


def _first_accepted(samples: Sequence[tuple[str, str | None]]) -> str | None:
    for text, reason in samples:
        if reason is None:
            return text
    return None


def _reseed(request: GenRequest) -> GenRequest:
    return GenRequest(request.backend_profile, request.messages, request.n_samples, request.temperature,
                      request.seed + 1, request.tag + "-retry", request.meta)


# --------------------------------------------------------------------------
# standalone commands


def audit(manifest_path: str | Path, sample_n: int, seed: int, out_path: str | Path,
          sources: Sequence[str] | None = None) -> dict[str, Any]:
    """Write ``sample_n`` uniformly drawn (image, caption) pairs for manual review."""
    pairs = []
    for e in load_manifest(manifest_path):
        caps = list(e.captions) + ([e.fused] if e.fused is not None else [])
        for c in caps:
            if sources is None or c.source in sources:
                pairs.append({"id": e.id, "path": e.path, "source": c.source,
                              "sample_index": c.sample_index, "text": c.text, "verdict": None})
    if sample_n < 0:
        raise ValueError("sample_n must be non-negative")
    n = min(sample_n, len(pairs))
    picked = random.Random(seed).sample(range(len(pairs)), n)
    write_jsonl(out_path, (pairs[i] for i in sorted(picked)))
    return {"stage": "audit", "population": len(pairs), "sampled": n, "seed": seed, "path": str(out_path)}


def manifest_stats(manifest_path: str | Path, source: str | None = FUSED) -> dict[str, Any]:
    from .evalkit.stats import caption_stats

    texts = []
    for e in load_manifest(manifest_path):
        if source == FUSED:
            if e.fused is not None:
                texts.append(e.fused.text)
        else:
            texts.extend(c.text for c in e.captions if source is None or c.source == source)
    if not texts:
        raise ComposeError(f"no captions with source {source!r}")
    return {"stage": "stats", "source": source or "all", **caption_stats(texts)}
