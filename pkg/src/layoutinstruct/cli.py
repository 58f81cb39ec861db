"""Command-line entry point.

    layoutinstruct build-pretrain --config cfg.json --out out/ --total 900 --mock-llm
    layoutinstruct build-sft      --config cfg.json --out out/ --total 100 --mock-llm
    layoutinstruct build-eval     --config cfg.json --out out/
    layoutinstruct score          --eval-set out/eval_funsd.jsonl --adapter gold-echo --out out/

The config file is JSON. Relative paths resolve against the config's folder.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional

from . import assembler, cot, ingest
from .core import truncate_document
from .evaluation import harness
from .llm import API_KEY_ENV, CachedClient, ChatClient, GenerationError, MockClient
from .pretrain import (
    TLR_FORMATS,
    build_ddd,
    build_dla_classify,
    build_dla_locate,
    build_geometric,
    build_mask_position,
    build_mvlm,
    build_tlr,
    build_tu,
)
from .pretrain.region import TU_KINDS
from .seeding import derive_seed

log = logging.getLogger("layoutinstruct")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class BuildError(Exception):
    """A module failed; message carries module name and doc id."""


# --- config -------------------------------------------------------------------

def load_config(path: Optional[str]) -> dict:
    if not path:
        return {"_base": Path.cwd()}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        cfg = json.load(fh)
    cfg["_base"] = p.resolve().parent
    return cfg


def _input(cfg: dict, key: str, required: bool = False, kind: str = "dir") -> Optional[Path]:
    raw = cfg.get("inputs", {}).get(key)
    if raw is None:
        if required:
            raise UsageError(f"config is missing inputs.{key}")
        return None
    p = Path(raw)
    if not p.is_absolute():
        p = cfg["_base"] / p
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise UsageError(f"input {kind} for {key} not found: {p}")
    return p


def _path(cfg: dict, raw: str) -> Path:
    p = Path(raw)
    return p if p.is_absolute() else cfg["_base"] / p


def make_client(cfg: dict, mock: bool):
    if mock:
        raw = cfg.get("mock_responses")
        if raw is None:
            return MockClient({}, strict=True)
        p = _path(cfg, raw)
        if not p.is_file():
            raise UsageError(f"mock response file not found: {p}")
        return MockClient.from_file(p, strict=True)
    if not cfg.get("endpoint_url"):
        raise UsageError("no generation service: set endpoint_url in the config or pass --mock-llm")
    inner = ChatClient(
        cfg["endpoint_url"],
        cfg.get("model_name", ""),
        os.environ.get(cfg.get("api_key_env", API_KEY_ENV)),
    )
    cache_dir = cfg.get("cache_dir")
    return CachedClient(inner, _path(cfg, cache_dir)) if cache_dir else inner


def _pmap(fn: Callable, items: list, workers: int) -> list:
    """Ordered map; scheduling never affects the result order."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _dump_json(obj, path: Path) -> None:
    assembler.write_lines_atomic([json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False)], path)


def _ingest_summary(reports: dict) -> dict:
    return {
        name: {
            "records_in": r.records_in,
            "records_out": r.records_out,
            "records_skipped": r.records_skipped,
            "warnings": dict(sorted(r.warnings.items())),
        }
        for name, r in reports.items()
    }


def _stream(records) -> list:
    return sorted(assembler.dedup(records), key=lambda r: r.id)


# --- pretrain -----------------------------------------------------------------

def _pretrain_document_tasks(doc, seed, client) -> list:
    out = []
    rec = build_ddd(doc, client, derive_seed(seed, doc.doc_id, "ddd"))
    if rec is not None:
        out.append(rec)
    for fmt in TLR_FORMATS:
        out.append(build_tlr(doc, fmt, derive_seed(seed, doc.doc_id, "tlr", fmt)))
    return out


def _pretrain_segment_tasks(doc, seed, samples: int) -> list:
    out = []
    for s in range(samples):
        for task, build in (("mvlm", build_mvlm), ("mask_pos", build_mask_position),
                            ("geometric", build_geometric)):
            rec = build(doc, seed=derive_seed(seed, doc.doc_id, task, s))
            if rec is not None:
                out.append(_with_suffix(rec, s))
    return out


def _with_suffix(rec, s):
    return replace(rec, id=f"{rec.id}/{s}")


def _pretrain_region_tasks(doc, seed, samples: int) -> list:
    out = []
    for kind in sorted({r.kind for r in doc.regions}):
        rec = build_dla_locate(doc, kind, derive_seed(seed, doc.doc_id, "dla_locate", kind))
        if rec is not None:
            out.append(rec)
    for i in range(len(doc.regions)):
        out.append(build_dla_classify(doc, i, derive_seed(seed, doc.doc_id, "dla_classify", i)))
    if doc.table is not None:
        for kind in TU_KINDS:
            reps = 1 if kind == "shape" else samples
            for s in range(reps):
                rec = build_tu(doc, kind, derive_seed(seed, doc.doc_id, f"tu_{kind}", s))
                out.append(_with_suffix(rec, s))
    return out


def _guard(module: str, fn: Callable) -> Callable:
    def run(doc):
        try:
            return fn(doc)
        except (ValueError, KeyError, IndexError) as exc:
            raise BuildError(f"{module}: {getattr(doc, 'doc_id', doc)}: {exc}") from exc
    return run


def cmd_build_pretrain(args, cfg) -> int:
    out_dir = Path(args.out)
    reports = {"ocr": ingest.IngestReport()}
    ocr_dir = _input(cfg, "ocr", required=True)
    layout_file = _input(cfg, "layout", kind="file")
    table_file = _input(cfg, "table", kind="file")
    client = make_client(cfg, args.mock_llm)

    docs = ingest.load_ocr_corpus(ocr_dir, reports["ocr"], workers=args.workers)
    docs = [truncate_document(d) for d in docs if d.segments]
    region_docs = []
    if layout_file is not None:
        reports["layout"] = ingest.IngestReport()
        region_docs += ingest.attach_segments(
            ingest.load_layout_corpus(layout_file, reports["layout"]), docs
        )
    if table_file is not None:
        reports["table"] = ingest.IngestReport()
        region_docs += ingest.load_table_corpus(table_file, reports["table"])
    region_docs = [truncate_document(d) for d in region_docs]

    samples = int(cfg.get("segment_samples", 3))
    region_samples = int(cfg.get("region_samples", 2))
    doc_stats, seg_stats = Counter(), Counter()
    doc_level = _pmap(_guard("pretrain-doc",
                             lambda d: _pretrain_document_tasks(d, args.seed, client)),
                      docs, args.workers)
    seg_level = _pmap(_guard("pretrain-segment",
                             lambda d: _pretrain_segment_tasks(d, args.seed, samples)),
                      docs, args.workers)
    region_level = _pmap(_guard("pretrain-region",
                                lambda d: _pretrain_region_tasks(d, args.seed, region_samples)),
                         region_docs, args.workers)

    streams = [_stream(r for rs in level for r in rs) for level in (doc_level, region_level, seg_level)]
    doc_stats["ddd_records"] = sum(1 for r in streams[0] if r.task == "ddd")
    doc_stats["ddd_skipped"] = len(docs) - doc_stats["ddd_records"]
    for task in ("mvlm", "mask_pos", "geometric"):
        seg_stats[f"{task}_records"] = sum(1 for r in streams[2] if r.task == task)

    ratio = cfg.get("pretrain_ratio", assembler.PRETRAIN_RATIO)
    total = args.total if args.total is not None else sum(len(s) for s in streams)
    mixed = assembler.mix_by_ratio(streams, ratio, total, args.seed, replace=args.allow_replacement,
                                   names=["document-level", "region-level", "segment-level"])
    mixed = assembler.dedup(mixed)
    assembler.emit_jsonl(mixed, out_dir / "pretrain.jsonl")
    stats = assembler.dataset_stats(mixed).to_dict()
    stats["stream_sizes"] = {"document": len(streams[0]), "region": len(streams[1]),
                             "segment": len(streams[2])}
    stats["ingest"] = _ingest_summary(reports)
    stats["build"] = dict(sorted((doc_stats + seg_stats).items()))
    _dump_json(stats, out_dir / "pretrain_stats.json")
    print(f"wrote {len(mixed)} records to {out_dir / 'pretrain.jsonl'}; levels {stats['by_level']}")
    skipped = sum(r.records_skipped for r in reports.values()) + doc_stats["ddd_skipped"]
    if args.strict and skipped:
        print(f"--strict: {skipped} inputs were skipped", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# --- SFT ----------------------------------------------------------------------

def collect_sft_sources(cfg, reports: dict, workers: int = 1) -> list:
    sources = []
    img_dir = _input(cfg, "sft_images") or _input(cfg, "ocr")
    if img_dir is not None:
        reports["image"] = ingest.IngestReport()
        for d in ingest.load_ocr_corpus(img_dir, reports["image"], source="image", workers=workers):
            sources.append(cot.CorpusSource("image", d.doc_id, d))
    html_dir = _input(cfg, "html")
    if html_dir is not None:
        reports["html"] = ingest.IngestReport()
        sources += cot.load_html_sources(html_dir, reports["html"])
    mrc_file = _input(cfg, "mrc", kind="file")
    if mrc_file is not None:
        reports["mrc"] = ingest.IngestReport()
        for item in ingest.load_mrc_corpus(mrc_file, reports["mrc"]):
            sources.append(cot.CorpusSource("mrc", f"mrc-{item.item_id}", item))
    if not sources:
        raise UsageError("no SFT sources configured (inputs.sft_images / ocr, html, mrc)")
    return sources


def cmd_build_sft(args, cfg) -> int:
    out_dir = Path(args.out)
    reports: dict = {}
    sources = collect_sft_sources(cfg, reports, args.workers)
    client = make_client(cfg, args.mock_llm)

    def build(src):
        stats = Counter()
        return cot.build_cot_records(src, client, args.seed, stats), stats

    results = _pmap(_guard("cot-builder", build), sources, args.workers)
    build_stats = Counter()
    by_variant = {v: [] for v in cot.VARIANTS}
    for src, (records, stats) in zip(sources, results):
        build_stats.update(stats)
        by_variant[src.variant].extend(records)
    streams = [_stream(by_variant[v]) for v in cot.VARIANTS]

    ratio = cfg.get("sft_ratio", assembler.SFT_RATIO)
    total = args.total if args.total is not None else sum(len(s) for s in streams)
    mixed = assembler.mix_by_ratio(streams, ratio, total, args.seed, replace=args.allow_replacement,
                                   names=["image sources", "html sources", "mrc sources"])
    mixed = assembler.dedup(mixed)
    assembler.emit_jsonl(mixed, out_dir / "sft.jsonl")
    manifest = cot.emit_render_manifest(sources, out_dir, cfg.get("renderer_cmd"), build_stats)

    stats = assembler.dataset_stats(mixed).to_dict()
    stats["by_source"] = dict(sorted(Counter(r.source for r in mixed).items()))
    stats["stream_sizes"] = {v: len(s) for v, s in zip(cot.VARIANTS, streams)}
    stats["ingest"] = _ingest_summary(reports)
    stats["build"] = dict(sorted(build_stats.items()))
    _dump_json(stats, out_dir / "sft_stats.json")
    print(f"wrote {len(mixed)} records to {out_dir / 'sft.jsonl'}; sources {stats['by_source']}; "
          f"manifest {manifest}")
    skipped = (sum(r.records_skipped for r in reports.values())
               + build_stats["client_error"] + build_stats["unparseable"]
               + build_stats["rejected_source"])
    if args.strict and skipped:
        print(f"--strict: {skipped} sources were skipped or failed", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# --- eval ---------------------------------------------------------------------

def cmd_build_eval(args, cfg) -> int:
    out_dir = Path(args.out)
    inputs = cfg.get("inputs", {})
    summary = {}
    built = 0
    for variant, key, build in (("linking", "vie_linking", harness.build_qa_for_vie_linking),
                                ("entity", "vie_entity", harness.build_qa_for_vie_entities)):
        for name, raw in sorted(inputs.get(key, {}).items()):
            path = _path(cfg, raw)
            if not path.is_dir():
                raise UsageError(f"input dir for {key}.{name} not found: {path}")
            report = ingest.IngestReport()
            docs = ingest.load_vie_corpus(path, variant, report, source=name, workers=args.workers)
            drops = Counter()
            items = build(docs, drops, dataset=name)
            harness.write_eval_set(items, out_dir / f"eval_{name}.jsonl")
            summary[name] = {"items": len(items), "dropped": dict(sorted(drops.items())),
                             "ingest": _ingest_summary({name: report})[name]}
            built += 1
            print(f"{name}: {len(items)} items -> {out_dir / f'eval_{name}.jsonl'}")
    if not built:
        raise UsageError("no VIE inputs configured (inputs.vie_linking / inputs.vie_entity)")
    _dump_json(summary, out_dir / "eval_stats.json")
    return EXIT_OK


def cmd_score(args, cfg) -> int:
    path = Path(args.eval_set)
    if not path.is_file():
        raise UsageError(f"eval set not found: {path}")
    items = harness.read_eval_set(path)
    if args.predictions:
        adapter = harness.PredictionFileAdapter.from_file(args.predictions)
    elif args.adapter == "gold-echo":
        adapter = harness.gold_echo
    else:
        adapter = harness.EndpointAdapter(make_client(cfg, args.mock_llm), args.mode)
    report = harness.score_run(items, adapter, cfg.get("beam_note", "beam search, beam size 5"),
                               workers=args.workers, timeout=args.timeout, metric=args.metric)
    out_dir = Path(args.out)
    harness.write_report(report, out_dir / f"report_{path.stem}.jsonl")
    print(report.table())
    return EXIT_OK


# --- entry --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layoutinstruct", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, build=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--mock-llm", action="store_true", help="answer from the canned mock map")
        p.add_argument("--strict", action="store_true", help="fail if any input was skipped")
        if build:
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--total", type=int, default=None, help="records in the mixed corpus")
            p.add_argument("--allow-replacement", action="store_true",
                           help="sample short streams with replacement")

    common(sub.add_parser("build-pretrain", help="layout-aware pretraining corpus"))
    common(sub.add_parser("build-sft", help="LayoutCoT SFT corpus"))
    common(sub.add_parser("build-eval", help="QA-for-VIE evaluation sets"), build=False)
    p = sub.add_parser("score", help="score an eval set")
    common(p, build=False)
    p.add_argument("--eval-set", required=True)
    p.add_argument("--predictions", help="JSONL of {item_id, prediction}")
    p.add_argument("--adapter", choices=("gold-echo", "endpoint"), default="gold-echo")
    p.add_argument("--mode", choices=harness.PROMPT_MODES, default="plain")
    p.add_argument("--metric", choices=tuple(harness.METRICS))
    p.add_argument("--timeout", type=float, default=None)
    return parser


COMMANDS = {
    "build-pretrain": cmd_build_pretrain,
    "build-sft": cmd_build_sft,
    "build-eval": cmd_build_eval,
    "score": cmd_score,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BuildError, GenerationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
