"""Command-line entry point: ``nuggetbench <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus import DEFAULT_MAX_TOKENS, RepoSource, build_corpus, load_corpus
from .errors import NuggetBenchError
from .fusion import FusionConfig, fuse_runs
from .gateway import DenseIndex, Gateway, GatewayConfig, build_dense_index, search_dense
from .io import read_jsonl, write_json, write_jsonl
from .lexical import build_lexical_index, load_index, save_index, search_lexical
from .metrics import EvalConfig, evaluate_run, format_table
from .nuggets import generate_nuggets, load_nuggets, load_questions
from .pipeline import STAGE_ORDER, Pipeline, load_config, report, tomllib
from .pooling import (
    VARIANT_KINDS,
    JudgmentPool,
    build_qrels,
    filter_dataset,
    judge_pool,
    make_variants,
    pool_from_runs,
    read_qrels,
    write_qrels,
)
from .rag import RagAnswer, a_strict_from_assignments, assign_nuggets, generate_rag_answer
from .runs import RetrievalRun, read_trec, write_trec

logger = logging.getLogger("nuggetbench")


def _gateway(args) -> Gateway:
    if getattr(args, "gateway", None):
        with open(args.gateway, "rb") as f:
            data = tomllib.load(f)
        return Gateway(GatewayConfig.from_dict(data.get("gateway", data)))
    return Gateway(GatewayConfig())


def _load_repos(path: str) -> list[RepoSource]:
    with open(path, "rb") as f:
        data = tomllib.load(f)
    base = Path(path).parent
    return [
        RepoSource(r["name"], str(base / r["path"]) if not Path(r["path"]).is_absolute() else r["path"], r.get("branch_note", ""))
        for r in data.get("repos", [])
    ]


def cmd_ingest(args):
    manifest = build_corpus(_load_repos(args.repos), args.out, args.max_tokens)
    print(f"{manifest.chunk_count} chunks from {manifest.file_count} files ({manifest.skipped_count} skipped) -> {args.out}")


def cmd_index(args):
    index = build_lexical_index((c.doc_id, c.text) for c in load_corpus(args.corpus))
    print(f"indexed {index.N} documents -> {save_index(index, args.out)}")


def cmd_embed(args):
    gw = _gateway(args)
    docs = [(c.doc_id, c.text) for c in load_corpus(args.corpus)]
    build_dense_index(docs, gw, args.model).save(args.out)
    print(f"embedded {len(docs)} documents with {args.model} -> {args.out}")


def cmd_search(args):
    queries = {str(r["query_id"]): r["text"] for r in read_jsonl(args.queries)}
    index_path = Path(args.index)
    if index_path.is_dir():
        index = load_index(index_path)
        run = RetrievalRun(args.tag or "bm25", {q: search_lexical(index, t, args.k) for q, t in sorted(queries.items())})
    else:
        dense = DenseIndex.load(index_path)
        gw = _gateway(args)
        qids = sorted(queries)
        vecs = gw.embed_texts([queries[q] for q in qids], dense.model_id, kind="query")
        run = RetrievalRun(args.tag or dense.model_id, {q: search_dense(dense, v, args.k) for q, v in zip(qids, vecs)})
    write_trec(run, args.out)


def cmd_fuse(args):
    runs = [read_trec(p) for p in args.runs]
    fused = fuse_runs(runs, FusionConfig(args.depth, args.output_depth))
    write_trec(fused, args.out)


def cmd_nuggetize(args):
    gw = _gateway(args)
    questions = load_questions(args.questions)
    results = gw.map(lambda q: generate_nuggets(q, gw, args.model, args.max_nuggets), questions)
    write_jsonl(args.out, [n.to_json() for ns in results for n in ns])


def cmd_variants(args):
    gw = _gateway(args)
    nuggets = load_nuggets(args.nuggets) if args.nuggets else {}
    kinds = args.kinds or [k for k in VARIANT_KINDS if k != "so_nuggets" or nuggets]
    rows = []
    for q in load_questions(args.questions):
        variants, _ = make_variants(q, kinds, gw, args.model, nuggets.get(q.question_id))
        for kind in kinds:
            v = variants.get(kind)
            rows.append({"question_id": q.question_id, "kind": kind, "oracle": kind in ("so_answer", "so_nuggets"),
                         "available": v is not None, "text": v.text if v else ""})
    write_jsonl(args.out, rows)


def cmd_pool(args):
    runs = {}
    for spec in args.runs:
        kind, _, path = spec.partition("=")
        runs[kind] = read_trec(path)
    qids = sorted(set().union(*(r.results for r in runs.values())))
    pools = [
        pool_from_runs(q, {k: r.results[q] for k, r in runs.items() if q in r.results}, args.k).to_json()
        for q in qids
    ]
    write_jsonl(args.out, pools)


def cmd_judge(args):
    gw = _gateway(args)
    questions = {q.question_id: q for q in load_questions(args.questions)}
    nuggets = load_nuggets(args.nuggets)
    texts = {c.doc_id: c.text for c in load_corpus(args.corpus)}
    judgments = []
    for row in read_jsonl(args.pools):
        pool = JudgmentPool.from_json(row)
        if nuggets.get(pool.question_id) and pool.entries:
            judgments.extend(judge_pool(questions[pool.question_id], nuggets[pool.question_id], pool, texts, gw, args.model))
    if args.judgments:
        write_jsonl(args.judgments, [j.to_json() for j in judgments])
    write_qrels(build_qrels(judgments, set(texts)), args.out)


def cmd_filter(args):
    from dataclasses import asdict

    kept, kept_nuggets, kept_qrels, rep = filter_dataset(
        load_questions(args.questions), load_nuggets(args.nuggets), read_qrels(args.qrels)
    )
    out = Path(args.out_dir)
    write_jsonl(out / "questions.jsonl", [asdict(q) for q in kept])
    write_jsonl(out / "nuggets.jsonl", [n.to_json() for q in kept for n in kept_nuggets[q.question_id]])
    write_qrels(kept_qrels, out / "qrels.tsv")
    write_json(out / "filter_report.json", rep.to_json())
    print(json.dumps(rep.to_json(), indent=2))


def cmd_evaluate(args):
    run = read_trec(args.run)
    qrels = read_qrels(args.qrels)
    nugget_ids = None
    if args.nuggets:
        nugget_ids = {q: [n.nugget_id for n in ns] for q, ns in load_nuggets(args.nuggets).items()}
    k = args.k or [10, 20, 50]
    result = evaluate_run(run, qrels, EvalConfig(args.alpha, k[0], k[1], k[2]), nugget_ids)
    if args.out:
        write_json(args.out, result.to_json())
    sys.stdout.write(format_table([result]))


def cmd_rag_generate(args):
    gw = _gateway(args)
    questions = load_questions(args.questions)
    texts = {c.doc_id: c.text for c in load_corpus(args.corpus)} if args.run else {}
    run = read_trec(args.run) if args.run else None

    def work(q):
        docs = [(d, texts[d]) for d in run.ranking(q.question_id)[: args.context_docs]] if run else []
        return generate_rag_answer(q, docs, gw, args.model, args.max_context_tokens)

    write_jsonl(args.out, [a.to_json() for a in gw.map(work, questions)])


def cmd_rag_score(args):
    gw = _gateway(args)
    nuggets = load_nuggets(args.nuggets)
    questions = {q.question_id: q for q in load_questions(args.questions)} if args.questions else {}
    answers = [RagAnswer.from_json(r) for r in read_jsonl(args.answers)]
    assignments = [
        a for ans in answers
        for a in assign_nuggets(ans, nuggets[ans.question_id], gw, args.model, questions.get(ans.question_id))
    ]
    if args.assignments:
        write_jsonl(args.assignments, [a.to_json() for a in assignments])
    score = a_strict_from_assignments(assignments)
    write_json(args.out, score.to_json())
    print(f"A_strict = {score.mean:.3f} over {len(score.per_question)} questions")


def cmd_report(args):
    sys.stdout.write(report(load_config(args.config)))


def cmd_pipeline(args):
    pipe = Pipeline(load_config(args.config))
    if args.stage:
        ran = pipe.run_stage(args.stage, force=args.force)
        print(f"{args.stage}: {'done' if ran else 'up to date'}")
    else:
        ran = pipe.run_all()
        print("ran: " + (", ".join(ran) if ran else "nothing (all stages up to date)"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nuggetbench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        return p

    def gw_opts(p, model_default="gpt-4o"):
        p.add_argument("--gateway", help="TOML file with a [gateway] table (default: mock backend)")
        p.add_argument("--model", default=model_default)

    p = add("ingest", cmd_ingest, "chunk repositories into a corpus")
    p.add_argument("--repos", required=True, help="TOML file with [[repos]] entries")
    p.add_argument("--out", required=True)
    p.add_argument("--max-tokens", type=int, default=DEFAULT_MAX_TOKENS)

    p = add("index", cmd_index, "build the BM25 index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="index directory")

    p = add("embed", cmd_embed, "embed the corpus into a dense index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    gw_opts(p, "mock-embed")

    p = add("search", cmd_search, "retrieve with a BM25 index directory or a dense index file")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True, help="JSONL with query_id and text")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--tag")
    p.add_argument("--gateway")

    p = add("fuse", cmd_fuse, "min-max normalise and sum TREC runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=100)
    p.add_argument("--output-depth", type=int, default=100)

    p = add("nuggetize", cmd_nuggetize, "generate nuggets for questions")
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-nuggets", type=int, default=10)
    gw_opts(p)

    p = add("variants", cmd_variants, "build retrieval query variants")
    p.add_argument("--questions", required=True)
    p.add_argument("--nuggets")
    p.add_argument("--kinds", nargs="*", choices=VARIANT_KINDS)
    p.add_argument("--out", required=True)
    gw_opts(p)

    p = add("pool", cmd_pool, "pool the top-k of several fused runs")
    p.add_argument("--runs", nargs="+", required=True, help="kind=path.trec")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--out", required=True)

    p = add("judge", cmd_judge, "nugget-level support judgments for pools")
    p.add_argument("--questions", required=True)
    p.add_argument("--nuggets", required=True)
    p.add_argument("--pools", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="qrels TSV")
    p.add_argument("--judgments", help="optional JSONL of every judgment")
    gw_opts(p)

    p = add("filter", cmd_filter, "drop unsupported questions and questions with unsupported nuggets")
    p.add_argument("--questions", required=True)
    p.add_argument("--nuggets", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("evaluate", cmd_evaluate, "alpha-nDCG, Coverage and Recall of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--nuggets")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--k", type=int, nargs=3, metavar=("NDCG_K", "COVERAGE_K", "RECALL_K"))
    p.add_argument("--out")

    p = add("rag-generate", cmd_rag_generate, "generate answers from a run's top documents")
    p.add_argument("--questions", required=True)
    p.add_argument("--run", help="omit for closed-book answers")
    p.add_argument("--corpus")
    p.add_argument("--context-docs", type=int, default=20)
    p.add_argument("--max-context-tokens", type=int)
    p.add_argument("--out", required=True)
    gw_opts(p)

    p = add("rag-score", cmd_rag_score, "assign nuggets to answers and compute A_strict")
    p.add_argument("--answers", required=True)
    p.add_argument("--nuggets", required=True)
    p.add_argument("--questions")
    p.add_argument("--assignments")
    p.add_argument("--out", required=True)
    gw_opts(p)

    p = add("report", cmd_report, "dataset statistics for a pipeline config")
    p.add_argument("--config", required=True)

    p = add("pipeline", cmd_pipeline, "run the configured pipeline")
    p.add_argument("action", choices=["run"])
    p.add_argument("--config", required=True)
    p.add_argument("--stage", choices=STAGE_ORDER)
    p.add_argument("--force", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NuggetBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
