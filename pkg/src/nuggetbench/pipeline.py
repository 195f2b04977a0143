"""Declarative, resumable pipeline driven by one TOML config.

Each stage writes its artifacts atomically under ``output_dir`` and records
their hashes, together with a hash of everything the stage read, in
``state.json``. A stage whose recorded input hash still matches and whose
outputs are intact is skipped. Running a stage whose ancestors are missing
or stale raises :class:`RerunRequired` naming the earliest broken ancestor.
"""

from __future__ import annotations

import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

from . import __version__
from .corpus import DEFAULT_MAX_TOKENS, RepoSource, build_corpus, load_corpus, manifest_path_for
from .errors import ConfigurationError, NuggetBenchError, RerunRequired
from .fusion import FusionConfig
from .gateway import DenseIndex, Gateway, GatewayConfig, build_dense_index
from .io import atomic_write_text, read_json, read_jsonl, sha256_file, sha256_text, write_json, write_jsonl
from .lexical import build_lexical_index, load_index, save_index
from .metrics import EvalConfig, evaluate_run, format_table
from .nuggets import DEFAULT_MAX_NUGGETS, Nugget, QuestionRecord, generate_nuggets, load_nuggets, load_questions
from .pooling import (
    VARIANT_KINDS,
    JudgmentPool,
    QueryVariant,
    build_qrels,
    filter_dataset,
    judge_pool,
    make_variants,
    pool_from_runs,
    read_qrels,
    write_qrels,
)
from .prompts import load_template
from .rag import RagAnswer, a_strict_from_assignments, assign_nuggets, generate_rag_answer
from .report import compute_stats, format_stats
from .retrieval import RetrievalStack
from .runs import RetrievalRun, read_trec, write_trec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

RAG_SETTINGS = ("closed_book", "fusion", "so_nuggets_fusion")


@dataclass
class PipelineConfig:
    topic: str
    repos: list[RepoSource]
    questions: Path
    output_dir: Path
    gateway: GatewayConfig
    llm_model: str
    generator_model: str
    dense_models: list[str]
    use_bm25: bool = True
    fusion: FusionConfig = FusionConfig()
    eval: EvalConfig = EvalConfig()
    max_tokens: int = DEFAULT_MAX_TOKENS
    max_nuggets: int = DEFAULT_MAX_NUGGETS
    temperature: float = 0.1
    per_variant_k: int = 20
    variant_kinds: tuple[str, ...] = VARIANT_KINDS
    rag_settings: tuple[str, ...] = RAG_SETTINGS
    rag_context_docs: int = 20
    rag_max_context_tokens: int | None = None
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self) -> str:
        return sha256_text(json.dumps(self.raw, sort_keys=True, default=str))[:16]

    def section(self, *keys: str) -> dict:
        return {k: self.raw.get(k) for k in keys}


def load_config(path: str | os.PathLike) -> PipelineConfig:
    path = Path(path)
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    base = path.parent

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else (base / q)

    try:
        repos = [
            RepoSource(r["name"], str(resolve(r["path"])), r.get("branch_note", ""))
            for r in raw.get("repos", [])
        ]
        gw = dict(raw.get("gateway", {}))
        for key in ("mock_fixtures", "cache_dir"):
            if gw.get(key):
                gw[key] = str(resolve(gw[key]))
        models = raw.get("models", {})
        fusion = raw.get("fusion", {})
        ev = raw.get("evaluation", {})
        ks = ev.get("k", [10, 20, 50])
        pooling = raw.get("pooling", {})
        rag = raw.get("rag", {})
        cfg = PipelineConfig(
            topic=raw["topic"],
            repos=repos,
            questions=resolve(raw["questions"]),
            output_dir=resolve(raw.get("output_dir", "out")),
            gateway=GatewayConfig.from_dict(gw),
            llm_model=models.get("llm", "gpt-4o"),
            generator_model=models.get("generator", models.get("llm", "gpt-4o")),
            dense_models=list(models.get("dense", [])),
            use_bm25=bool(models.get("bm25", True)),
            fusion=FusionConfig(fusion.get("depth", 100), fusion.get("output_depth", 100), fusion.get("normalization", "min_max")),
            eval=EvalConfig(float(ev.get("alpha", 0.5)), int(ks[0]), int(ks[1]), int(ks[2])),
            max_tokens=int(raw.get("corpus", {}).get("max_tokens", DEFAULT_MAX_TOKENS)),
            max_nuggets=int(raw.get("nuggetize", {}).get("max_nuggets", DEFAULT_MAX_NUGGETS)),
            temperature=float(models.get("temperature", 0.1)),
            per_variant_k=int(pooling.get("per_variant_k", 20)),
            variant_kinds=tuple(pooling.get("variants", VARIANT_KINDS)),
            rag_settings=tuple(rag.get("settings", RAG_SETTINGS)),
            rag_context_docs=int(rag.get("context_docs", 20)),
            rag_max_context_tokens=rag.get("max_context_tokens"),
            seed=int(raw.get("seed", 0)),
            raw=raw,
        )
    except KeyError as exc:
        raise ConfigurationError(f"{path}: missing key {exc}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    if not cfg.repos:
        raise ConfigurationError("config lists no repositories")
    for r in cfg.repos:
        if not Path(r.root_path).is_dir():
            raise ConfigurationError(f"repository path not found: {r.root_path}")
    if not cfg.questions.is_file():
        raise ConfigurationError(f"questions file not found: {cfg.questions}")
    if not cfg.use_bm25 and not cfg.dense_models:
        raise ConfigurationError("need at least one retrieval model")
    unknown = set(cfg.variant_kinds) - set(VARIANT_KINDS)
    if unknown:
        raise ConfigurationError(f"unknown variant kinds: {sorted(unknown)}")
    bad = set(cfg.rag_settings) - set(RAG_SETTINGS)
    if bad:
        raise ConfigurationError(f"unknown rag settings: {sorted(bad)}")
    if cfg.gateway.mock_fixtures and not Path(cfg.gateway.mock_fixtures).is_file():
        raise ConfigurationError(f"mock fixtures not found: {cfg.gateway.mock_fixtures}")


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def _tree_hash(root: str | os.PathLike) -> str:
    """Content hash of a directory tree (relative paths + file bytes), symlinks ignored."""
    root = Path(root)
    parts = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        dirnames[:] = sorted(d for d in dirnames if d != ".git")
        for fn in sorted(filenames):
            full = Path(dirpath, fn)
            if full.is_symlink():
                continue
            parts.append(f"{full.relative_to(root).as_posix()}\0{sha256_file(full)}")
    return sha256_text("\n".join(sorted(parts)))


@dataclass
class Stage:
    name: str
    deps: tuple[str, ...]
    run: Callable[["Pipeline"], list[str]]
    config_keys: tuple[str, ...] = ()
    prompts: tuple[str, ...] = ()
    uses_sources: bool = False
    uses_questions: bool = False


class Pipeline:
    def __init__(self, config: PipelineConfig, gateway: Gateway | None = None):
        self.config = config
        self.out = config.output_dir
        self._gateway = gateway
        self._cache: dict[str, object] = {}

    # -- shared helpers -------------------------------------------------
    @property
    def gateway(self) -> Gateway:
        if self._gateway is None:
            self._gateway = Gateway(self.config.gateway)
        return self._gateway

    def path(self, rel: str) -> Path:
        return self.out / rel

    def questions(self) -> list[QuestionRecord]:
        return load_questions(self.config.questions)

    def corpus_text(self) -> dict[str, str]:
        if "corpus" not in self._cache:
            self._cache["corpus"] = {c.doc_id: c.text for c in load_corpus(self.path("corpus.jsonl"))}
        return self._cache["corpus"]

    def retrieval_stack(self) -> RetrievalStack:
        lexical = load_index(self.path("bm25")) if self.config.use_bm25 else None
        dense = {m: DenseIndex.load(self.path(f"dense/{_safe(m)}.bin")) for m in self.config.dense_models}
        return RetrievalStack(lexical, dense, self.gateway if dense else None, self.config.fusion)

    # -- state ----------------------------------------------------------
    def load_state(self) -> dict:
        p = self.path("state.json")
        return read_json(p) if p.exists() else {}

    def save_state(self, state: dict) -> None:
        write_json(self.path("state.json"), state)

    def input_hash(self, stage: Stage, state: dict) -> str:
        cfg = self.config
        payload = {
            "stage": stage.name,
            "version": __version__,
            "config": cfg.section(*stage.config_keys),
            "deps": {d: (state.get(d) or {}).get("outputs") for d in stage.deps},
            "prompts": {p: load_template(p).sha for p in stage.prompts},
        }
        if stage.uses_sources:
            payload["sources"] = {r.name: _tree_hash(r.root_path) for r in cfg.repos}
        if stage.uses_questions:
            payload["questions"] = sha256_file(cfg.questions)
        if "gateway" in stage.config_keys and cfg.gateway.mock_fixtures:
            payload["mock_fixtures"] = sha256_file(cfg.gateway.mock_fixtures)
        return sha256_text(json.dumps(payload, sort_keys=True, default=str))

    def _outputs_intact(self, record: dict) -> bool:
        for rel, digest in record.get("outputs", {}).items():
            p = self.path(rel)
            if not p.is_file() or sha256_file(p) != digest:
                return False
        return True

    def is_current(self, stage: Stage, state: dict) -> bool:
        record = state.get(stage.name)
        return bool(record) and record.get("input_hash") == self.input_hash(stage, state) and self._outputs_intact(record)

    def ancestors(self, name: str) -> list[str]:
        seen: set[str] = set()
        stack = list(STAGES[name].deps)
        while stack:
            d = stack.pop()
            if d not in seen:
                seen.add(d)
                stack.extend(STAGES[d].deps)
        return [s for s in STAGE_ORDER if s in seen]

    def run_stage(self, name: str, force: bool = False) -> bool:
        """Run one stage; returns False when it was already current (a no-op)."""
        if name not in STAGES:
            raise ConfigurationError(f"unknown stage {name!r}")
        stage = STAGES[name]
        state = self.load_state()
        for anc in self.ancestors(name):
            if not self.is_current(STAGES[anc], state):
                raise RerunRequired(anc)
        if not force and self.is_current(stage, state):
            logger.info("stage %s is up to date", name)
            return False
        logger.info("running stage %s", name)
        # drop the record first so an interrupted run never looks complete
        if name in state:
            del state[name]
            self.save_state(state)
        outputs = stage.run(self)
        record = {
            "input_hash": self.input_hash(stage, state),
            "outputs": {rel: sha256_file(self.path(rel)) for rel in sorted(outputs)},
        }
        state[name] = record
        state["_config_hash"] = self.config.config_hash
        self.save_state(state)
        return True

    def run_all(self, until: str | None = None) -> list[str]:
        ran = []
        for name in STAGE_ORDER:
            if self.run_stage(name):
                ran.append(name)
            if name == until:
                break
        return ran


# -- stage bodies ---------------------------------------------------------

def _stage_ingest(p: Pipeline) -> list[str]:
    build_corpus(p.config.repos, p.path("corpus.jsonl"), p.config.max_tokens)
    # keep the manifest portable: repo paths relative to the output dir
    man_path = manifest_path_for(p.path("corpus.jsonl"))
    manifest = read_json(man_path)
    for r in manifest["repos"]:
        r["root_path"] = os.path.relpath(r["root_path"], p.out).replace(os.sep, "/")
    write_json(man_path, manifest)
    return ["corpus.jsonl", "corpus.manifest.json"]


def _stage_index(p: Pipeline) -> list[str]:
    if not p.config.use_bm25:
        atomic_write_text(p.path("bm25/disabled"), "")
        return ["bm25/disabled"]
    index = build_lexical_index((c.doc_id, c.text) for c in load_corpus(p.path("corpus.jsonl")))
    save_index(index, p.path("bm25"))
    return ["bm25/bm25.json"]


def _stage_embed(p: Pipeline) -> list[str]:
    docs = [(c.doc_id, c.text) for c in load_corpus(p.path("corpus.jsonl"))]
    outs = []
    for model_id in p.config.dense_models:
        rel = f"dense/{_safe(model_id)}.bin"
        build_dense_index(docs, p.gateway, model_id).save(p.path(rel))
        outs.append(rel)
    if not outs:
        atomic_write_text(p.path("dense/none"), "")
        outs.append("dense/none")
    return outs


def _stage_nuggetize(p: Pipeline) -> list[str]:
    cfg = p.config

    def work(q: QuestionRecord):
        try:
            return generate_nuggets(q, p.gateway, cfg.llm_model, cfg.max_nuggets, temperature=cfg.temperature), None
        except NuggetBenchError as exc:
            logger.warning("nuggetization failed for %s: %s", q.question_id, exc)
            return [], {"question_id": q.question_id, "error": str(exc)}

    results = p.gateway.map(work, p.questions())
    write_jsonl(p.path("nuggets.jsonl"), [n.to_json() for ns, _ in results for n in ns])
    write_jsonl(p.path("nuggetize_errors.jsonl"), [e for _, e in results if e])
    return ["nuggets.jsonl", "nuggetize_errors.jsonl"]


def _stage_variants(p: Pipeline) -> list[str]:
    cfg = p.config
    nuggets = load_nuggets(p.path("nuggets.jsonl"))

    def work(q: QuestionRecord):
        variants, unavailable = make_variants(
            q, cfg.variant_kinds, p.gateway, cfg.llm_model, nuggets.get(q.question_id), cfg.temperature
        )
        rows = []
        for kind in cfg.variant_kinds:
            v = variants.get(kind)
            rows.append({
                "question_id": q.question_id,
                "kind": kind,
                "oracle": kind in ("so_answer", "so_nuggets"),
                "available": v is not None,
                "text": v.text if v else "",
            })
        return rows

    rows = [r for rs in p.gateway.map(work, p.questions()) for r in rs]
    write_jsonl(p.path("variants.jsonl"), rows)
    return ["variants.jsonl"]


def _load_variants(p: Pipeline) -> dict[str, dict[str, QueryVariant]]:
    out: dict[str, dict[str, QueryVariant]] = {}
    for row in read_jsonl(p.path("variants.jsonl")):
        out.setdefault(row["question_id"], {})
        if row["available"]:
            out[row["question_id"]][row["kind"]] = QueryVariant(row["kind"], row["text"])
    return out


def _run_path(kind: str, tag: str) -> str:
    return f"runs/{kind}.{_safe(tag)}.trec"


def _stage_pool(p: Pipeline) -> list[str]:
    cfg = p.config
    variants = _load_variants(p)
    stack = p.retrieval_stack()
    outs = []
    fused_by_kind: dict[str, RetrievalRun] = {}
    for kind in cfg.variant_kinds:
        queries = {qid: vs[kind].text for qid, vs in variants.items() if kind in vs}
        runs = stack.run_all(queries)
        for tag, run in runs.items():
            rel = _run_path(kind, tag)
            write_trec(run, p.path(rel))
            outs.append(rel)
        fused_by_kind[kind] = runs["fusion"]
    pools = []
    for qid in sorted(variants):
        per_kind = {k: fused_by_kind[k].results[qid] for k in cfg.variant_kinds if qid in fused_by_kind[k].results}
        if not per_kind:
            logger.warning("%s: no variants available, no pool", qid)
            continue
        pools.append(pool_from_runs(qid, per_kind, cfg.per_variant_k).to_json())
    write_jsonl(p.path("pools.jsonl"), pools)
    return outs + ["pools.jsonl"]


def _stage_judge(p: Pipeline) -> list[str]:
    cfg = p.config
    questions = {q.question_id: q for q in p.questions()}
    nuggets = load_nuggets(p.path("nuggets.jsonl"))
    pools = [JudgmentPool.from_json(r) for r in read_jsonl(p.path("pools.jsonl"))]
    texts = p.corpus_text()

    def work(pool: JudgmentPool):
        q_nuggets = nuggets.get(pool.question_id)
        if not q_nuggets or not pool.entries:
            return []
        return judge_pool(questions[pool.question_id], q_nuggets, pool, texts, p.gateway, cfg.llm_model, temperature=cfg.temperature)

    judgments = [j for js in p.gateway.map(work, pools) for j in js]
    write_jsonl(p.path("judgments.jsonl"), [j.to_json() for j in judgments])
    write_qrels(build_qrels(judgments, set(texts)), p.path("qrels.tsv"))
    return ["judgments.jsonl", "qrels.tsv"]


def _stage_filter(p: Pipeline) -> list[str]:
    questions = p.questions()
    nuggets = load_nuggets(p.path("nuggets.jsonl"))
    qrels = read_qrels(p.path("qrels.tsv"))
    kept, kept_nuggets, kept_qrels, report = filter_dataset(questions, nuggets, qrels)
    write_jsonl(p.path("filtered/questions.jsonl"), [asdict(q) for q in kept])
    write_jsonl(p.path("filtered/nuggets.jsonl"), [n.to_json() for q in kept for n in kept_nuggets.get(q.question_id, [])])
    write_qrels(kept_qrels, p.path("filtered/qrels.tsv"))
    write_json(p.path("filtered/filter_report.json"), report.to_json())
    return ["filtered/questions.jsonl", "filtered/nuggets.jsonl", "filtered/qrels.tsv", "filtered/filter_report.json"]


def _eval_run_paths(p: Pipeline) -> list[tuple[str, str]]:
    """(label, relpath) for every run evaluated: each model on the raw question, then each variant's fusion."""
    cfg = p.config
    tags = (["bm25"] if cfg.use_bm25 else []) + cfg.dense_models + ["fusion"]
    out = []
    if "raw_question" in cfg.variant_kinds:
        out += [(f"raw_question:{t}", _run_path("raw_question", t)) for t in tags]
    out += [(f"{k}:fusion", _run_path(k, "fusion")) for k in cfg.variant_kinds if k != "raw_question"]
    return out


def _stage_evaluate(p: Pipeline) -> list[str]:
    cfg = p.config
    qrels = read_qrels(p.path("filtered/qrels.tsv"))
    nuggets = load_nuggets(p.path("filtered/nuggets.jsonl"))
    keep = {q["question_id"] for q in read_jsonl(p.path("filtered/questions.jsonl"))}
    nugget_ids = {q: [n.nugget_id for n in ns] for q, ns in nuggets.items()}
    results = []
    for label, rel in _eval_run_paths(p):
        run = read_trec(p.path(rel))
        run = RetrievalRun(label, {q: docs for q, docs in run.results.items() if q in keep})
        results.append(evaluate_run(run, qrels, cfg.eval, nugget_ids))
    write_json(p.path("eval/results.json"), {"config_hash": cfg.config_hash, "runs": [r.to_json() for r in results]})
    atomic_write_text(p.path("eval/table.txt"), format_table(results))
    return ["eval/results.json", "eval/table.txt"]


def _filtered_questions(p: Pipeline) -> list[QuestionRecord]:
    return [QuestionRecord(**row) for row in read_jsonl(p.path("filtered/questions.jsonl"))]


def _stage_rag_generate(p: Pipeline) -> list[str]:
    cfg = p.config
    texts = p.corpus_text()
    questions = _filtered_questions(p)
    outs = []
    for setting in cfg.rag_settings:
        run = None
        if setting == "fusion":
            run = read_trec(p.path(_run_path("raw_question", "fusion")))
        elif setting == "so_nuggets_fusion":
            run = read_trec(p.path(_run_path("so_nuggets", "fusion")))

        def work(q: QuestionRecord, run=run):
            docs = []
            if run is not None:
                docs = [(d, texts[d]) for d in run.ranking(q.question_id)[: cfg.rag_context_docs]]
            return generate_rag_answer(q, docs, p.gateway, cfg.generator_model, cfg.rag_max_context_tokens, cfg.temperature)

        answers = p.gateway.map(work, questions)
        rel = f"rag/answers.{setting}.jsonl"
        write_jsonl(p.path(rel), [a.to_json() for a in answers])
        outs.append(rel)
    return outs


def _stage_rag_score(p: Pipeline) -> list[str]:
    cfg = p.config
    questions = {q.question_id: q for q in _filtered_questions(p)}
    nuggets = load_nuggets(p.path("filtered/nuggets.jsonl"))
    outs = []
    scores = {}
    for setting in cfg.rag_settings:
        answers = [RagAnswer.from_json(r) for r in read_jsonl(p.path(f"rag/answers.{setting}.jsonl"))]

        def work(a: RagAnswer):
            return assign_nuggets(a, nuggets[a.question_id], p.gateway, cfg.llm_model, questions.get(a.question_id), cfg.temperature)

        assignments = [x for xs in p.gateway.map(work, answers) for x in xs]
        rel = f"rag/assignments.{setting}.jsonl"
        write_jsonl(p.path(rel), [a.to_json() for a in assignments])
        outs.append(rel)
        scores[setting] = a_strict_from_assignments(assignments).to_json()
    write_json(p.path("rag/scores.json"), {"config_hash": cfg.config_hash, "generator": cfg.generator_model, "settings": scores})
    return outs + ["rag/scores.json"]


def _stage_report(p: Pipeline) -> list[str]:
    manifest = read_json(p.path("corpus.manifest.json"))
    stats = compute_stats(
        _filtered_questions(p),
        load_nuggets(p.path("filtered/nuggets.jsonl")),
        read_qrels(p.path("filtered/qrels.tsv")),
        n_docs=manifest["chunk_count"],
        n_repos=len(manifest["repos"]),
    )
    stats["topic"] = p.config.topic
    stats["filter"] = read_json(p.path("filtered/filter_report.json"))
    stats["config_hash"] = p.config.config_hash
    write_json(p.path("report.json"), stats)
    atomic_write_text(p.path("report.txt"), format_stats([stats]))
    return ["report.json", "report.txt"]


STAGE_LIST = [
    Stage("ingest", (), _stage_ingest, ("repos", "corpus"), uses_sources=True),
    Stage("index", ("ingest",), _stage_index, ("models",)),
    Stage("embed", ("ingest",), _stage_embed, ("models", "gateway")),
    Stage("nuggetize", (), _stage_nuggetize, ("models", "nuggetize", "gateway"), ("nuggetize",), uses_questions=True),
    Stage("variants", ("nuggetize",), _stage_variants, ("models", "pooling", "gateway"), ("sub_questions", "closed_book"), uses_questions=True),
    Stage("pool", ("index", "embed", "variants"), _stage_pool, ("models", "fusion", "pooling", "gateway")),
    Stage("judge", ("ingest", "nuggetize", "pool"), _stage_judge, ("models", "gateway"), ("judge_support",), uses_questions=True),
    Stage("filter", ("nuggetize", "judge"), _stage_filter, (), uses_questions=True),
    Stage("evaluate", ("pool", "filter"), _stage_evaluate, ("evaluation", "models", "pooling")),
    Stage("rag-generate", ("ingest", "pool", "filter"), _stage_rag_generate, ("models", "rag", "gateway"), ("rag_answer",)),
    Stage("rag-score", ("filter", "rag-generate"), _stage_rag_score, ("models", "rag", "gateway"), ("assign_nuggets",)),
    Stage("report", ("ingest", "filter"), _stage_report, ("topic",)),
]
STAGES = {s.name: s for s in STAGE_LIST}
STAGE_ORDER = [s.name for s in STAGE_LIST]


def report(config: PipelineConfig) -> str:
    """Text summary of a completed pipeline (after the filter stage)."""
    p = Pipeline(config)
    if not p.path("report.json").exists():
        p.run_stage("report")
    return p.path("report.txt").read_text(encoding="utf-8")
