"""Acceptance suite: one check per acceptance criterion of the toolkit.

Every test prints a single ``[PASS]`` / ``[FAIL]`` line (shown even under
output capture) and then asserts, so ``pytest tests/test_acceptance.py -v``
doubles as a readable scorecard.
"""

from __future__ import annotations

import math
import os
import random
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import (
    FIXTURE_REPO,
    FIXTURE_TOPIC,
    GOLDEN_TREE_HASH,
    PINNED_DOC,
    PINNED_NUGGET,
    PINNED_QUESTION,
    output_tree_hash,
)
from nuggetbench.corpus import RepoSource, chunk_file, parse_doc_id, walk_repo
from nuggetbench.fusion import FusionConfig, fuse_runs
from nuggetbench.gateway import DenseIndex, search_dense
from nuggetbench.io import read_jsonl
from nuggetbench.lexical import build_lexical_index, search_lexical
from nuggetbench.metrics import alpha_dcg, alpha_ndcg_at_k, coverage_at_k, ideal_ranking, recall_at_k
from nuggetbench.nuggets import NuggetQualityAnnotation, load_nuggets, load_questions, nugget_quality, question_quality
from nuggetbench.pipeline import Pipeline, load_config
from nuggetbench.pooling import filter_dataset, read_qrels
from nuggetbench.rag import LABELS, a_strict
from nuggetbench.report import compute_stats
from nuggetbench.runs import RetrievalRun, rank_scores
from nuggetbench.tokenize import DEFAULT_TOKENIZER
from oracles import (
    a_strict_oracle,
    alpha_ndcg_oracle,
    bm25_oracle,
    coverage_oracle,
    dense_oracle,
    filter_postcondition,
    fusion_oracle,
    plain_ndcg_oracle,
    random_dataset,
    random_instance,
    rankings_agree,
    recall_oracle,
)

# Dataset statistics published for the released topics:
# (#Q, avg nuggets per question, relevant docs per nugget, relevant docs per question)
PUBLISHED_STATS = {
    "langchain": (203, 3.1, 5.7, 10.9),
    "yolo": (57, 3.5, 3.9, 7.4),
    "laravel": (184, 3.0, 3.2, 6.0),
    "angular": (129, 3.2, 4.4, 8.7),
    "godot": (99, 3.3, 2.9, 5.9),
}
RELEASE_ENV = "NUGGETBENCH_RELEASE_DIR"


@pytest.fixture
def verdict(capsys):
    """Print one scorecard line, then assert on it."""

    def _verdict(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return _verdict


def test_metric_oracle_equivalence(verdict):
    rng = random.Random(20240601)
    n, failures = 600, []
    t0 = time.perf_counter()
    for i in range(n):
        j, ranking = random_instance(rng, max_docs=8, max_nuggets=5)
        k = rng.randint(1, 10)
        alpha = rng.choice([0.0, 0.5, 1.0, rng.random()])
        checks = [
            ("alpha_ndcg", alpha_ndcg_at_k(ranking, j, k, alpha), alpha_ndcg_oracle(ranking, j, k, alpha)),
            ("alpha0_vs_ndcg", alpha_ndcg_at_k(ranking, j, k, 0.0), plain_ndcg_oracle(ranking, j, k)),
            ("coverage", coverage_at_k(ranking, j, k), coverage_oracle(ranking, j, k)),
        ]
        if any(j.values()):
            checks.append(("recall", recall_at_k(ranking, j, k), recall_oracle(ranking, j, k)))
        labels = {f"q{x}": [rng.choice(LABELS) for _ in range(rng.randint(1, 5))] for x in range(rng.randint(1, 4))}
        checks.append(("a_strict", a_strict(labels).mean, a_strict_oracle(labels)))
        failures += [(i, name, got, want) for name, got, want in checks if abs(got - want) > 1e-9]
    elapsed = time.perf_counter() - t0
    verdict(
        "metric oracle equivalence",
        not failures and elapsed < 10.0,
        f"{n} instances, {len(failures)} mismatches (|d| > 1e-9), {elapsed:.2f}s (limit 10s)"
        + (f"; first: {failures[0]}" if failures else ""),
    )


def test_alpha_ndcg_analytic_spot_checks(verdict):
    rng = random.Random(7)
    problems = []
    for _ in range(300):
        j, _ = random_instance(rng)
        k = rng.randint(1, 10)
        ideal = ideal_ranking(j, k, 0.5)
        if ideal and abs(alpha_ndcg_at_k(ideal, j, k, 0.5) - 1.0) > 1e-12:
            problems.append(("perfect-greedy", j))
    for ranking in (["a", "b"], [], ["x"]):
        if alpha_ndcg_at_k(ranking, {"n1": set(), "n2": set()}, 10) != 0.0:
            problems.append(("idcg-zero", ranking))
    hand = {"n": {"a", "b"}}
    closed_form = 1 + 0.5 / math.log2(3)
    if abs(alpha_dcg(["a", "b"], hand, 10, 0.5) - closed_form) > 1e-12:
        problems.append(("hand-dcg", alpha_dcg(["a", "b"], hand, 10, 0.5)))
    if abs(alpha_ndcg_at_k(["a", "b"], hand, 10, 0.5) - 1.0) > 1e-12:
        problems.append(("hand-ndcg", alpha_ndcg_at_k(["a", "b"], hand, 10, 0.5)))
    verdict(
        "alpha-nDCG analytic spot-checks",
        not problems,
        f"300 greedy-ideal rankings = 1.0, IDCG=0 -> 0, two-doc hand case DCG = 1 + 0.5/log2(3) = {closed_form:.12f}"
        + (f"; problems: {problems[:2]}" if problems else ""),
    )


def test_chunker_contract(verdict):
    import json

    t0 = time.perf_counter()
    expected = json.loads((FIXTURE_TOPIC / "expected_manifest.json").read_text())
    records = walk_repo(RepoSource("langchain", str(FIXTURE_REPO)))
    problems = []
    skipped = [{"path": r.rel_path, "reason": r.skip_reason} for r in records if not r.indexable]
    if skipped != expected["skipped"]:
        problems.append(f"skip decisions {skipped}")
    n_chunks, max_seen, multi = 0, 0, 0
    for rec in records:
        if not rec.indexable:
            continue
        text = (FIXTURE_REPO / rec.rel_path).read_text(encoding="utf-8")
        chunks = chunk_file(rec, text, 2048)
        n_chunks += len(chunks)
        multi += len(chunks) > 1
        if "".join(c.text for c in chunks) != text:
            problems.append(f"reconstruction {rec.rel_path}")
        for c in chunks:
            max_seen = max(max_seen, DEFAULT_TOKENIZER.count(c.text))
            if DEFAULT_TOKENIZER.count(c.text) > 2048:
                problems.append(f"oversize {c.doc_id}")
            if parse_doc_id(c.doc_id) != ("langchain", rec.rel_path, c.start, c.end):
                problems.append(f"doc_id {c.doc_id}")
    elapsed = time.perf_counter() - t0
    reasons = {s["reason"] for s in skipped}
    fixture_ok = len(records) >= 30 and multi >= 1 and {"extension", "invalid-utf8"} <= reasons
    verdict(
        "chunker contract",
        not problems and fixture_ok and elapsed < 5.0,
        f"{len(records)} files, {len(skipped)} skipped, {n_chunks} chunks (max {max_seen} tokens, "
        f"{multi} files split), {elapsed:.2f}s (limit 5s)" + (f"; problems: {problems[:3]}" if problems else ""),
    )


def test_retrieval_oracles(verdict):
    t0 = time.perf_counter()
    vocab = ["alpha", "beta", "gamma", "delta", "chroma", "embed", "x1", "foo_bar", "the"]
    rng = random.Random(99)
    bm25_bad = []
    for i in range(120):
        docs = [(f"d{j:02d}", " ".join(rng.choice(vocab) for _ in range(rng.randint(0, 15))))
                for j in range(rng.randint(1, 15))]
        index = build_lexical_index(docs)
        query = " ".join(rng.choice(vocab + ["zzz"]) for _ in range(rng.randint(1, 4)))
        k = rng.randint(1, 10)
        got = [(h.doc_id, h.score) for h in search_lexical(index, query, k)]
        err = rankings_agree(got, bm25_oracle(docs, query, len(docs)), k)
        if err:
            bm25_bad.append((i, err))
    nrng = np.random.default_rng(99)
    dense_bad = []
    for i in range(120):
        n, d = int(nrng.integers(1, 1001)), int(nrng.integers(2, 33))
        m = nrng.standard_normal((n, d))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        if n > 3:
            m[1] = m[0]  # an exact tie
        ids = [f"doc{j:04d}" for j in nrng.permutation(n)]
        q = nrng.standard_normal(d)
        k = int(nrng.integers(1, min(n, 100) + 1))
        got = [(h.doc_id, h.score) for h in search_dense(DenseIndex(m, ids, "m"), q, k)]
        err = rankings_agree(got, dense_oracle(m.tolist(), ids, q.tolist(), n), k)
        if err:
            dense_bad.append((i, err))
    elapsed = time.perf_counter() - t0
    verdict(
        "retrieval oracles",
        not bm25_bad and not dense_bad and elapsed < 30.0,
        f"BM25 120/120 vs brute force: {120 - len(bm25_bad)} agree; dense (<=1000 docs) "
        f"{120 - len(dense_bad)}/120 agree; {elapsed:.2f}s (limit 30s)"
        + (f"; first: {(bm25_bad + dense_bad)[0]}" if bm25_bad or dense_bad else ""),
    )


def test_fusion_properties(verdict):
    rng = random.Random(5)
    problems = []
    n = 250
    for i in range(n):
        m = rng.randint(1, 4)
        lists = [{f"d{rng.randint(0, 25)}": round(rng.uniform(-10, 10), rng.choice([0, 2, 8]))
                  for _ in range(rng.randint(0, 20))} for _ in range(m)]
        runs = [RetrievalRun(f"r{x}", {"q": rank_scores(s)}) for x, s in enumerate(lists)]
        depth = rng.randint(1, 30)
        out_depth = rng.randint(1, depth)
        fused = fuse_runs(runs, FusionConfig(depth, out_depth)).results["q"]
        if any(not (0.0 <= d.score <= m) for d in fused):
            problems.append((i, "bounds"))
        want = fusion_oracle(lists, depth, out_depth)
        if [d.doc_id for d in fused] != [d for d, _ in want] or any(
            abs(a.score - b) > 1e-12 for a, (_, b) in zip(fused, want)
        ):
            problems.append((i, "dict-sum oracle"))
        single = fuse_runs(runs[:1])
        if fuse_runs([single]).results != single.results:
            problems.append((i, "idempotence"))
        one = {d.doc_id: d.score for d in single.results["q"]}
        two = {d.doc_id: d.score for d in fuse_runs([runs[0], runs[0]]).results["q"]}
        if two != {k: 2 * v for k, v in one.items()}:
            problems.append((i, "doubling"))
    verdict(
        "fusion properties",
        not problems,
        f"{n} instances: bounds [0, m], single-run idempotence, identical-run doubling, dict-sum oracle"
        + (f"; problems: {problems[:3]}" if problems else ""),
    )


def _run_fixture(dst: Path) -> Pipeline:
    shutil.copytree(FIXTURE_TOPIC, dst, ignore=shutil.ignore_patterns("out", "__pycache__"))
    pipe = Pipeline(load_config(dst / "topic.toml"))
    pipe.run_all()
    return pipe


def test_filter_postcondition_and_idempotence(verdict, tmp_path):
    rng = random.Random(31)
    problems = []
    for i in range(300):
        questions, nuggets, qrels = random_dataset(rng)
        kept, kn, kq, _ = filter_dataset(questions, nuggets, qrels)
        err = filter_postcondition(kept, kn, kq)
        if err:
            problems.append((i, err))
        if filter_dataset(kept, kn, kq)[:3] != (kept, kn, kq):
            problems.append((i, "not idempotent"))
    pipe = _run_fixture(tmp_path / "topic")
    out = pipe.out / "filtered"
    kept, kn, kq = load_questions(out / "questions.jsonl"), load_nuggets(out / "nuggets.jsonl"), read_qrels(out / "qrels.tsv")
    err = filter_postcondition(kept, kn, kq)
    if err:
        problems.append(("fixture", err))
    if filter_dataset(kept, kn, kq)[:3] != (kept, kn, kq):
        problems.append(("fixture", "not idempotent"))
    verdict(
        "filter postcondition + idempotence",
        not problems,
        f"300 random judgment sets and the fixture topic ({len(kept)} questions kept)"
        + (f"; problems: {problems[:3]}" if problems else ""),
    )


def test_end_to_end_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    first = _run_fixture(tmp_path / "a")
    second = _run_fixture(tmp_path / "b")
    elapsed = time.perf_counter() - t0
    h1, h2 = output_tree_hash(first.out), output_tree_hash(second.out)
    nuggets = load_nuggets(first.out / "nuggets.jsonl").get(PINNED_QUESTION, [])
    target = next((n for n in nuggets if n.text == PINNED_NUGGET), None)
    support_rows = [
        j for j in read_jsonl(first.out / "judgments.jsonl")
        if target is not None and j["nugget_id"] == target.nugget_id and j["doc_id"] == PINNED_DOC and j["supported"]
    ]
    ok = h1 == h2 == GOLDEN_TREE_HASH and target is not None and len(support_rows) == 1 and elapsed < 60.0
    verdict(
        "end-to-end determinism",
        ok,
        f"tree {h1[:16]} (second run {h2[:16]}, golden {GOLDEN_TREE_HASH[:16]}); "
        f"nugget {'found' if target else 'MISSING'} as {target.nugget_id if target else '-'}; "
        f"support rows to {PINNED_DOC}: {len(support_rows)}; two full runs {elapsed:.2f}s (limit 60s)",
    )


def test_nugget_quality_formulas(verdict):
    problems = []
    p, r, g, w = question_quality(NuggetQualityAnnotation("q", [False] * 5, [True] + [False] * 4, 0))
    if (p, r) != (0.8, 1.0) or w:
        problems.append(("worked example", p, r, w))
    report = nugget_quality([NuggetQualityAnnotation("q", [False] * 3, [True] * 3, 0)])
    if report.recall != 0.0 or not report.warnings:
        problems.append(("all redundant", report.recall, report.warnings))
    report = nugget_quality([NuggetQualityAnnotation("q", [True, False, False, False], [False] * 4, 4)])
    if (report.precision, report.recall, report.groundedness) != (1.0, 0.5, 0.75):
        problems.append(("missing + hallucinated", report.precision, report.recall, report.groundedness))
    verdict(
        "nugget quality formulas",
        not problems,
        "|N|=5, sum(B)=1, C=0 -> P=0.8, R=1.0; all redundant -> R=0 with warning; C=4 -> R=0.5, one A -> G=0.75"
        + (f"; problems: {problems}" if problems else ""),
    )


def test_release_replication(verdict, capsys):
    root = os.environ.get(RELEASE_ENV)
    if not root or not Path(root).is_dir():
        with capsys.disabled():
            print(f"\n[SKIP] release replication: set {RELEASE_ENV} to a directory of per-topic released files")
        pytest.skip(f"{RELEASE_ENV} not set")
    checked, problems = [], []
    for topic, (n_q, npq, rel_n, rel_q) in PUBLISHED_STATS.items():
        d = Path(root) / topic
        if not (d / "questions.jsonl").is_file():
            continue
        stats = compute_stats(load_questions(d / "questions.jsonl"), load_nuggets(d / "nuggets.jsonl"),
                              read_qrels(d / "qrels.tsv"), n_docs=0, n_repos=0)
        got = (stats["n_questions"], round(stats["avg_nuggets_per_question"], 1),
               round(stats["rel_docs_per_nugget"], 1), round(stats["rel_docs_per_question"], 1))
        checked.append(topic)
        if got != (n_q, npq, rel_n, rel_q):
            problems.append((topic, got, (n_q, npq, rel_n, rel_q)))
    if not checked:
        pytest.skip(f"no known topic directories under {root}")
    verdict(
        "release replication",
        not problems,
        f"topics {checked} match published #Q, N/Q, Rel/N, Rel/Q" if not problems else f"mismatches {problems}",
    )
