import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nuggetbench.errors import ContractError
from nuggetbench.fusion import FusionConfig, fuse, fuse_runs, normalize_list
from nuggetbench.runs import RetrievalRun, ScoredDoc, rank_scores
from oracles import fusion_oracle

score_maps = st.dictionaries(st.sampled_from([f"d{i}" for i in range(15)]),
                             st.floats(-100, 100, allow_nan=False), min_size=0, max_size=15)


def run_of(tag, per_q):
    return RetrievalRun(tag, {q: rank_scores(s) for q, s in per_q.items()})


def test_normalize_list_min_max_and_constant():
    docs = rank_scores({"a": 10.0, "b": 5.0, "c": 0.0})
    assert [d.score for d in normalize_list(docs)] == [1.0, 0.5, 0.0]
    assert [d.score for d in normalize_list(rank_scores({"a": 3.0, "b": 3.0}))] == [1.0, 1.0]
    assert normalize_list([]) == []


def test_depth_truncates_before_normalising():
    docs = rank_scores({"a": 10.0, "b": 8.0, "c": -1000.0})
    assert [d.score for d in normalize_list(docs, depth=2)] == [1.0, 0.0]


def test_absent_doc_contributes_zero():
    a = run_of("a", {"q": {"x": 2.0, "y": 1.0}})
    b = run_of("b", {"q": {"y": 4.0, "z": 0.0}})
    fused = fuse_runs([a, b])
    assert {d.doc_id: d.score for d in fused.results["q"]} == {"x": 1.0, "y": 1.0, "z": 0.0}
    assert [d.doc_id for d in fused.results["q"]] == ["x", "y", "z"]
    assert fused.run_tag == "fusion(a+b)"


def test_question_mismatch_and_empty():
    with pytest.raises(ContractError):
        fuse([])
    with pytest.raises(ContractError):
        fuse_runs([run_of("a", {"q1": {"x": 1.0}}), run_of("b", {"q2": {"x": 1.0}})])
    with pytest.raises(ContractError):
        FusionConfig(depth=10, output_depth=20)


@settings(max_examples=100, deadline=None)
@given(st.lists(score_maps, min_size=1, max_size=4))
def test_bounds(lists):
    runs = [run_of(f"r{i}", {"q": s}) for i, s in enumerate(lists)]
    for d in fuse_runs(runs).results["q"]:
        assert 0.0 <= d.score <= len(runs) + 1e-12


@settings(max_examples=100, deadline=None)
@given(score_maps)
def test_single_run_idempotent(scores):
    run = run_of("r", {"q": scores})
    once = fuse_runs([run])
    twice = fuse_runs([once])
    assert once.results == twice.results
    # normalisation is monotone: the original order never inverts
    fused = {d.doc_id: d.score for d in once.results["q"]}
    original = [fused[d.doc_id] for d in run.results["q"]]
    assert original == sorted(original, reverse=True)


@settings(max_examples=100, deadline=None)
@given(score_maps)
def test_identical_runs_double(scores):
    run = run_of("r", {"q": scores})
    single = {d.doc_id: d.score for d in fuse_runs([run]).results["q"]}
    double = {d.doc_id: d.score for d in fuse_runs([run, run]).results["q"]}
    assert double == {k: 2 * v for k, v in single.items()}


@pytest.mark.parametrize("seed", range(100))
def test_matches_dict_sum_oracle(seed):
    rng = random.Random(seed)
    m = rng.randint(1, 4)
    depth = rng.randint(1, 12)
    out_depth = rng.randint(1, depth)
    lists = []
    for _ in range(m):
        n = rng.randint(0, 15)
        lists.append({f"d{rng.randint(0, 20)}": round(rng.uniform(-5, 5), rng.choice([0, 1, 6])) for _ in range(n)})
    runs = [run_of(f"r{i}", {"q": s}) for i, s in enumerate(lists)]
    got = [(d.doc_id, d.score) for d in fuse_runs(runs, FusionConfig(depth, out_depth)).results["q"]]
    want = fusion_oracle(lists, depth, out_depth)
    assert [d for d, _ in got] == [d for d, _ in want]
    assert all(abs(a - b) <= 1e-12 for (_, a), (_, b) in zip(got, want))


def test_ranks_are_contiguous():
    fused = fuse_runs([run_of("a", {"q": {"x": 1, "y": 2, "z": 3}})])
    assert [d.rank for d in fused.results["q"]] == [1, 2, 3]
    assert isinstance(fused.results["q"][0], ScoredDoc)
