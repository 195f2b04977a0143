"""BM25 plus dense retrievers behind one call, fused into the hybrid run."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .fusion import FusionConfig, fuse_runs
from .gateway import DenseIndex, Gateway, search_dense
from .lexical import InvertedIndex, search_lexical
from .runs import RetrievalRun, ScoredDoc

LEXICAL_TAG = "bm25"


@dataclass
class RetrievalStack:
    lexical: InvertedIndex | None
    dense: dict[str, DenseIndex] = field(default_factory=dict)
    gateway: Gateway | None = None
    fusion: FusionConfig = FusionConfig()

    @property
    def tags(self) -> list[str]:
        return ([LEXICAL_TAG] if self.lexical is not None else []) + list(self.dense)

    def run_all(self, queries: Mapping[str, str]) -> dict[str, RetrievalRun]:
        """One run per model plus ``fusion``, each ``fusion.depth`` deep, for every query."""
        qids = sorted(queries)
        runs: dict[str, RetrievalRun] = {}
        if self.lexical is not None:
            run = RetrievalRun(LEXICAL_TAG)
            for qid in qids:
                run.results[qid] = search_lexical(self.lexical, queries[qid], self.fusion.depth)
            runs[LEXICAL_TAG] = run
        for model_id, index in self.dense.items():
            run = RetrievalRun(model_id)
            texts = [queries[q] if queries[q].strip() else q for q in qids]
            vecs = self.gateway.embed_texts(texts, model_id, kind="query") if qids else []
            for qid, vec in zip(qids, vecs):
                run.results[qid] = search_dense(index, vec, self.fusion.depth)
            runs[model_id] = run
        if runs:
            runs["fusion"] = fuse_runs(list(runs.values()), self.fusion)
        return runs

    def retrieve(self, text: str) -> list[ScoredDoc]:
        return self.run_all({"q": text}).get("fusion", RetrievalRun("fusion")).results.get("q", [])
