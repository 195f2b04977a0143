"""Repository walking, file filtering and line-snapped chunking.

Every chunk is addressed as ``{repo}/{rel_path}_{start}_{end}`` where start
and end are character offsets into the decoded file text, e.g.
``langchain/templates/intel-rag-xeon/ingest.py_0_1486``.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path, PurePosixPath
from typing import Iterable, Iterator, Sequence

from .errors import ConfigurationError, EmptyCorpusError
from .io import atomic_write_text, dumps_line, read_jsonl, sha256_text, write_json
from .tokenize import DEFAULT_TOKENIZER, Tokenizer

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 2048

IMAGE_EXTENSIONS = frozenset(
    ".png .jpg .jpeg .gif .bmp .tif .tiff .ico .webp .svg .heic .psd".split()
)
VIDEO_EXTENSIONS = frozenset(".mp4 .avi .mov .mkv .webm .wmv .flv .m4v .mpg .mpeg".split())
AUDIO_EXTENSIONS = frozenset(".mp3 .wav .flac .ogg .aac .m4a .wma .opus .aiff".split())
DEFAULT_SKIP_EXTENSIONS = IMAGE_EXTENSIONS | VIDEO_EXTENSIONS | AUDIO_EXTENSIONS | {".bin", ".csv"}
DEFAULT_EXCLUDE_DIRS = frozenset({".git"})

_DOC_ID_RE = re.compile(r"^(?P<repo>[^/]+)/(?P<path>.+)_(?P<start>\d+)_(?P<end>\d+)$")


@dataclass(frozen=True)
class RepoSource:
    name: str
    root_path: str
    branch_note: str = ""

    def __post_init__(self):
        if not self.name or "/" in self.name or "\\" in self.name:
            raise ConfigurationError(f"invalid repository name: {self.name!r}")


@dataclass(frozen=True)
class FileRecord:
    repo: str
    rel_path: str
    byte_len: int
    indexable: bool = True
    skip_reason: str = ""


@dataclass(frozen=True)
class DocumentChunk:
    doc_id: str
    text: str
    repo: str
    path: str
    start: int
    end: int
    token_count: int

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "text": self.text,
            "repo": self.repo,
            "path": self.path,
            "start": self.start,
            "end": self.end,
            "token_count": self.token_count,
        }


@dataclass
class CorpusManifest:
    corpus_id: str
    repos: list[RepoSource]
    chunk_count: int
    file_count: int
    skipped_count: int
    tokenizer_id: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    skipped: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        d = asdict(self)
        d["repos"] = [asdict(r) for r in self.repos]
        return d


def make_doc_id(repo: str, rel_path: str, start: int, end: int) -> str:
    return f"{repo}/{rel_path}_{start}_{end}"


def parse_doc_id(doc_id: str) -> tuple[str, str, int, int]:
    """Invert :func:`make_doc_id` into ``(repo, rel_path, start, end)``."""
    m = _DOC_ID_RE.match(doc_id)
    if not m:
        raise ValueError(f"not a chunk identifier: {doc_id!r}")
    return m["repo"], m["path"], int(m["start"]), int(m["end"])


def is_valid_utf8(data: bytes) -> bool:
    try:
        data.decode("utf-8")
    except UnicodeDecodeError:
        return False
    return True


def should_index_file(
    record: FileRecord,
    content: bytes | None = None,
    skip_extensions: Iterable[str] | None = None,
) -> bool:
    skip = DEFAULT_SKIP_EXTENSIONS if skip_extensions is None else frozenset(
        e.lower() for e in skip_extensions
    )
    if PurePosixPath(record.rel_path).suffix.lower() in skip:
        return False
    if content is not None and not is_valid_utf8(content):
        return False
    return True


def walk_repo(
    source: RepoSource,
    skip_extensions: Iterable[str] | None = None,
    exclude_dirs: Iterable[str] = DEFAULT_EXCLUDE_DIRS,
) -> list[FileRecord]:
    """List every regular file under the repository root, sorted by relative path.

    Symlinks (to files or directories) are never followed. Files that cannot be
    read are reported with ``indexable=False`` rather than aborting the walk.
    """
    root = Path(source.root_path)
    if not root.is_dir() or not os.access(root, os.R_OK | os.X_OK):
        raise ConfigurationError(f"repository root not readable: {root}")
    exclude = set(exclude_dirs)
    skip = None if skip_extensions is None else list(skip_extensions)

    records = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        dirnames[:] = [d for d in dirnames if d not in exclude]
        for fname in filenames:
            full = os.path.join(dirpath, fname)
            if os.path.islink(full) or not os.path.isfile(full):
                continue
            rel = Path(full).relative_to(root).as_posix()
            try:
                with open(full, "rb") as f:
                    data = f.read()
            except OSError as exc:
                logger.warning("skipping unreadable file %s/%s: %s", source.name, rel, exc)
                records.append(FileRecord(source.name, rel, 0, False, "unreadable"))
                continue
            probe = FileRecord(source.name, rel, len(data))
            if not should_index_file(probe, None, skip):
                records.append(FileRecord(source.name, rel, len(data), False, "extension"))
            elif not is_valid_utf8(data):
                records.append(FileRecord(source.name, rel, len(data), False, "invalid-utf8"))
            else:
                records.append(probe)
    records.sort(key=lambda r: r.rel_path)
    return records


def _cut_points(text: str, max_tokens: int, tokenizer: Tokenizer) -> Iterator[tuple[int, int]]:
    spans = tokenizer.spans(text)
    n = len(text)
    start = 0
    tok = 0  # index of first token starting at or after `start`
    while start < n:
        while tok < len(spans) and spans[tok][0] < start:
            tok += 1
        budget = max_tokens
        while True:
            nxt = tok + budget
            if nxt >= len(spans):
                end = n
            else:
                limit = spans[nxt][0]
                nl = text.rfind("\n", start, limit)
                end = nl + 1 if nl >= start else limit
                if end <= start:
                    # a single token wider than the window: emit it alone
                    end = spans[tok][1] if tok < len(spans) else n
            if tokenizer.count(text[start:end]) <= max_tokens or budget == 1:
                break
            budget = max(1, budget - (tokenizer.count(text[start:end]) - max_tokens))
        yield start, end
        start = end


def chunk_file(
    record: FileRecord,
    text: str,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> list[DocumentChunk]:
    """Split ``text`` into contiguous chunks of at most ``max_tokens`` tokens.

    A chunk ends just after the last newline that keeps it inside the budget;
    only a single line longer than the budget is cut mid-line. Concatenating
    the chunk texts gives back ``text`` exactly.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    if not record.indexable:
        raise ValueError(f"{record.repo}/{record.rel_path} is not indexable")
    chunks = []
    for start, end in _cut_points(text, max_tokens, tokenizer):
        piece = text[start:end]
        chunks.append(
            DocumentChunk(
                doc_id=make_doc_id(record.repo, record.rel_path, start, end),
                text=piece,
                repo=record.repo,
                path=record.rel_path,
                start=start,
                end=end,
                token_count=tokenizer.count(piece),
            )
        )
    return chunks


def manifest_path_for(corpus_path: str | os.PathLike) -> Path:
    p = Path(corpus_path)
    return p.with_name(p.stem + ".manifest.json")


def build_corpus(
    sources: Sequence[RepoSource],
    out_path: str | os.PathLike,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    skip_extensions: Iterable[str] | None = None,
) -> CorpusManifest:
    """Chunk every indexable file of every source into one JSONL corpus.

    Writes ``out_path`` and a ``<stem>.manifest.json`` sidecar next to it.
    """
    if not sources:
        raise ConfigurationError("at least one repository is required")
    names = [s.name for s in sources]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigurationError(f"duplicate repository names: {', '.join(dupes)}")

    lines = []
    file_count = 0
    skipped = []
    for source in sources:
        root = Path(source.root_path)
        for record in walk_repo(source, skip_extensions):
            if not record.indexable:
                skipped.append({"repo": record.repo, "path": record.rel_path, "reason": record.skip_reason})
                continue
            file_count += 1
            text = (root / record.rel_path).read_bytes().decode("utf-8")
            for chunk in chunk_file(record, text, max_tokens, tokenizer):
                lines.append(dumps_line(chunk.to_json()) + "\n")

    if file_count == 0:
        raise EmptyCorpusError("no indexable files found in any repository")
    payload = "".join(lines)
    atomic_write_text(out_path, payload)
    manifest = CorpusManifest(
        corpus_id="corpus-" + sha256_text(payload)[:16],
        repos=list(sources),
        chunk_count=len(lines),
        file_count=file_count,
        skipped_count=len(skipped),
        tokenizer_id=tokenizer.tokenizer_id,
        max_tokens=max_tokens,
        skipped=skipped,
    )
    write_json(manifest_path_for(out_path), manifest.to_json())
    logger.info("corpus %s: %d chunks from %d files (%d skipped)",
                manifest.corpus_id, manifest.chunk_count, file_count, len(skipped))
    return manifest


def load_corpus(path: str | os.PathLike) -> list[DocumentChunk]:
    return [DocumentChunk(**row) for row in read_jsonl(path)]
