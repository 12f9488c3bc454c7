"""Corpus loading, token accounting, grouping, and JSONL persistence.

Every mixture weight downstream is defined over the per-group token
proportions computed here, so group name order is fixed (lexicographic)
and proportions always sum to one. Document text is not held resident:
JSONL-backed corpora re-read it from disk on demand.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError

Tokenizer = Callable[[str], int]

GROUPINGS = ("source", "topic", "topic_source")

# Separator used to render a (topic, source) cell as a single group label.
CELL_SEP = "|"

DEFAULT_FIELDS = {
    "text": "text",
    "source": "source",
    "id": "id",
    "topic": "topic",
    "quality": "quality",
}


def tokenize_count(text: str) -> int:
    """Token count under the default byte-length proxy tokenizer.

    Splits on Unicode whitespace and charges ceil(utf8_bytes / 4) per
    piece. Deterministic and dependency-free; only token ratios matter to
    the mixing math, so an exact subword tokenizer can be substituted via
    the ``Tokenizer`` callable wherever one is accepted.
    """
    return sum((len(piece.encode("utf-8")) + 3) // 4 for piece in text.split())


@dataclass(frozen=True)
class Document:
    """One corpus record."""

    id: str
    text: str
    source: str
    token_count: int
    topic: str | None = None
    quality: float | None = None


def cell_label(topic: str, source: str) -> str:
    """Render a (topic, source) cell as a single group label."""
    return f"{topic}{CELL_SEP}{source}"


def split_cell(label: str) -> tuple[str, str]:
    topic, sep, source = label.partition(CELL_SEP)
    if not sep:
        raise DataError(f"not a topic{CELL_SEP}source cell label: {label!r}")
    return topic, source


class Corpus:
    """An ordered, immutable collection of documents.

    Only (id, source, token_count, topic, quality) stays resident; text is
    fetched lazily from the backing store (byte offsets into the source
    file for JSONL corpora, an in-memory list otherwise). Safe to share
    across threads after construction.
    """

    def __init__(
        self,
        ids: Sequence[str],
        sources: Sequence[str],
        token_counts: Sequence[int],
        topics: Sequence[str | None],
        qualities: Sequence[float | None],
        text_fetch: Callable[[int], str],
    ):
        self._ids = tuple(ids)
        self._sources = tuple(sources)
        self._token_counts = tuple(int(t) for t in token_counts)
        self._topics = tuple(topics)
        self._qualities = tuple(qualities)
        self._text_fetch = text_fetch
        self._index: dict[str, int] = {}
        for i, doc_id in enumerate(self._ids):
            if doc_id in self._index:
                raise DataError(f"duplicate document id: {doc_id!r}")
            self._index[doc_id] = i
        for i, (source, count) in enumerate(zip(self._sources, self._token_counts)):
            if not source:
                raise DataError(f"document {self._ids[i]!r}: empty source")
            if count < 0:
                raise DataError(f"document {self._ids[i]!r}: negative token count")

    @classmethod
    def from_documents(cls, docs: Iterable[Document]) -> "Corpus":
        docs = list(docs)
        texts = [d.text for d in docs]
        return cls(
            ids=[d.id for d in docs],
            sources=[d.source for d in docs],
            token_counts=[d.token_count for d in docs],
            topics=[d.topic for d in docs],
            qualities=[d.quality for d in docs],
            text_fetch=texts.__getitem__,
        )

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def sources(self) -> tuple[str, ...]:
        return self._sources

    @property
    def token_counts(self) -> tuple[int, ...]:
        return self._token_counts

    @property
    def topics(self) -> tuple[str | None, ...]:
        return self._topics

    @property
    def qualities(self) -> tuple[float | None, ...]:
        return self._qualities

    def index_of(self, doc_id: str) -> int:
        try:
            return self._index[doc_id]
        except KeyError:
            raise DataError(f"unknown document id: {doc_id!r}") from None

    def text(self, i: int) -> str:
        return self._text_fetch(i)

    def doc(self, i: int) -> Document:
        return Document(
            id=self._ids[i],
            text=self._text_fetch(i),
            source=self._sources[i],
            token_count=self._token_counts[i],
            topic=self._topics[i],
            quality=self._qualities[i],
        )

    def get(self, doc_id: str) -> Document:
        return self.doc(self.index_of(doc_id))

    def __iter__(self) -> Iterator[Document]:
        for i in range(len(self)):
            yield self.doc(i)

    def with_topics(self, topics: Sequence[str] | Mapping[str, str]) -> "Corpus":
        """New corpus with topic labels replaced; text store is shared."""
        if isinstance(topics, Mapping):
            labels = [topics.get(doc_id, self._topics[i]) for i, doc_id in enumerate(self._ids)]
        else:
            if len(topics) != len(self):
                raise DataError("topic list length does not match corpus size")
            labels = list(topics)
        return Corpus(
            self._ids, self._sources, self._token_counts, labels, self._qualities, self._text_fetch
        )


def _line_fetcher(path: Path, offsets: list[int], text_field: str) -> Callable[[int], str]:
    def fetch(i: int) -> str:
        with open(path, "rb") as fh:
            fh.seek(offsets[i])
            line = fh.readline()
        return json.loads(line.decode("utf-8"))[text_field]

    return fetch


def load_jsonl(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    tokenizer: Tokenizer = tokenize_count,
) -> Corpus:
    """Load a JSONL corpus (one UTF-8 JSON object per line).

    ``schema`` maps the logical fields (text, source, id, topic, quality)
    to the file's key names; unmapped fields use the defaults. Missing id
    fields are synthesized as "<filename>:<line>" with 0-based lines.
    token_count is always recomputed with ``tokenizer``.
    """
    path = Path(path)
    fields = dict(DEFAULT_FIELDS)
    if schema:
        unknown = set(schema) - set(DEFAULT_FIELDS)
        if unknown:
            raise DataError(f"unknown schema fields: {sorted(unknown)}")
        fields.update(schema)

    ids: list[str] = []
    sources: list[str] = []
    token_counts: list[int] = []
    topics: list[str | None] = []
    qualities: list[float | None] = []
    offsets: list[int] = []

    with open(path, "rb") as fh:
        pos = fh.tell()
        for lineno, raw in enumerate(iter(fh.readline, b"")):
            line_start = pos
            pos = fh.tell()
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw.decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                raise DataError(f"line {lineno}: parse failure: {exc}") from exc
            if not isinstance(obj, dict):
                raise DataError(f"line {lineno}: parse failure: not a JSON object")
            for logical in ("text", "source"):
                if fields[logical] not in obj:
                    raise DataError(f"line {lineno}: missing field {fields[logical]!r}")
            text = obj[fields["text"]]
            doc_id = obj.get(fields["id"])
            if doc_id is None:
                doc_id = f"{path.name}:{lineno}"
            ids.append(str(doc_id))
            sources.append(str(obj[fields["source"]]))
            token_counts.append(tokenizer(text))
            topic = obj.get(fields["topic"])
            topics.append(None if topic is None else str(topic))
            quality = obj.get(fields["quality"])
            qualities.append(None if quality is None else float(quality))
            offsets.append(line_start)

    return Corpus(ids, sources, token_counts, topics, qualities,
                  _line_fetcher(path, offsets, fields["text"]))


def write_jsonl(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus as JSONL; topic and quality keys appear when set."""
    from .ioutil import atomic_open

    with atomic_open(path, "w") as fh:
        for doc in corpus:
            obj: dict = {"id": doc.id, "text": doc.text, "source": doc.source}
            if doc.topic is not None:
                obj["topic"] = doc.topic
            if doc.quality is not None:
                obj["quality"] = doc.quality
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class GroupStats:
    """Per-group document/token counts and token proportions.

    names are unique and in a fixed order; proportions[i] equals
    token_counts[i] / sum(token_counts) within 1e-12.
    """

    grouping: str
    names: tuple[str, ...]
    doc_counts: tuple[int, ...]
    token_counts: tuple[int, ...]
    proportions: tuple[float, ...]

    def __post_init__(self):
        n = len(self.names)
        if not (len(self.doc_counts) == len(self.token_counts) == len(self.proportions) == n):
            raise DataError("group stats field lengths disagree")
        if len(set(self.names)) != n:
            raise DataError("group names are not unique")
        if any(c < 0 for c in self.doc_counts) or any(c < 0 for c in self.token_counts):
            raise DataError("negative group counts")
        total = sum(self.token_counts)
        if total <= 0:
            raise DataError("corpus has zero total tokens")
        for name, count, prop in zip(self.names, self.token_counts, self.proportions):
            if abs(prop - count / total) > 1e-12:
                raise DataError(f"group {name!r}: proportion inconsistent with token counts")

    @classmethod
    def from_counts(
        cls,
        grouping: str,
        names: Sequence[str],
        doc_counts: Sequence[int],
        token_counts: Sequence[int],
    ) -> "GroupStats":
        total = sum(token_counts)
        if total <= 0:
            raise DataError("corpus has zero total tokens")
        return cls(
            grouping=grouping,
            names=tuple(names),
            doc_counts=tuple(int(c) for c in doc_counts),
            token_counts=tuple(int(c) for c in token_counts),
            proportions=tuple(c / total for c in token_counts),
        )

    def to_json(self) -> dict:
        return {
            "grouping": self.grouping,
            "names": list(self.names),
            "doc_counts": list(self.doc_counts),
            "token_counts": list(self.token_counts),
            "proportions": list(self.proportions),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "GroupStats":
        return cls(
            grouping=obj["grouping"],
            names=tuple(obj["names"]),
            doc_counts=tuple(obj["doc_counts"]),
            token_counts=tuple(obj["token_counts"]),
            proportions=tuple(obj["proportions"]),
        )


def group_stats(corpus: Corpus, grouping: str) -> GroupStats:
    """Aggregate doc/token counts per group; names sorted lexicographically."""
    if grouping not in GROUPINGS:
        raise DataError(f"unknown grouping {grouping!r}; expected one of {GROUPINGS}")

    if grouping in ("topic", "topic_source"):
        missing = [doc_id for doc_id, topic in zip(corpus.ids, corpus.topics) if topic is None]
        if missing:
            shown = ", ".join(missing[:10])
            more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
            raise DataError(f"documents without topic label: {shown}{more}")

    doc_counts: dict = {}
    token_counts: dict = {}
    for i in range(len(corpus)):
        if grouping == "source":
            key = corpus.sources[i]
        elif grouping == "topic":
            key = corpus.topics[i]
        else:
            key = (corpus.topics[i], corpus.sources[i])
        doc_counts[key] = doc_counts.get(key, 0) + 1
        token_counts[key] = token_counts.get(key, 0) + corpus.token_counts[i]

    keys = sorted(doc_counts)
    if grouping == "topic_source":
        names = [cell_label(t, s) for t, s in keys]
    else:
        names = list(keys)
    return GroupStats.from_counts(
        grouping,
        names,
        [doc_counts[k] for k in keys],
        [token_counts[k] for k in keys],
    )
