"""LLM-driven taxonomy construction: cluster summaries, fine-topic
abstraction, and merging fine topics into a small final label set.

All chat traffic goes through the ``ChatClient`` interface; the HTTP
implementation targets any JSON chat-completions API, and the
deterministic stub makes the whole pipeline a pure function of its inputs
so everything runs (and tests) offline.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Mapping, MutableMapping, Sequence
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .clustering import TwoLevelModel, sample_cluster
from .corpus import Corpus
from .embedding import post_with_retries, _auth_headers
from .errors import DataError, ServiceError

CHAT_TOKEN_ENV_VAR = "MIX_CHAT_TOKEN"

OTHERS_LABEL = "Others"

SYSTEM_SUMMARY = "You summarize clusters of related documents."
SYSTEM_TOPIC = "You abstract topic labels from cluster summaries."
SYSTEM_MERGE = "You merge topic labels into a smaller taxonomy."
SYSTEM_ANNOTATE = "You assign one topic label to a document."

DEFAULT_CHAR_BUDGET = 2000
MAX_SUMMARY_DOCS = 10
MAX_POOL_SUMMARIES = 50
MAX_LABEL_WORDS = 8


def _load_template(name: str) -> str:
    return resources.files("topicmix.data.prompts").joinpath(name).read_text(encoding="utf-8")


def summary_template() -> str:
    return _load_template("cluster_summary.txt")


def abstraction_template() -> str:
    return _load_template("topic_abstraction.txt")


def merge_template() -> str:
    return _load_template("topic_merge.txt")


def hash8(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:8]


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    temperature: float = 0.0
    max_tokens: int = 512


@dataclass(frozen=True)
class ChatReply:
    text: str
    finish_reason: str = "stop"


class HttpChatClient:
    """Client for a JSON chat-completions endpoint (system+user messages
    in, choices[0].message.content out). Auth via MIX_CHAT_TOKEN."""

    def __init__(self, endpoint: str, model: str | None = None,
                 timeout: float = 60.0, retry_base: float = 0.5):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.retry_base = retry_base
        self.requests_issued = 0

    def complete(self, req: ChatRequest) -> ChatReply:
        self.requests_issued += 1
        payload: dict = {
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if self.model:
            payload["model"] = self.model
        reply = post_with_retries(
            self.endpoint, payload, headers=_auth_headers(CHAT_TOKEN_ENV_VAR),
            timeout=self.timeout, retry_base=self.retry_base,
        )
        try:
            choice = reply["choices"][0]
            text = choice["message"]["content"]
            finish = choice.get("finish_reason", "stop")
        except (KeyError, IndexError, TypeError) as exc:
            raise ServiceError(f"{self.endpoint}: malformed chat reply: {exc}") from exc
        if not text:
            raise ServiceError(f"{self.endpoint}: empty chat reply")
        return ChatReply(text=text, finish_reason=finish)


def _block_between(text: str, start: str, end: str | None) -> str:
    _, sep, rest = text.partition(start)
    if not sep:
        return ""
    if end is None:
        return rest.strip()
    block, _, _ = rest.partition(end)
    return block.strip()


class StubChatClient:
    """Deterministic offline stand-in for the chat service.

    Replies are pure functions of the rendered prompt:
      summaries  -> "SUMMARY[<first 5 tokens of the documents block>]"
      topics     -> "TOPIC[<hash8 of the summaries block>]"
      merges     -> round-robin over the listed topics into "Group i"
      annotation -> a stable hash-picked label from the listed topics
    """

    def __init__(self):
        self.requests_issued = 0

    def complete(self, req: ChatRequest) -> ChatReply:
        self.requests_issued += 1
        system = req.system.lower()
        if "summarize" in system:
            docs = _block_between(req.user, "Documents:", "Summary:")
            head = " ".join(docs.split()[:5])
            return ChatReply(text=f"SUMMARY[{head}]")
        if "merge" in system:
            m = self._requested_m(req.user)
            topics = self._listed(req.user, "Topics:")
            lines = [f"{topic}\tGroup {i % m + 1}" for i, topic in enumerate(topics)]
            return ChatReply(text="\n".join(lines))
        if "abstract" in system:
            block = _block_between(req.user, "Summaries:", "Topic:")
            return ChatReply(text=f"TOPIC[{hash8(block)}]")
        if "assign" in system:
            block = _block_between(req.user, "Topics:", "Document:")
            topics = [line.strip() for line in block.splitlines() if line.strip()]
            if not topics:
                raise ServiceError("stub prompt has an empty 'Topics:' block")
            doc = _block_between(req.user, "Document:", "Topic:")
            pick = int(hash8(doc), 16) % len(topics)
            return ChatReply(text=topics[pick])
        raise ServiceError(f"stub client cannot handle system prompt: {req.system!r}")

    @staticmethod
    def _requested_m(user: str) -> int:
        for token in user.replace("exactly", "\x00").split("\x00")[1:]:
            head = token.split()[0] if token.split() else ""
            if head.isdigit():
                return int(head)
        raise ServiceError("stub merge prompt does not state a target topic count")

    @staticmethod
    def _listed(user: str, header: str) -> list[str]:
        block = _block_between(user, header, None)
        items = [line.strip() for line in block.splitlines() if line.strip()]
        if not items:
            raise ServiceError(f"stub prompt has an empty {header!r} block")
        return items


class PromptCache(MutableMapping):
    """Content-hash keyed reply cache with optional JSON persistence."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[str, str] = {}
        if self.path and self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                self._data = json.load(fh)

    def save(self) -> None:
        if self.path is None:
            return
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(self._data, fh, sort_keys=True)

    def __getitem__(self, key):
        return self._data[key]

    def __setitem__(self, key, value):
        self._data[key] = value

    def __delitem__(self, key):
        del self._data[key]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)


def _cached_complete(client, req: ChatRequest,
                     cache: MutableMapping[str, str] | None) -> str:
    key = hashlib.sha256(f"{req.system}\x00{req.user}".encode("utf-8")).hexdigest()
    if cache is not None and key in cache:
        return cache[key]
    reply = client.complete(req)
    if not reply.text.strip():
        raise ServiceError("chat service returned an empty reply")
    if cache is not None:
        cache[key] = reply.text
    return reply.text


def summarize_cluster(docs: Sequence[str], client, *,
                      char_budget: int = DEFAULT_CHAR_BUDGET,
                      cache: MutableMapping[str, str] | None = None) -> str:
    """One summary string for 1-10 document texts (truncated per-document
    to ``char_budget`` characters before templating)."""
    if not (1 <= len(docs) <= MAX_SUMMARY_DOCS):
        raise DataError(f"summarize_cluster takes 1-{MAX_SUMMARY_DOCS} documents, got {len(docs)}")
    block = "\n".join(text[:char_budget] for text in docs)
    user = summary_template().replace("{DOCUMENTS}", block)
    return _cached_complete(client, ChatRequest(system=SYSTEM_SUMMARY, user=user), cache).strip()


def abstract_topic(summaries: Sequence[str], client, *,
                   cache: MutableMapping[str, str] | None = None) -> str:
    """A short fine-topic label (at most 8 words) for up to 50 summaries."""
    if not (1 <= len(summaries) <= MAX_POOL_SUMMARIES):
        raise DataError(
            f"abstract_topic takes 1-{MAX_POOL_SUMMARIES} summaries, got {len(summaries)}"
        )
    block = "\n".join(summaries)
    user = abstraction_template().replace("{SUMMARIES}", block)
    text = _cached_complete(client, ChatRequest(system=SYSTEM_TOPIC, user=user), cache)
    label = " ".join(text.strip().strip('"').strip().split()[:MAX_LABEL_WORDS])
    if not label:
        raise ServiceError("abstraction reply trimmed to nothing")
    return label


@dataclass(frozen=True)
class TopicTaxonomy:
    """cluster -> fine topic -> final topic, built once and then frozen."""

    fine_topics: tuple[str, ...]          # one entry per level-2 cluster
    final_topics: tuple[str, ...]
    fine_to_final: Mapping[str, str]
    cluster_to_fine: Mapping[int, str]

    def __post_init__(self):
        if len(set(self.final_topics)) != len(self.final_topics):
            raise DataError("final topic names are not unique")
        finals = set(self.final_topics)
        used = set()
        for fine in set(self.fine_topics) | set(self.cluster_to_fine.values()):
            final = self.fine_to_final.get(fine)
            if final is None:
                raise DataError(f"fine topic {fine!r} has no final topic")
            if final not in finals:
                raise DataError(f"fine topic {fine!r} maps to unknown final {final!r}")
            used.add(final)
        if used != finals:
            raise DataError(f"final topics never used: {sorted(finals - used)}")

    @property
    def m_topic(self) -> int:
        return len(self.final_topics)

    def final_of_cluster(self, cluster: int) -> str:
        try:
            fine = self.cluster_to_fine[cluster]
        except KeyError:
            raise DataError(f"unknown level-2 cluster {cluster}") from None
        return self.fine_to_final[fine]

    def final_index(self, label: str) -> int:
        try:
            return self.final_topics.index(label)
        except ValueError:
            raise DataError(f"label {label!r} is not in the taxonomy") from None

    def to_json(self) -> dict:
        return {
            "fine_topics": list(self.fine_topics),
            "final_topics": list(self.final_topics),
            "fine_to_final": dict(self.fine_to_final),
            "cluster_to_fine": {str(k): v for k, v in self.cluster_to_fine.items()},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "TopicTaxonomy":
        return cls(
            fine_topics=tuple(obj["fine_topics"]),
            final_topics=tuple(obj["final_topics"]),
            fine_to_final=dict(obj["fine_to_final"]),
            cluster_to_fine={int(k): v for k, v in obj["cluster_to_fine"].items()},
        )


def save_taxonomy(taxonomy: TopicTaxonomy, path: str | Path) -> None:
    from .ioutil import atomic_open

    with atomic_open(path, "w") as fh:
        json.dump(taxonomy.to_json(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_taxonomy(path: str | Path) -> TopicTaxonomy:
    with open(path, "r", encoding="utf-8") as fh:
        return TopicTaxonomy.from_json(json.load(fh))


def _strip_fences(text: str) -> str:
    lines = [line for line in text.splitlines() if not line.strip().startswith("```")]
    return "\n".join(lines)


def merge_topics(fine: Sequence[str], m: int, client, *,
                 cache: MutableMapping[str, str] | None = None) -> TopicTaxonomy:
    """Merge per-cluster fine topics into at most m final topics.

    The reply must be a strict two-column tab-separated mapping; the only
    repair applied is stripping markdown fences. Fine topics the reply
    leaves unmapped land in the reserved "Others" sink. m equal to the
    number of distinct fine topics short-circuits to the identity
    taxonomy without a service call.
    """
    fine = list(fine)
    if not fine:
        raise DataError("no fine topics to merge")
    distinct = list(dict.fromkeys(fine))
    if m > len(distinct):
        raise DataError(f"cannot merge {len(distinct)} fine topics into {m} finals")
    cluster_to_fine = {i: label for i, label in enumerate(fine)}
    if m == len(distinct):
        return TopicTaxonomy(
            fine_topics=tuple(fine),
            final_topics=tuple(distinct),
            fine_to_final={label: label for label in distinct},
            cluster_to_fine=cluster_to_fine,
        )

    user = merge_template().replace("{M}", str(m)).replace("{TOPICS}", "\n".join(distinct))
    text = _cached_complete(client, ChatRequest(system=SYSTEM_MERGE, user=user,
                                                max_tokens=4096), cache)
    mapping: dict[str, str] = {}
    finals: list[str] = []
    offending: list[str] = []
    for line in _strip_fences(text).splitlines():
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) != 2 or not parts[0] or not parts[1]:
            offending.append(line)
            continue
        fine_label, final_label = parts
        if fine_label not in distinct:
            offending.append(line)
            continue
        mapping[fine_label] = final_label
        if final_label not in finals:
            finals.append(final_label)
    if offending:
        shown = "; ".join(offending[:5])
        raise DataError(f"merge reply parse failure on {len(offending)} line(s): {shown}")
    unmapped = [label for label in distinct if label not in mapping]
    if unmapped:
        for label in unmapped:
            mapping[label] = OTHERS_LABEL
        if OTHERS_LABEL not in finals:
            finals.append(OTHERS_LABEL)
    return TopicTaxonomy(
        fine_topics=tuple(fine),
        final_topics=tuple(finals),
        fine_to_final=mapping,
        cluster_to_fine=cluster_to_fine,
    )


def _stage_seeds(model: TwoLevelModel, seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(model.k1 + model.k2)


def cluster_summaries(
    corpus: Corpus,
    model: TwoLevelModel,
    client,
    seed: int = 0,
    *,
    n_summary_docs: int = MAX_SUMMARY_DOCS,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    cache: MutableMapping[str, str] | None = None,
) -> list[str]:
    """One summary per level-1 cluster from a sampled handful of documents."""
    seeds = _stage_seeds(model, seed)
    summaries: list[str] = []
    for i in range(model.k1):
        ids = sample_cluster(model.level1, i, n_summary_docs, seed=int(seeds[i]))
        texts = [corpus.text(corpus.index_of(doc_id)) for doc_id in ids]
        summaries.append(summarize_cluster(texts, client, char_budget=char_budget, cache=cache))
    return summaries


def taxonomy_from_summaries(
    model: TwoLevelModel,
    summaries: Sequence[str],
    client,
    m: int,
    seed: int = 0,
    *,
    n_pool: int = MAX_POOL_SUMMARIES,
    cache: MutableMapping[str, str] | None = None,
) -> TopicTaxonomy:
    """Abstract a fine topic per level-2 cluster (from a pooled sample of
    its member clusters' summaries) and merge into at most m finals."""
    if len(summaries) != model.k1:
        raise DataError(f"expected {model.k1} summaries, got {len(summaries)}")
    seeds = _stage_seeds(model, seed)
    fine: list[str] = []
    for j in range(model.k2):
        member_clusters = sample_cluster(model.level2, j, n_pool,
                                         seed=int(seeds[model.k1 + j]))
        pool = [summaries[int(c)] for c in member_clusters]
        fine.append(abstract_topic(pool, client, cache=cache))
    return merge_topics(fine, m, client, cache=cache)


def extract_taxonomy(
    corpus: Corpus,
    model: TwoLevelModel,
    client,
    m: int,
    seed: int = 0,
    *,
    n_summary_docs: int = MAX_SUMMARY_DOCS,
    n_pool: int = MAX_POOL_SUMMARIES,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    cache: MutableMapping[str, str] | None = None,
) -> tuple[TopicTaxonomy, list[str]]:
    """Run the full labeling stage over a fitted two-level clustering.

    Per level-1 cluster: sample documents and summarize (k1 requests).
    Per level-2 cluster: pool its member clusters' summaries, sample up
    to ``n_pool`` of them, and abstract a fine topic (k2 requests). One
    final merge call produces the taxonomy, so a full run issues at most
    k1 + k2 + 1 requests. Returns (taxonomy, level-1 summaries).
    """
    summaries = cluster_summaries(corpus, model, client, seed,
                                  n_summary_docs=n_summary_docs,
                                  char_budget=char_budget, cache=cache)
    taxonomy = taxonomy_from_summaries(model, summaries, client, m, seed,
                                       n_pool=n_pool, cache=cache)
    return taxonomy, summaries
