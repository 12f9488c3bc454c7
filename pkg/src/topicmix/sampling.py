"""Materialize a token budget according to mixture weights, optionally
composed with quality-based selection inside each group.

Budgets are honored at document granularity with an include-on-cross
rule: the document that crosses a group's token target is kept, so the
realized count overshoots by at most one document. Manifests carry no
timestamps, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, cell_label
from .errors import DataError
from .mixing import MixtureWeights

POLICIES = ("epoch", "replace")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    group: str
    tokens: int
    epoch_index: int


@dataclass(frozen=True)
class MixManifest:
    weights: MixtureWeights
    total_tokens: int
    realized_tokens: int
    seed: int
    policy: str
    entries: tuple[ManifestEntry, ...]

    def group_tokens(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.group] = out.get(e.group, 0) + e.tokens
        return out


def write_manifest(manifest: MixManifest, path: str | Path) -> None:
    from .ioutil import atomic_open

    with atomic_open(path, "w") as fh:
        fh.write(json.dumps({
            "weights": manifest.weights.to_json(),
            "total_tokens": manifest.total_tokens,
            "realized_tokens": manifest.realized_tokens,
            "seed": manifest.seed,
            "policy": manifest.policy,
        }, sort_keys=True) + "\n")
        for e in manifest.entries:
            fh.write(json.dumps({"id": e.id, "group": e.group, "tokens": e.tokens,
                                 "epoch_index": e.epoch_index}, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> MixManifest:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        entries = []
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            entries.append(ManifestEntry(id=obj["id"], group=obj["group"],
                                         tokens=obj["tokens"],
                                         epoch_index=obj["epoch_index"]))
    return MixManifest(
        weights=MixtureWeights.from_json(header["weights"]),
        total_tokens=header["total_tokens"],
        realized_tokens=header["realized_tokens"],
        seed=header["seed"],
        policy=header["policy"],
        entries=tuple(entries),
    )


def _group_key(corpus: Corpus, grouping: str, i: int) -> str:
    if grouping == "source":
        return corpus.sources[i]
    if grouping == "topic":
        topic = corpus.topics[i]
        if topic is None:
            raise DataError(f"document {corpus.ids[i]!r} has no topic label")
        return topic
    if grouping == "topic_source":
        topic = corpus.topics[i]
        if topic is None:
            raise DataError(f"document {corpus.ids[i]!r} has no topic label")
        return cell_label(topic, corpus.sources[i])
    raise DataError(f"unknown grouping {grouping!r}")


def _group_members(corpus: Corpus, w: MixtureWeights) -> dict[str, list[int]]:
    members: dict[str, list[int]] = {name: [] for name in w.names}
    for i in range(len(corpus)):
        key = _group_key(corpus, w.grouping, i)
        if key in members:
            members[key].append(i)
    return members


def _group_rng(seed: int, group: str) -> np.random.Generator:
    digest = hashlib.blake2b(group.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(np.random.SeedSequence([seed, int.from_bytes(digest, "little")]))


def build_mixture(
    corpus: Corpus,
    w: MixtureWeights,
    total_tokens: int,
    seed: int = 0,
    policy: str = "epoch",
) -> MixManifest:
    """Draw documents per group until each group's token target is crossed.

    Within a group, documents are drawn uniformly without replacement; on
    exhaustion the group either reshuffles into a new epoch ("epoch") or
    switches to draws with replacement ("replace").
    """
    if policy not in POLICIES:
        raise DataError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if total_tokens < 0:
        raise DataError("total_tokens must be non-negative")
    members = _group_members(corpus, w)
    entries: list[ManifestEntry] = []
    realized = 0
    for name, weight in zip(w.names, w.w):
        target = weight * total_tokens
        if target <= 0:
            continue
        pool = members[name]
        if not pool:
            raise DataError(f"group {name!r} has weight {weight:g} but no documents")
        if sum(corpus.token_counts[i] for i in pool) == 0:
            raise DataError(f"group {name!r} has only zero-token documents")
        rng = _group_rng(seed, name)
        order = rng.permutation(len(pool))
        cum = 0
        pos = 0
        epoch = 0
        while cum < target:
            if pos >= len(order):
                epoch += 1
                if policy == "epoch":
                    order = rng.permutation(len(pool))
                else:
                    order = rng.integers(0, len(pool), size=len(pool))
                pos = 0
            i = pool[int(order[pos])]
            pos += 1
            tokens = corpus.token_counts[i]
            entries.append(ManifestEntry(id=corpus.ids[i], group=name,
                                         tokens=tokens, epoch_index=epoch))
            cum += tokens
        realized += cum
    return MixManifest(weights=w, total_tokens=total_tokens, realized_tokens=realized,
                       seed=seed, policy=policy, entries=tuple(entries))


# ---------------------------------------------------------------------------
# Quality selection
# ---------------------------------------------------------------------------

class FieldQualityScorer:
    """Reads Document.quality; documents without one are an error."""

    def score(self, doc) -> float:
        if doc.quality is None:
            raise DataError(f"document {doc.id!r} has no quality score")
        return float(doc.quality)


class HashQualityScorer:
    """Deterministic pseudo-score in [0, 1) derived from the document id."""

    def __init__(self, seed: int = 0):
        self._key = int(seed).to_bytes(8, "little", signed=False)

    def score(self, doc) -> float:
        digest = hashlib.blake2b(doc.id.encode("utf-8"), digest_size=8, key=self._key).digest()
        return int.from_bytes(digest, "little") / 2.0**64


def select_by_quality(corpus: Corpus, doc_indices: Sequence[int],
                      budget_tokens: int, scorer,
                      min_score: float | None = None) -> list[int]:
    """Greedy top-score selection until the budget is crossed.

    The document that crosses the budget is included; score ties break by
    ascending id. A budget beyond the group total takes everything (with
    a warning). ``min_score`` optionally switches to threshold selection:
    documents scoring below it are excluded even if the budget goes
    unfilled.
    """
    scored = []
    for i in doc_indices:
        doc = corpus.doc(i)
        try:
            s = float(scorer.score(doc))
        except DataError:
            raise
        except Exception as exc:
            raise DataError(f"scorer failed on document {doc.id!r}: {exc}") from exc
        if min_score is not None and s < min_score:
            continue
        scored.append((-s, doc.id, i))
    scored.sort()
    total = sum(corpus.token_counts[i] for _, _, i in scored)
    if budget_tokens > total:
        warnings.warn(f"budget {budget_tokens} exceeds eligible total {total}; taking all")
        return [i for _, _, i in scored]
    picked = []
    cum = 0
    for _, _, i in scored:
        if cum >= budget_tokens:
            break
        picked.append(i)
        cum += corpus.token_counts[i]
    return picked


def mix_then_select(
    corpus: Corpus,
    w: MixtureWeights,
    total_tokens: int,
    scorer,
    seed: int = 0,
    min_score: float | None = None,
) -> MixManifest:
    """Round each group's token allocation from the weights, then fill it
    with the highest-quality documents in the group."""
    members = _group_members(corpus, w)
    entries: list[ManifestEntry] = []
    realized = 0
    for name, weight in zip(w.names, w.w):
        budget = round(weight * total_tokens)
        if budget <= 0:
            continue
        pool = members[name]
        if not pool:
            raise DataError(f"group {name!r} has weight {weight:g} but no documents")
        for i in select_by_quality(corpus, pool, budget, scorer, min_score=min_score):
            tokens = corpus.token_counts[i]
            entries.append(ManifestEntry(id=corpus.ids[i], group=name,
                                         tokens=tokens, epoch_index=0))
            realized += tokens
    return MixManifest(weights=w, total_tokens=total_tokens, realized_tokens=realized,
                       seed=seed, policy="select", entries=tuple(entries))
