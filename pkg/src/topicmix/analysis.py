"""Topic distribution reports and the topic x source NPMI matrix.

NPMI uses natural logarithms (the statistic is base-invariant) with the
standard limit conventions: a zero joint cell scores -1, a probability-one
cell scores +1, so the matrix is always finite and inside [-1, 1].
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, GroupStats, group_stats
from .errors import DataError

WEIGHTINGS = ("documents", "tokens")


@dataclass(frozen=True)
class JointTable:
    """Normalized topic x source probability table."""

    topics: tuple[str, ...]
    sources: tuple[str, ...]
    p: np.ndarray  # (topics, sources), sums to 1

    def __post_init__(self):
        if self.p.shape != (len(self.topics), len(self.sources)):
            raise DataError("joint table shape does not match labels")
        if np.any(self.p < 0) or abs(float(self.p.sum()) - 1.0) > 1e-12:
            raise DataError("joint table is not a probability table")


def joint_counts(corpus: Corpus, weight: str = "documents") -> JointTable:
    """Joint (topic, source) probability table, weighted by document count
    or token count."""
    if weight not in WEIGHTINGS:
        raise DataError(f"unknown weighting {weight!r}; expected one of {WEIGHTINGS}")
    missing = [doc_id for doc_id, t in zip(corpus.ids, corpus.topics) if t is None]
    if missing:
        shown = ", ".join(missing[:10])
        raise DataError(f"documents without topic label: {shown}")
    topics = tuple(sorted(set(corpus.topics)))
    sources = tuple(sorted(set(corpus.sources)))
    t_idx = {t: i for i, t in enumerate(topics)}
    s_idx = {s: j for j, s in enumerate(sources)}
    counts = np.zeros((len(topics), len(sources)), dtype=np.float64)
    for i in range(len(corpus)):
        mass = 1.0 if weight == "documents" else float(corpus.token_counts[i])
        counts[t_idx[corpus.topics[i]], s_idx[corpus.sources[i]]] += mass
    total = counts.sum()
    if total <= 0:
        raise DataError("joint table has zero total mass")
    return JointTable(topics=topics, sources=sources, p=counts / total)


@dataclass(frozen=True)
class NpmiMatrix:
    topics: tuple[str, ...]
    sources: tuple[str, ...]
    values: np.ndarray
    joint: np.ndarray


def npmi(joint: JointTable | np.ndarray) -> NpmiMatrix:
    """Normalized pointwise mutual information of a joint table.

    npmi(x, y) = ln(p(x,y) / (p(x) p(y))) / (-ln p(x,y)); +1 means the
    pair always co-occurs, 0 independence, -1 mutual exclusivity.
    """
    if isinstance(joint, JointTable):
        topics, sources, p = joint.topics, joint.sources, joint.p
    else:
        p = np.asarray(joint, dtype=np.float64)
        if p.ndim != 2 or np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
            raise DataError("npmi input must be a 2-D probability table")
        topics = tuple(f"r{i}" for i in range(p.shape[0]))
        sources = tuple(f"c{j}" for j in range(p.shape[1]))
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    values = np.full(p.shape, -1.0)
    interior = (p > 0) & (p < 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.log(p[interior] / (px @ py)[interior])
        values[interior] = ratio / (-np.log(p[interior]))
    values[p >= 1.0] = 1.0
    np.clip(values, -1.0, 1.0, out=values)
    return NpmiMatrix(topics=topics, sources=sources, values=values, joint=p)


def npmi_matrix_csv(mat: NpmiMatrix) -> str:
    out = io.StringIO()
    out.write("topic," + ",".join(mat.sources) + "\n")
    for i, topic in enumerate(mat.topics):
        row = ",".join(f"{v:.6f}" for v in mat.values[i])
        out.write(f"{topic},{row}\n")
    return out.getvalue()


def npmi_long_csv(mat: NpmiMatrix) -> str:
    out = io.StringIO()
    out.write("topic,source,npmi\n")
    for i, topic in enumerate(mat.topics):
        for j, source in enumerate(mat.sources):
            out.write(f"{topic},{source},{mat.values[i, j]:.6f}\n")
    return out.getvalue()


@dataclass(frozen=True)
class TopicReport:
    """Topic token-share stats plus a share-ranked CSV."""

    stats: GroupStats
    ranked: tuple[tuple[str, float], ...]  # (topic, share), non-increasing

    def csv(self) -> str:
        out = io.StringIO()
        out.write("topic,share\n")
        for topic, share in self.ranked:
            out.write(f"{topic},{share:.6f}\n")
        return out.getvalue()


def topic_report(corpus: Corpus) -> TopicReport:
    stats = group_stats(corpus, "topic")
    ranked = sorted(zip(stats.names, stats.proportions), key=lambda kv: (-kv[1], kv[0]))
    return TopicReport(stats=stats, ranked=tuple(ranked))
