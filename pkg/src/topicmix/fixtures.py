"""Bundled reference data and synthetic corpora used by tests and demos.

The SlimPajama tables record published per-group token shares and the
mixture weights different methods produced on that corpus; they anchor
the file-parsing and simplex-validation regression tests. The synthetic
corpus generator builds a themed 2,000-document corpus on which the whole
offline pipeline runs end to end.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import Corpus, Document, GroupStats, tokenize_count, write_jsonl
from .errors import DataError
from .mixing import MixtureWeights

# Topic token shares (percent) behind the published distribution chart;
# Entertainment and Technology alone cover over 41% of the corpus.
SLIMPAJAMA_TOPIC_PERCENTS = {
    "Technology": 17.55, "Science": 5.73, "Politics": 8.23, "Health": 7.04,
    "Lifestyle": 5.49, "Law": 6.08, "Entertainment": 23.91, "Education": 13.40,
    "Relationships": 1.14, "Finance": 4.01, "Community": 2.29, "Others": 5.13,
}

SLIMPAJAMA_SOURCE_PERCENTS = {
    "arXiv": 4.60, "Book": 4.20, "C4": 26.70, "CommonCrawl": 52.20,
    "Github": 5.20, "StackExchange": 3.30, "Wikipedia": 3.80,
}

# Downstream score averages after upsampling one group by 30% and
# continuing training, against the uncontrolled baseline. The top-3
# topics (Science, Relationships, Health) and top-2 sources
# (C4, CommonCrawl) are the published selections.
PERFRE_BASELINE_SCORE = 46.64
PERFRE_TOPIC_SCORES = {
    "Technology": 47.49, "Science": 48.59, "Politics": 47.11, "Health": 47.67,
    "Lifestyle": 47.60, "Law": 47.23, "Entertainment": 46.40, "Education": 47.62,
    "Relationships": 47.70, "Finance": 46.41, "Community": 47.31, "Others": 47.40,
}
PERFRE_SOURCE_SCORES = {
    "arXiv": 46.03, "Book": 46.36, "C4": 47.04, "CommonCrawl": 46.79,
    "Github": 46.20, "StackExchange": 46.47, "Wikipedia": 46.06,
}


def _percent_stats(grouping: str, percents: dict[str, float]) -> GroupStats:
    # two-decimal percents become exact integer token counts out of 10,000
    names = sorted(percents)
    tokens = [round(percents[name] * 100) for name in names]
    return GroupStats.from_counts(grouping, names, [0] * len(names), tokens)


def slimpajama_topic_stats() -> GroupStats:
    """Token-share stats matching the published topic distribution
    (doc counts are not published and recorded as zero)."""
    return _percent_stats("topic", SLIMPAJAMA_TOPIC_PERCENTS)


def slimpajama_source_stats() -> GroupStats:
    return _percent_stats("source", SLIMPAJAMA_SOURCE_PERCENTS)


def load_reference_weight_tables(path: str | Path | None = None) -> dict[str, dict[str, MixtureWeights]]:
    """Parse the bundled weight tables into normalized MixtureWeights.

    Columns are percentages that may be off 100 by rounding; each is
    validated to sum within 0.2 and then normalized exactly.
    """
    if path is None:
        text = resources.files("topicmix.data").joinpath(
            "slimpajama_weight_tables.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    raw = json.loads(text)
    out: dict[str, dict[str, MixtureWeights]] = {}
    for grouping in ("topic", "source"):
        out[grouping] = {}
        for method, column in raw[grouping].items():
            names = sorted(column)
            values = np.array([float(column[name]) for name in names])
            if abs(values.sum() - 100.0) > 0.2:
                raise DataError(
                    f"{grouping}/{method}: column sums to {values.sum():.2f}, not ~100"
                )
            out[grouping][method] = MixtureWeights(
                grouping=grouping, names=tuple(names), w=values / values.sum()
            )
    return out


def topic_share_corpus() -> Corpus:
    """A 12-document corpus whose token shares equal the published topic
    distribution exactly (one document per topic, sources alternate)."""
    sources = ["web", "wiki", "news"]
    docs = []
    for i, (topic, pct) in enumerate(sorted(SLIMPAJAMA_TOPIC_PERCENTS.items())):
        n_tokens = round(pct * 100)
        text = " ".join(["tok"] * n_tokens)  # 3-byte pieces count 1 token each
        docs.append(Document(
            id=f"fix:{i}", text=text, source=sources[i % len(sources)],
            token_count=tokenize_count(text), topic=topic,
        ))
    return Corpus.from_documents(docs)


# ---------------------------------------------------------------------------
# Synthetic themed corpus
# ---------------------------------------------------------------------------

THEMES = {
    "circuits": ["voltage", "resistor", "capacitor", "amplifier", "solder",
                 "oscillator", "transistor", "circuit", "diode", "frequency",
                 "signal", "inductor", "breadboard", "schematic", "current"],
    "cooking": ["recipe", "simmer", "garlic", "saute", "broth", "season",
                "oven", "dough", "whisk", "marinade", "skillet", "braise",
                "chop", "flavor", "tablespoon"],
    "football": ["midfield", "goalkeeper", "penalty", "striker", "league",
                 "tackle", "offside", "defender", "fixture", "stadium",
                 "transfer", "halftime", "referee", "corner", "squad"],
    "gardening": ["seedling", "compost", "mulch", "prune", "perennial",
                  "soil", "trellis", "germinate", "fertilizer", "bloom",
                  "cutting", "transplant", "weed", "harvest", "greenhouse"],
    "lawsuits": ["plaintiff", "defendant", "verdict", "appeal", "statute",
                 "testimony", "counsel", "damages", "hearing", "motion",
                 "injunction", "liability", "precedent", "docket", "ruling"],
    "markets": ["dividend", "equity", "portfolio", "yield", "hedge",
                "futures", "earnings", "volatility", "bond", "inflation",
                "margin", "index", "liquidity", "broker", "valuation"],
    "medicine": ["diagnosis", "symptom", "dosage", "clinical", "therapy",
                 "patient", "vaccine", "chronic", "prescription", "pathogen",
                 "remission", "biopsy", "immune", "trial", "infusion"],
    "spaceflight": ["orbit", "booster", "payload", "launch", "telemetry",
                    "thruster", "docking", "capsule", "satellite", "reentry",
                    "propellant", "apogee", "stage", "trajectory", "module"],
}

FILLER = ["the", "a", "of", "and", "to", "in", "that", "it", "was", "for",
          "on", "with", "as", "at", "by", "from", "about", "into", "over",
          "after"]

SOURCES = ("web", "wiki", "news", "forum")


def synthetic_corpus(n_docs: int = 2000, seed: int = 7) -> Corpus:
    """Deterministic themed corpus: each document draws most of its words
    from one theme pool, plus filler; sources lean differently per theme
    so the topic x source table is not independent."""
    rng = np.random.default_rng(seed)
    themes = sorted(THEMES)
    docs = []
    for i in range(n_docs):
        theme = themes[int(rng.integers(len(themes)))]
        # bias the source by theme so the NPMI table has structure
        bias = (themes.index(theme) % len(SOURCES))
        probs = np.full(len(SOURCES), 0.4 / (len(SOURCES) - 1))
        probs[bias] = 0.6
        source = SOURCES[int(rng.choice(len(SOURCES), p=probs))]
        n_words = int(rng.integers(30, 120))
        pool = THEMES[theme]
        words = []
        for _ in range(n_words):
            if rng.random() < 0.7:
                words.append(pool[int(rng.integers(len(pool)))])
            else:
                words.append(FILLER[int(rng.integers(len(FILLER)))])
        text = " ".join(words)
        quality = float(np.round(rng.random(), 6))
        docs.append(Document(
            id=f"syn:{i:05d}", text=text, source=source,
            token_count=tokenize_count(text), quality=quality,
        ))
    return Corpus.from_documents(docs)


def write_synthetic_corpus(path: str | Path, n_docs: int = 2000, seed: int = 7) -> Corpus:
    corpus = synthetic_corpus(n_docs=n_docs, seed=seed)
    write_jsonl(corpus, path)
    return corpus
