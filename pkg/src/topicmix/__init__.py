"""Topic-aware corpus partitioning and data-mixture optimization."""

from .corpus import Corpus, Document, GroupStats, group_stats, load_jsonl, tokenize_count, write_jsonl
from .embedding import EmbeddingMatrix, embed_local, embed_remote, read_embeddings, write_embeddings
from .errors import DataError, MixError, ServiceError
from .mixing import MixtureTrial, MixtureWeights

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "DataError",
    "Document",
    "EmbeddingMatrix",
    "GroupStats",
    "MixError",
    "MixtureTrial",
    "MixtureWeights",
    "ServiceError",
    "__version__",
    "embed_local",
    "embed_remote",
    "group_stats",
    "load_jsonl",
    "read_embeddings",
    "tokenize_count",
    "write_embeddings",
    "write_jsonl",
]
