"""Shared builders for the test suite."""

import numpy as np

from pedbank.bank import KnowledgeBank
from pedbank.embeddings import BACKGROUND, PEDESTRIAN, EmbeddingDataset, EmbeddingRecord


def make_dataset(vectors, labels=None, prefix="r"):
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    if labels is None:
        labels = [PEDESTRIAN] * len(vectors)
    records = tuple(
        EmbeddingRecord(f"{prefix}{i}", label, vec)
        for i, (vec, label) in enumerate(zip(vectors, labels))
    )
    dim = vectors[0].shape[0] if vectors else None
    return EmbeddingDataset(dim=dim, records=records)


def random_bank(seed, n, dim, meta=None):
    rng = np.random.default_rng(seed)
    f_q = rng.normal(size=(n, dim))
    f_h = rng.normal(scale=0.1, size=(n, dim))
    return KnowledgeBank(n=n, dim=dim, f_q=f_q, f_h=f_h, f_k=f_q + f_h, meta=meta or {})


__all__ = ["make_dataset", "random_bank", "PEDESTRIAN", "BACKGROUND"]
