"""Pluggable providers of document and per-event embeddings.

Two encoders share one output contract: a trainable toy encoder that maps
raw per-event feature vectors through a tanh layer (and pools them into a
document vector), and a frozen loader for embeddings precomputed by any
external system. Files for both use the same JSONL format:

    {"doc_id": str, "h_cls": [float], "events": {"<event id>": [float]}}
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class EncoderError(Exception):
    pass


@dataclass
class EmbeddingTable:
    """Per-document vectors keyed by event id, plus a document vector."""

    h_cls: np.ndarray
    events: dict[str, np.ndarray]

    def __post_init__(self):
        self.h_cls = np.asarray(self.h_cls, dtype=np.float64)
        self.events = {k: np.asarray(v, dtype=np.float64) for k, v in self.events.items()}
        dims = {v.shape for v in self.events.values()} | {self.h_cls.shape}
        if len(dims) > 1 or any(len(d) != 1 for d in dims):
            raise EncoderError(f"ragged embedding dimensions: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.h_cls.shape[0]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return (np.array_equal(self.h_cls, other.h_cls)
                and self.events.keys() == other.events.keys()
                and all(np.array_equal(self.events[k], other.events[k]) for k in self.events))


@dataclass
class EncoderOutput:
    """Document vector plus one row per event, rows ordered by event id."""

    h_cls: Tensor          # [1, d]
    h_events: Tensor       # [k, d]
    event_ids: tuple[str, ...]

    @property
    def dim(self) -> int:
        return self.h_cls.shape[1]


class ToyEncoderParams:
    """Trainable map from raw features to d-dimensional embeddings."""

    def __init__(self, feature_dim: int, d: int, rng):
        bound = 1.0 / np.sqrt(feature_dim)
        self.w_feat = ad.parameter(rng.uniform(-bound, bound, size=(feature_dim, d)))
        self.b_feat = ad.parameter(np.zeros(d))
        bound = 1.0 / np.sqrt(d)
        self.w_pool = ad.parameter(rng.uniform(-bound, bound, size=(d, d)))

    def named(self, prefix: str = "enc.") -> dict[str, Tensor]:
        return {f"{prefix}w_feat": self.w_feat,
                f"{prefix}b_feat": self.b_feat,
                f"{prefix}w_pool": self.w_pool}


def _stack_features(event_ids, table: EmbeddingTable, doc_id: str) -> np.ndarray:
    rows = []
    for eid in event_ids:
        vec = table.events.get(eid)
        if vec is None:
            raise EncoderError(f"doc {doc_id!r}: no feature vector for event {eid!r}")
        rows.append(vec)
    return np.stack(rows)


def encode_toy(event_ids, table: EmbeddingTable, params: ToyEncoderParams,
               doc_id: str = "?") -> EncoderOutput:
    """tanh(features @ W + b) per event; the document vector pools the mean.

    Differentiable end to end; event order in the output follows
    ``event_ids`` (callers pass them sorted).
    """
    event_ids = tuple(event_ids)
    feats = Tensor(_stack_features(event_ids, table, doc_id))
    if feats.shape[1] != params.w_feat.shape[0]:
        raise EncoderError(f"doc {doc_id!r}: feature dim {feats.shape[1]} != encoder "
                           f"input dim {params.w_feat.shape[0]}")
    h_events = ad.tanh(ad.affine(feats, params.w_feat, params.b_feat))
    h_cls = ad.tanh(ad.matmul(ad.mean_rows(h_events), params.w_pool))
    return EncoderOutput(h_cls=h_cls, h_events=h_events, event_ids=event_ids)


def encode_frozen(event_ids, table: EmbeddingTable, doc_id: str = "?") -> EncoderOutput:
    """Use precomputed vectors directly; nothing trains through them."""
    event_ids = tuple(event_ids)
    h_events = Tensor(_stack_features(event_ids, table, doc_id))
    h_cls = Tensor(table.h_cls[None, :])
    return EncoderOutput(h_cls=h_cls, h_events=h_events, event_ids=event_ids)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def load_embedding_file(path) -> dict[str, EmbeddingTable]:
    tables: dict[str, EmbeddingTable] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            missing = {"doc_id", "h_cls", "events"} - set(obj)
            if missing:
                raise EncoderError(f"{path}:{lineno}: missing fields {sorted(missing)}")
            doc_id = str(obj["doc_id"])
            if doc_id in tables:
                raise EncoderError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
            try:
                tables[doc_id] = EmbeddingTable(
                    h_cls=np.asarray(obj["h_cls"], dtype=np.float64),
                    events={str(k): np.asarray(v, dtype=np.float64)
                            for k, v in obj["events"].items()})
            except EncoderError as e:
                raise EncoderError(f"{path}:{lineno} (doc {doc_id!r}): {e}") from None
    return tables


def save_embedding_file(tables: dict[str, EmbeddingTable], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id in sorted(tables):
            t = tables[doc_id]
            obj = {"doc_id": doc_id,
                   "h_cls": t.h_cls.tolist(),
                   "events": {k: t.events[k].tolist() for k in sorted(t.events)}}
            fh.write(json.dumps(obj) + "\n")


def load_precomputed(path, doc_id: str) -> EncoderOutput:
    """Frozen EncoderOutput for one document from an embedding file."""
    tables = load_embedding_file(path)
    table = tables.get(doc_id)
    if table is None:
        raise EncoderError(f"{path}: no embeddings for doc {doc_id!r}")
    return encode_frozen(sorted(table.events), table, doc_id=doc_id)
