"""The heterogeneous event/pair graph the reasoner attends over.

Nodes come in two kinds: one EVENT node per event mention and one PAIR
node per *ordered* pair of distinct events (both directions exist because
pair representations are order-dependent and the symmetry loss needs
both). Three edge families, all stored in both directions:

* EE  - between two events in the same coreference cluster
* PP  - between two pair nodes sharing at least one event
* EP  - between a pair node and exactly its two constituent events

Node order is canonical (events sorted by id, then pairs lexicographic),
so a document produces the same graph regardless of event list order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .corpus import Document

EDGE_EE = 0
EDGE_PP = 1
EDGE_EP = 2
EDGE_NAMES = ("EE", "PP", "EP")
NUM_EDGE_TYPES = 3

KIND_EVENT = "EVENT"
KIND_PAIR = "PAIR"


@dataclass
class EventPairGraph:
    doc_id: str
    event_ids: tuple[str, ...]                  # sorted; node i for i < k
    pairs: tuple[tuple[str, str], ...]          # node k + p for pair p
    edges_dst: np.ndarray                       # directed, sorted by (dst, src)
    edges_src: np.ndarray
    edges_type: np.ndarray
    seg_ptr: np.ndarray                         # CSR offsets into the edge arrays by dst

    @property
    def n_events(self) -> int:
        return len(self.event_ids)

    @property
    def n_nodes(self) -> int:
        return len(self.event_ids) + len(self.pairs)

    def event_index(self, eid: str) -> int:
        return self.event_ids.index(eid)

    def pair_row(self, e1: str, e2: str) -> int:
        """Index of the ordered pair among candidate pairs (= probs row)."""
        try:
            return self.pairs.index((e1, e2))
        except ValueError:
            raise KeyError(f"pair ({e1!r}, {e2!r}) is not in the graph") from None

    def pair_node(self, e1: str, e2: str) -> int:
        return self.n_events + self.pair_row(e1, e2)

    def node_kind(self, idx: int) -> str:
        return KIND_EVENT if idx < self.n_events else KIND_PAIR

    def neighbors(self, idx: int) -> list[tuple[int, int]]:
        """(neighbor index, edge type) pairs in deterministic node order."""
        if not 0 <= idx < self.n_nodes:
            raise KeyError(f"node {idx} not in graph of size {self.n_nodes}")
        lo, hi = self.seg_ptr[idx], self.seg_ptr[idx + 1]
        return [(int(s), int(t)) for s, t in zip(self.edges_src[lo:hi], self.edges_type[lo:hi])]

    def stats(self) -> dict[str, int]:
        """Node counts per kind and undirected edge counts per type."""
        counts = {"events": self.n_events, "pairs": len(self.pairs)}
        for code, name in enumerate(EDGE_NAMES):
            counts[name.lower()] = int((self.edges_type == code).sum()) // 2
        return counts

    def to_json(self) -> dict:
        nodes = [{"idx": i, "kind": KIND_EVENT, "event": eid}
                 for i, eid in enumerate(self.event_ids)]
        nodes += [{"idx": self.n_events + p, "kind": KIND_PAIR, "pair": list(pair)}
                  for p, pair in enumerate(self.pairs)]
        edges = [{"src": int(s), "dst": int(d), "type": EDGE_NAMES[t]}
                 for s, d, t in zip(self.edges_src, self.edges_dst, self.edges_type)]
        return {"doc_id": self.doc_id, "nodes": nodes, "edges": edges}


def build_graph(doc: Document, use_coref: bool = True,
                max_pair_distance: int | None = None,
                include_ep: bool = True) -> EventPairGraph:
    """Construct the graph for one document.

    ``max_pair_distance`` optionally drops pair nodes whose triggers are
    further apart than the given token distance, bounding the quadratic
    node blow-up on long documents. ``use_coref``/``include_ep`` are the
    structural ablation switches.
    """
    event_ids = tuple(sorted(e.id for e in doc.events))
    k = len(event_ids)
    if k < 2:
        warnings.warn(f"doc {doc.doc_id!r} has {k} event(s); graph has no pair nodes")
    start_of = {e.id: e.start for e in doc.events}

    pairs = []
    for a in event_ids:
        for b in event_ids:
            if a == b:
                continue
            if max_pair_distance is not None and abs(start_of[a] - start_of[b]) > max_pair_distance:
                continue
            pairs.append((a, b))
    pairs = tuple(sorted(pairs))
    pair_node = {pair: k + p for p, pair in enumerate(pairs)}
    ev_node = {eid: i for i, eid in enumerate(event_ids)}

    undirected: list[tuple[int, int, int]] = []

    if use_coref:
        for cluster in doc.coref_clusters:
            members = sorted(set(cluster))
            for i, a in enumerate(members):
                for b in members[i + 1:]:
                    undirected.append((ev_node[a], ev_node[b], EDGE_EE))

    # pair-pair edges: share at least one event id
    for p, (a, b) in enumerate(pairs):
        sa = {a, b}
        for q in range(p + 1, len(pairs)):
            c, d = pairs[q]
            if c in sa or d in sa:
                undirected.append((k + p, k + q, EDGE_PP))

    if include_ep:
        for (a, b), node in pair_node.items():
            undirected.append((node, ev_node[a], EDGE_EP))
            undirected.append((node, ev_node[b], EDGE_EP))

    n = k + len(pairs)
    directed = sorted([(x, y, t) for x, y, t in undirected]
                      + [(y, x, t) for x, y, t in undirected])
    if directed:
        arr = np.array(directed, dtype=np.int64)
        dst, src, typ = arr[:, 0], arr[:, 1], arr[:, 2]
    else:
        dst = src = typ = np.zeros(0, dtype=np.int64)
    seg_ptr = np.searchsorted(dst, np.arange(n + 1), side="left").astype(np.int64)

    return EventPairGraph(doc_id=doc.doc_id, event_ids=event_ids, pairs=pairs,
                          edges_dst=dst, edges_src=src, edges_type=typ, seg_ptr=seg_ptr)


def graph_stats(g: EventPairGraph) -> dict[str, int]:
    return g.stats()
