"""Documents, JSONL corpus I/O, and a synthetic corpus generator.

The generator samples a latent world per document: a forest of event
classes (children temporally nested inside their parent), intervals on a
unit timeline, and coreference clones that duplicate a class. Gold labels
are read off the world:

* same class                      -> COREF
* class ancestor / descendant     -> PARENT-CHILD / CHILD-PARENT
* same-parent classes, disjoint   -> BEFORE / AFTER (or VAGUE, sampled)
* everything else                 -> NOREL

Temporal labels are deliberately scoped to classes sharing a parent.
Cross-scope pairs are NOREL even when their intervals are disjoint;
together with restricting VAGUE to pairs no third sibling sits between,
this makes every generated document satisfy the shipped deduction table
exactly (including the mixed hierarchy/temporal entries), which the
coherence checker relies on.

Feature encoding (version 1): per event, ``[start, end, parent_start,
parent_end, depth/4]`` followed by sign bits of a hash of the parent
class id, plus Gaussian noise. Clones share the noiseless part.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoder import EmbeddingTable
from .labels import (AFTER, ALL_LABELS, BEFORE, CHILD_PARENT, COREF, NOREL,
                     PARENT_CHILD, VAGUE, reverse)
from .rng import key_rng, stable_bits

FEATURE_VERSION = 1

# chance that a sibling interval partially overlaps its predecessor,
# which is what produces NOREL pairs inside a scope
_OVERLAP_RATE = 0.15


class CorpusError(Exception):
    """Raised for I/O-level schema or consistency violations."""


@dataclass
class Event:
    id: str
    start: int
    end: int
    surface: str = ""


@dataclass
class Document:
    doc_id: str
    tokens: list[str]
    events: list[Event]
    coref_clusters: list[list[str]] = field(default_factory=list)
    gold: dict[tuple[str, str], str] = field(default_factory=dict)

    def event_ids(self) -> list[str]:
        return sorted(e.id for e in self.events)


@dataclass
class Corpus:
    documents: list[Document]
    embeddings: dict[str, EmbeddingTable] | None = None

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        if self.documents != other.documents:
            return False
        a, b = self.embeddings or {}, other.embeddings or {}
        if a.keys() != b.keys():
            return False
        return all(a[k] == b[k] for k in a)

    def __len__(self):
        return len(self.documents)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_document(doc: Document) -> list[str]:
    """All invariant violations in ``doc``; empty means well-formed."""
    problems: list[str] = []
    seen = set()
    n = len(doc.tokens)
    for ev in doc.events:
        if ev.id in seen:
            problems.append(f"duplicate event id {ev.id!r}")
        seen.add(ev.id)
        if not ev.start < ev.end:
            problems.append(f"event {ev.id!r}: empty span ({ev.start}, {ev.end})")
        if ev.start < 0 or ev.end > n:
            problems.append(f"event {ev.id!r}: span ({ev.start}, {ev.end}) outside 0..{n}")

    used = set()
    for cluster in doc.coref_clusters:
        for eid in cluster:
            if eid not in seen:
                problems.append(f"coref cluster references unknown event {eid!r}")
            if eid in used:
                problems.append(f"clusters not disjoint: event {eid!r} appears twice")
            used.add(eid)

    for (a, b), label in doc.gold.items():
        if a == b:
            problems.append(f"gold self-pair ({a!r}, {a!r})")
        for eid in (a, b):
            if eid not in seen:
                problems.append(f"gold references unknown event {eid!r}")
        if label not in ALL_LABELS:
            problems.append(f"gold pair ({a!r}, {b!r}): unknown label {label!r}")
            continue
        rev = doc.gold.get((b, a))
        if rev is not None and rev != reverse(label):
            if a < b:  # report each inconsistent pair once
                problems.append(
                    f"reversal inconsistency: gold({a!r},{b!r})={label} but "
                    f"gold({b!r},{a!r})={rev}")
    return problems


# ---------------------------------------------------------------------------
# JSONL I/O
# ---------------------------------------------------------------------------

_DOC_KEYS = {"doc_id", "tokens", "events", "coref_clusters", "gold"}
_EVENT_KEYS = {"id", "start", "end"}
_GOLD_KEYS = {"e1", "e2", "label"}


def _parse_document(obj, where: str) -> Document:
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}: document line must be a JSON object")
    doc_id = obj.get("doc_id")
    unknown = set(obj) - _DOC_KEYS
    if unknown:
        raise CorpusError(f"{where} (doc {doc_id!r}): unknown fields {sorted(unknown)}")
    for req in ("doc_id", "tokens", "events"):
        if req not in obj:
            raise CorpusError(f"{where} (doc {doc_id!r}): missing field {req!r}")
    tokens = obj["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise CorpusError(f"{where} (doc {doc_id!r}): field 'tokens' must be a list of strings")

    events = []
    for ev in obj["events"]:
        if not isinstance(ev, dict) or set(ev) != _EVENT_KEYS:
            raise CorpusError(f"{where} (doc {doc_id!r}): field 'events' entries need exactly "
                              f"keys {sorted(_EVENT_KEYS)}")
        if not isinstance(ev["start"], int) or not isinstance(ev["end"], int):
            raise CorpusError(f"{where} (doc {doc_id!r}): event {ev['id']!r} span must be integers")
        surface = " ".join(tokens[ev["start"]:ev["end"]])
        events.append(Event(id=str(ev["id"]), start=ev["start"], end=ev["end"], surface=surface))

    clusters = [list(map(str, c)) for c in obj.get("coref_clusters", [])]

    gold: dict[tuple[str, str], str] = {}
    for item in obj.get("gold", []):
        if not isinstance(item, dict) or set(item) != _GOLD_KEYS:
            raise CorpusError(f"{where} (doc {doc_id!r}): field 'gold' entries need exactly "
                              f"keys {sorted(_GOLD_KEYS)}")
        a, b, label = str(item["e1"]), str(item["e2"]), str(item["label"])
        if label not in ALL_LABELS:
            raise CorpusError(f"{where} (doc {doc_id!r}): field 'gold' has unknown label {label!r}")
        if (a, b) in gold and gold[(a, b)] != label:
            raise CorpusError(f"{where} (doc {doc_id!r}): field 'gold' repeats pair ({a!r},{b!r})")
        gold[(a, b)] = label
    # materialize the reverse direction; explicit file entries must agree
    for (a, b), label in list(gold.items()):
        want = reverse(label)
        have = gold.get((b, a))
        if have is None:
            gold[(b, a)] = want
        elif have != want:
            raise CorpusError(f"{where} (doc {doc_id!r}): field 'gold' reversal inconsistency "
                              f"on pair ({a!r},{b!r}): {label} vs {have}")

    doc = Document(doc_id=str(doc_id), tokens=list(tokens), events=events,
                   coref_clusters=clusters, gold=gold)
    problems = validate_document(doc)
    if problems:
        raise CorpusError(f"{where} (doc {doc_id!r}): " + "; ".join(problems))
    return doc


def load_corpus(path, features_path=None) -> Corpus:
    """Read a JSONL corpus (optionally with a feature/embedding sidecar)."""
    docs = []
    seen_ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {e}") from None
            doc = _parse_document(obj, f"{path}:{lineno}")
            if doc.doc_id in seen_ids:
                raise CorpusError(f"{path}:{lineno}: duplicate doc_id {doc.doc_id!r}")
            seen_ids.add(doc.doc_id)
            docs.append(doc)
    embeddings = None
    if features_path is not None:
        from .encoder import load_embedding_file
        embeddings = load_embedding_file(features_path)
    return Corpus(documents=docs, embeddings=embeddings)


def save_corpus(corpus: Corpus, path, features_path=None) -> None:
    """Write JSONL with gold stored once per pair in canonical order."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            canonical = [{"e1": a, "e2": b, "label": label}
                         for (a, b), label in sorted(doc.gold.items()) if a < b]
            obj = {
                "doc_id": doc.doc_id,
                "tokens": doc.tokens,
                "events": [{"id": e.id, "start": e.start, "end": e.end} for e in doc.events],
                "coref_clusters": [sorted(c) for c in sorted(doc.coref_clusters)],
                "gold": canonical,
            }
            fh.write(json.dumps(obj) + "\n")
    if features_path is not None and corpus.embeddings is not None:
        from .encoder import save_embedding_file
        save_embedding_file(corpus.embeddings, features_path)


# ---------------------------------------------------------------------------
# synthetic world
# ---------------------------------------------------------------------------

@dataclass
class SyntheticWorldConfig:
    docs: int = 80
    events_min: int = 6
    events_max: int = 10
    coref_rate: float = 0.1
    containment_rate: float = 0.3
    vague_rate: float = 0.05
    feature_dim: int = 12
    noise_std: float = 0.05
    seed: int = 7

    def validate(self) -> None:
        for name in ("coref_rate", "containment_rate", "vague_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.feature_dim < 6:
            raise ValueError(f"feature_dim must be >= 6, got {self.feature_dim}")
        if self.docs <= 0:
            raise ValueError("docs must be positive")
        if not 1 <= self.events_min <= self.events_max:
            raise ValueError(f"bad events range {self.events_min}..{self.events_max}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


class _World:
    """Latent class forest with intervals, built per document."""

    def __init__(self):
        self.parent: list[int] = []     # class -> parent class or -1
        self.children: list[list[int]] = []
        self.interval: list[tuple[float, float]] = []

    def add_class(self, parent: int) -> int:
        cid = len(self.parent)
        self.parent.append(parent)
        self.children.append([])
        self.interval.append((0.0, 1.0))
        if parent >= 0:
            self.children[parent].append(cid)
        return cid

    def roots(self) -> list[int]:
        return [c for c, p in enumerate(self.parent) if p < 0]

    def ancestors(self, c: int) -> set[int]:
        out = set()
        p = self.parent[c]
        while p >= 0:
            out.add(p)
            p = self.parent[p]
        return out

    def depth(self, c: int) -> int:
        return len(self.ancestors(c))


def _layout(world: _World, cids: list[int], lo: float, hi: float, rng) -> None:
    """Place sibling intervals left to right inside (lo, hi).

    Siblings are disjoint with gaps, except that with a small probability a
    sibling is pulled back to straddle its predecessor's right half. Child
    scopes recurse strictly inside their parent.
    """
    n = len(cids)
    widths = rng.uniform(1.0, 2.0, size=n)
    gaps = rng.uniform(0.2, 1.0, size=n + 1)
    scale = (hi - lo) / (widths.sum() + gaps.sum())
    cur = lo
    prev: int | None = None
    for i, cid in enumerate(cids):
        cur += gaps[i] * scale
        s = cur
        cur += widths[i] * scale
        e = cur
        if prev is not None and rng.random() < _OVERLAP_RATE:
            ps, pe = world.interval[prev]
            s = 0.5 * (ps + pe)  # partial overlap: starts inside prev, ends after it
        world.interval[cid] = (s, e)
        prev = cid
        if world.children[cid]:
            margin = 0.05 * (e - s)
            _layout(world, world.children[cid], s + margin, e - margin, rng)


def _scope_vague_pairs(world: _World, members: list[int], rng, rate: float) -> set[frozenset]:
    """Sample VAGUE class pairs within one sibling scope.

    Only pairs with no third sibling entirely inside their gap qualify;
    those are exactly the pairs no BEFORE-chain can force, so vagueness
    never contradicts the deduction table.
    """
    out: set[frozenset] = set()
    if rate <= 0.0 or len(members) < 2:
        return out
    for a in members:
        for b in members:
            if a >= b:
                continue
            sa, ea = world.interval[a]
            sb, eb = world.interval[b]
            if ea < sb:
                gap = (ea, sb)
            elif eb < sa:
                gap = (eb, sa)
            else:
                continue  # overlapping -> NOREL, never VAGUE
            witnessed = any(world.interval[c][0] > gap[0] and world.interval[c][1] < gap[1]
                            for c in members if c not in (a, b))
            if not witnessed and rng.random() < rate:
                out.add(frozenset((a, b)))
    return out


def _class_label(world: _World, a: int, b: int, vague: set[frozenset]) -> str:
    if a in world.ancestors(b):
        return PARENT_CHILD
    if b in world.ancestors(a):
        return CHILD_PARENT
    if world.parent[a] == world.parent[b]:
        if frozenset((a, b)) in vague:
            return VAGUE
        sa, ea = world.interval[a]
        sb, eb = world.interval[b]
        if ea < sb:
            return BEFORE
        if eb < sa:
            return AFTER
        return NOREL  # overlapping siblings
    return NOREL  # different scopes carry no temporal commitment


def _generate_document(cfg: SyntheticWorldConfig, index: int) -> tuple[Document, EmbeddingTable]:
    rng = key_rng(cfg.seed, "doc", index)
    doc_id = f"d{index:04d}"
    k = int(rng.integers(cfg.events_min, cfg.events_max + 1))

    world = _World()
    class_of: list[int] = []
    for t in range(k):
        if class_of and rng.random() < cfg.coref_rate:
            class_of.append(int(rng.integers(0, len(world.parent))))
            continue
        parent = -1
        if world.parent and rng.random() < cfg.containment_rate:
            parent = int(rng.integers(0, len(world.parent)))
        class_of.append(world.add_class(parent))

    _layout(world, world.roots(), 0.0, 1.0, rng)

    vague: set[frozenset] = set()
    scopes: dict[int, list[int]] = {}
    for c, p in enumerate(world.parent):
        scopes.setdefault(p, []).append(c)
    for p in sorted(scopes):
        vague |= _scope_vague_pairs(world, scopes[p], rng, cfg.vague_rate)

    ids = [f"e{t:02d}" for t in range(k)]
    tokens = [f"evt{t}" for t in range(k)]
    events = [Event(id=ids[t], start=t, end=t + 1, surface=tokens[t]) for t in range(k)]

    gold: dict[tuple[str, str], str] = {}
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            ci, cj = class_of[i], class_of[j]
            gold[(ids[i], ids[j])] = COREF if ci == cj else _class_label(world, ci, cj, vague)

    members: dict[int, list[str]] = {}
    for t, c in enumerate(class_of):
        members.setdefault(c, []).append(ids[t])
    clusters = [sorted(v) for c, v in sorted(members.items()) if len(v) > 1]

    n_bits = cfg.feature_dim - 5
    feats: dict[str, np.ndarray] = {}
    for t in range(k):
        c = class_of[t]
        s, e = world.interval[c]
        p = world.parent[c]
        ps, pe = world.interval[p] if p >= 0 else (0.0, 1.0)
        base = np.array([s, e, ps, pe, world.depth(c) / 4.0])
        bits = stable_bits(f"{doc_id}:scope{p}", n_bits)
        noise = rng.normal(0.0, cfg.noise_std, size=cfg.feature_dim)
        feats[ids[t]] = np.concatenate([base, bits]) + noise

    h_cls = np.mean([feats[i] for i in ids], axis=0)
    doc = Document(doc_id=doc_id, tokens=tokens, events=events,
                   coref_clusters=clusters, gold=gold)
    return doc, EmbeddingTable(h_cls=h_cls, events=feats)


def generate_synthetic(cfg: SyntheticWorldConfig) -> Corpus:
    """Deterministic synthetic corpus; each document keyed by (seed, index)."""
    cfg.validate()
    docs = []
    tables = {}
    for i in range(cfg.docs):
        doc, table = _generate_document(cfg, i)
        docs.append(doc)
        tables[doc.doc_id] = table
    return Corpus(documents=docs, embeddings=tables)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split(corpus: Corpus, ratios: tuple[float, float, float], seed: int) -> tuple[Corpus, Corpus, Corpus]:
    """Document-level partition by largest-remainder apportionment."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"need three non-negative ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(corpus.documents)
    if all(r > 0 for r in ratios) and n < 3:
        raise CorpusError(f"cannot split {n} documents three ways")

    quotas = [n * r for r in ratios]
    sizes = [int(q) for q in quotas]
    order = sorted(range(3), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in range(n - sum(sizes)):
        sizes[order[i % 3]] += 1

    perm = key_rng(seed, "split").permutation(n)
    emb = corpus.embeddings or {}
    out = []
    at = 0
    for size in sizes:
        chosen = [corpus.documents[p] for p in perm[at:at + size]]
        tables = {d.doc_id: emb[d.doc_id] for d in chosen if d.doc_id in emb}
        out.append(Corpus(documents=chosen, embeddings=tables or None))
        at += size
    return out[0], out[1], out[2]
