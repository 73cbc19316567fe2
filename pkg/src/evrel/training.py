"""Loss terms, AdamW, and the seeded training loop with early stopping.

Three losses combine: multi-class cross-entropy over gold pairs, a
reversal-coherence penalty comparing each ordered pair with its flip in
log space, and a deduction-coherence penalty over sampled event triples.
The deduction penalty turns each table rule r1(i,j) & r2(j,k) -> r3(i,k)
into ``g(log p[r1] + log p[r2] - log p[r3])`` and each excluded label r4
into ``g(log p[r1] + log p[r2] - log(1 - p[r4]))``, with g = max(0, .)
in HINGE mode (one-sided, the product-logic reading) or |.| in ABS mode.
Probabilities are clipped below at 1e-12 before logs so hard 0/1 tables
stay finite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from itertools import permutations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .corpus import Corpus, Document
from .encoder import EmbeddingTable, EncoderOutput, encode_frozen, encode_toy
from .evaluation import (conjunction_violation_rate, micro_prf,
                         symmetry_violation_rate)
from .graph import EventPairGraph, build_graph
from .labels import ConjunctionTable, LabelSpace, default_table, reverse
from .reasoner import ConfigError, ModelConfig, ReasonerParams, forward_document
from .rng import key_rng

PROB_FLOOR = 1e-12


class NumericError(Exception):
    """Non-finite loss or failed numeric check."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch: int = 1
    max_epochs: int = 200
    patience: int = 20
    conj_mode: str = "HINGE"
    conj_triple_budget: int = 200
    seed: int = 0

    def __post_init__(self):
        self.conj_mode = self.conj_mode.upper()
        if self.conj_mode not in ("HINGE", "ABS"):
            raise ConfigError(f"conj_mode must be HINGE or ABS, got {self.conj_mode!r}")
        if self.conj_triple_budget < 0:
            raise ConfigError("conj_triple_budget must be >= 0")
        if self.lr <= 0 or self.batch <= 0 or self.max_epochs <= 0 or self.patience < 0:
            raise ConfigError("bad training hyperparameters")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        return cls(**obj)


# ---------------------------------------------------------------------------
# compiled rule indices
# ---------------------------------------------------------------------------

@dataclass
class CompiledTable:
    """Deduction rules flattened to label-index column patterns.

    For one triple with pair rows (a, b, c) the loss instantiates every
    pattern position: t1 positions need p_c[r3] high, t2 positions need
    p_c[r4] low.
    """

    t1_r1: np.ndarray
    t1_r2: np.ndarray
    t1_r3: np.ndarray
    t2_r1: np.ndarray
    t2_r2: np.ndarray
    t2_r4: np.ndarray

    @property
    def width(self) -> tuple[int, int]:
        return len(self.t1_r1), len(self.t2_r1)


def compile_table(table: ConjunctionTable, space: LabelSpace) -> CompiledTable:
    t1, t2 = [], []
    full = set(space.labels)
    for (r1, r2), de in sorted(table.constrained(space).items()):
        i1, i2 = space.index(r1), space.index(r2)
        for r3 in sorted(de):
            t1.append((i1, i2, space.index(r3)))
        for r4 in sorted(full - de):
            t2.append((i1, i2, space.index(r4)))

    def cols(rows, j):
        return np.array([r[j] for r in rows], dtype=np.int64)

    return CompiledTable(cols(t1, 0), cols(t1, 1), cols(t1, 2),
                         cols(t2, 0), cols(t2, 1), cols(t2, 2))


@dataclass
class SymIndices:
    rows_fwd: np.ndarray   # prob row of (i, j), repeated per symmetric label
    cols_fwd: np.ndarray
    rows_rev: np.ndarray   # prob row of (j, i)
    cols_rev: np.ndarray
    n_unordered: int


def build_sym_indices(g: EventPairGraph, space: LabelSpace) -> SymIndices:
    row_of = {pair: r for r, pair in enumerate(g.pairs)}
    sym_labels = [l for l in space.labels if l in space.symmetric_set]
    cols = np.array([space.index(l) for l in sym_labels], dtype=np.int64)
    cols_rev = np.array([space.index(reverse(l)) for l in sym_labels], dtype=np.int64)
    fwd_rows, rev_rows = [], []
    for (a, b), r in sorted(row_of.items()):
        if a >= b:
            continue
        r_back = row_of.get((b, a))
        if r_back is None:
            raise ValueError(f"doc {g.doc_id!r}: pair ({a!r},{b!r}) has no reverse-direction "
                             f"prediction; the symmetry loss needs both orders")
        fwd_rows.append(r)
        rev_rows.append(r_back)
    n = len(fwd_rows)
    m = len(sym_labels)
    return SymIndices(
        rows_fwd=np.repeat(np.array(fwd_rows, dtype=np.int64), m),
        cols_fwd=np.tile(cols, n),
        rows_rev=np.repeat(np.array(rev_rows, dtype=np.int64), m),
        cols_rev=np.tile(cols_rev, n),
        n_unordered=n,
    )


def sample_triples(g: EventPairGraph, budget: int | None, rng) -> np.ndarray:
    """[T, 3] prob-row indices for (i,j), (j,k), (i,k) of sampled triples.

    ``budget`` caps the count (uniform sample without replacement); 0 keeps
    none, None keeps all. Enumeration is exhaustive below the cap.
    """
    if budget == 0:
        return np.zeros((0, 3), dtype=np.int64)
    row_of = {pair: r for r, pair in enumerate(g.pairs)}
    triples = []
    for i, j, k in permutations(g.event_ids, 3):
        a, b, c = row_of.get((i, j)), row_of.get((j, k)), row_of.get((i, k))
        if a is not None and b is not None and c is not None:
            triples.append((a, b, c))
    if not triples:
        return np.zeros((0, 3), dtype=np.int64)
    arr = np.array(triples, dtype=np.int64)
    if budget is not None and len(arr) > budget:
        keep = np.sort(rng.choice(len(arr), size=budget, replace=False))
        arr = arr[keep]
    return arr


# ---------------------------------------------------------------------------
# loss terms (tensor level)
# ---------------------------------------------------------------------------

def _safe_log(probs: Tensor) -> Tensor:
    return ad.log(ad.clip_min(probs, PROB_FLOOR))


def _safe_log1m(probs: Tensor) -> Tensor:
    return ad.log(ad.clip_min(ad.scalar_add(ad.neg(probs), 1.0), PROB_FLOOR))


def ce_loss(probs: Tensor, gold_rows: np.ndarray, gold_cols: np.ndarray) -> Tensor:
    """Mean -log p[gold] over gold ordered pairs."""
    if len(gold_rows) == 0:
        return Tensor(0.0)
    picked = ad.gather2d(_safe_log(probs), gold_rows, gold_cols)
    return ad.scalar_mul(ad.sum_all(picked), -1.0 / len(gold_rows))


def sym_loss(probs: Tensor, idx: SymIndices) -> Tensor:
    """Sum of |log p_ij[r] - log p_ji[reverse(r)]| over pairs and labels,
    normalized by the unordered pair count."""
    if idx.n_unordered == 0:
        return Tensor(0.0)
    logp = _safe_log(probs)
    diff = ad.sub(ad.gather2d(logp, idx.rows_fwd, idx.cols_fwd),
                  ad.gather2d(logp, idx.rows_rev, idx.cols_rev))
    return ad.scalar_mul(ad.sum_all(ad.absval(diff)), 1.0 / idx.n_unordered)


def conjunction_terms(probs: Tensor, triples: np.ndarray, compiled: CompiledTable,
                      mode: str = "HINGE") -> Tensor:
    """Raw per-rule-instantiation penalties for the sampled triples.

    One entry per (triple, rule, conclusion label); callers normalize.
    """
    n1, n2 = compiled.width
    t = len(triples)
    if t == 0 or (n1 + n2) == 0:
        return Tensor(np.zeros(0))
    logp = _safe_log(probs)
    log1m = _safe_log1m(probs)

    def gathered(src, tri_col, pattern, width):
        rows = np.repeat(triples[:, tri_col], width)
        cols = np.tile(pattern, t)
        return ad.gather2d(src, rows, cols)

    z1 = ad.sub(ad.add(gathered(logp, 0, compiled.t1_r1, n1),
                       gathered(logp, 1, compiled.t1_r2, n1)),
                gathered(logp, 2, compiled.t1_r3, n1))
    z2 = ad.sub(ad.add(gathered(logp, 0, compiled.t2_r1, n2),
                       gathered(logp, 1, compiled.t2_r2, n2)),
                gathered(log1m, 2, compiled.t2_r4, n2))
    z = ad.concat([z1, z2], axis=0)
    return ad.relu(z) if mode.upper() == "HINGE" else ad.absval(z)


def conj_loss(probs: Tensor, triples: np.ndarray, compiled: CompiledTable,
              mode: str = "HINGE") -> Tensor:
    terms = conjunction_terms(probs, triples, compiled, mode)
    n = terms.data.size
    if n == 0:
        return Tensor(0.0)
    return ad.scalar_mul(ad.sum_all(terms), 1.0 / n)


# ---------------------------------------------------------------------------
# per-document state
# ---------------------------------------------------------------------------

@dataclass
class DocState:
    doc: Document
    graph: EventPairGraph
    table: EmbeddingTable | None
    gold_rows: np.ndarray
    gold_cols: np.ndarray
    sym: SymIndices
    triples: np.ndarray
    frozen_enc: EncoderOutput | None = None

    @property
    def doc_id(self) -> str:
        return self.doc.doc_id


def build_doc_state(doc: Document, emb: EmbeddingTable | None, cfg: ModelConfig,
                    triple_budget: int = 0, triple_seed: int = 0) -> DocState:
    g = build_graph(doc, use_coref=cfg.use_coref, include_ep=cfg.use_ep_edges)
    space = cfg.label_space
    rows, cols = [], []
    for r, pair in enumerate(g.pairs):
        label = doc.gold.get(pair)
        if label is not None and label in space:
            rows.append(r)
            cols.append(space.index(label))
    state = DocState(
        doc=doc, graph=g, table=emb,
        gold_rows=np.array(rows, dtype=np.int64),
        gold_cols=np.array(cols, dtype=np.int64),
        sym=build_sym_indices(g, space),
        triples=sample_triples(g, triple_budget, key_rng(triple_seed, "triples", doc.doc_id)),
    )
    if cfg.encoder == "precomputed":
        if emb is None:
            raise ConfigError(f"doc {doc.doc_id!r}: precomputed encoder needs an embedding table")
        state.frozen_enc = encode_frozen(g.event_ids, emb, doc_id=doc.doc_id)
    return state


def encode_state(state: DocState, params: ReasonerParams, cfg: ModelConfig) -> EncoderOutput:
    if cfg.encoder == "precomputed":
        return state.frozen_enc
    if state.table is None:
        raise ConfigError(f"doc {state.doc_id!r}: toy encoder needs per-event features")
    return encode_toy(state.graph.event_ids, state.table, params.encoder, doc_id=state.doc_id)


def total_loss(probs: Tensor, state: DocState, cfg: ModelConfig,
               compiled: CompiledTable, conj_mode: str = "HINGE") -> tuple[Tensor, dict]:
    """Cross-entropy plus gamma-weighted coherence terms.

    A gamma of zero skips its term entirely, so ablations are exact.
    """
    l1 = ce_loss(probs, state.gold_rows, state.gold_cols)
    total = l1
    comps = {"L1": float(l1.data)}
    if cfg.gamma_sym > 0:
        ls = sym_loss(probs, state.sym)
        total = ad.add(total, ad.scalar_mul(ls, cfg.gamma_sym))
        comps["Lsym"] = float(ls.data)
    else:
        comps["Lsym"] = 0.0
    if cfg.gamma_conj > 0:
        lc = conj_loss(probs, state.triples, compiled, conj_mode)
        total = ad.add(total, ad.scalar_mul(lc, cfg.gamma_conj))
        comps["Lconj"] = float(lc.data)
    else:
        comps["Lconj"] = 0.0
    return total, comps


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict[str, Tensor], state: AdamWState, lr: float,
               weight_decay: float = 0.0, betas: tuple[float, float] = (0.9, 0.999),
               eps: float = 1e-8) -> None:
    """Decoupled-weight-decay Adam update with bias correction; zeroes grads."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        p.zero_grad()


# ---------------------------------------------------------------------------
# prediction tables
# ---------------------------------------------------------------------------

@dataclass
class DocPrediction:
    pairs: tuple[tuple[str, str], ...]
    probs: np.ndarray
    gold: dict[tuple[str, str], str] | None = None


@dataclass
class PredictionTable:
    labels: tuple[str, ...]
    docs: dict[str, DocPrediction]

    def argmax_labels(self) -> dict[str, dict[tuple[str, str], str]]:
        out = {}
        for doc_id, dp in self.docs.items():
            picks = np.argmax(dp.probs, axis=1)
            out[doc_id] = {pair: self.labels[picks[r]] for r, pair in enumerate(dp.pairs)}
        return out

    def gold_labels(self) -> dict[str, dict[tuple[str, str], str]]:
        return {doc_id: dict(dp.gold) for doc_id, dp in self.docs.items() if dp.gold}


def predict_states(states: list[DocState], params: ReasonerParams,
                   cfg: ModelConfig) -> PredictionTable:
    docs = {}
    for state in states:
        enc = encode_state(state, params, cfg)
        probs = forward_document(enc, state.graph, params, cfg, training=False)
        docs[state.doc_id] = DocPrediction(pairs=state.graph.pairs,
                                           probs=probs.data.copy(),
                                           gold=dict(state.doc.gold))
    return PredictionTable(labels=cfg.label_space.labels, docs=docs)


def predict(corpus: Corpus, params: ReasonerParams, cfg: ModelConfig) -> PredictionTable:
    states = [build_doc_state(doc, (corpus.embeddings or {}).get(doc.doc_id), cfg)
              for doc in corpus.documents if len(doc.events) >= 2]
    return predict_states(states, params, cfg)


# ---------------------------------------------------------------------------
# table-level losses (diagnostics / tests)
# ---------------------------------------------------------------------------

def loss_ce(preds: PredictionTable) -> float:
    """Mean over docs of the per-doc mean -log p[gold]."""
    space = LabelSpace.from_mode(_mode_for(preds.labels))
    vals = []
    for dp in preds.docs.values():
        row_of = {pair: r for r, pair in enumerate(dp.pairs)}
        rows = [(row_of[p], space.index(l)) for p, l in sorted((dp.gold or {}).items())
                if p in row_of and l in space]
        if not rows:
            continue
        r, c = np.array([x[0] for x in rows]), np.array([x[1] for x in rows])
        vals.append(float(ce_loss(Tensor(dp.probs), r, c).data))
    return float(np.mean(vals)) if vals else 0.0


def loss_sym(preds: PredictionTable) -> float:
    vals = []
    space = LabelSpace.from_mode(_mode_for(preds.labels))
    for dp in preds.docs.values():
        idx = _sym_indices_for(dp.pairs, space)
        vals.append(float(sym_loss(Tensor(dp.probs), idx).data))
    return float(np.mean(vals)) if vals else 0.0


def loss_conj(preds: PredictionTable, table: ConjunctionTable, mode: str = "HINGE",
              budget: int | None = None, seed: int = 0) -> float:
    space = LabelSpace.from_mode(_mode_for(preds.labels))
    compiled = compile_table(table, space)
    vals = []
    for doc_id, dp in sorted(preds.docs.items()):
        triples = _all_triples(dp.pairs, budget, key_rng(seed, "triples", doc_id))
        vals.append(float(conj_loss(Tensor(dp.probs), triples, compiled, mode).data))
    return float(np.mean(vals)) if vals else 0.0


def _mode_for(labels: tuple[str, ...]) -> str:
    for mode in ("JOINT", "SPLIT_TRE", "SPLIT_SRE"):
        if LabelSpace.from_mode(mode).labels == tuple(labels):
            return mode
    raise ValueError(f"label tuple {labels} matches no label space")


def _sym_indices_for(pairs, space: LabelSpace) -> SymIndices:
    row_of = {pair: r for r, pair in enumerate(pairs)}
    sym_labels = [l for l in space.labels if l in space.symmetric_set]
    cols = np.array([space.index(l) for l in sym_labels], dtype=np.int64)
    cols_rev = np.array([space.index(reverse(l)) for l in sym_labels], dtype=np.int64)
    fwd, rev = [], []
    for (a, b), r in sorted(row_of.items()):
        if a < b and (b, a) in row_of:
            fwd.append(r)
            rev.append(row_of[(b, a)])
    m = len(sym_labels)
    return SymIndices(np.repeat(np.array(fwd, dtype=np.int64), m), np.tile(cols, len(fwd)),
                      np.repeat(np.array(rev, dtype=np.int64), m), np.tile(cols_rev, len(fwd)),
                      len(fwd))


def _all_triples(pairs, budget: int | None, rng) -> np.ndarray:
    if budget == 0:
        return np.zeros((0, 3), dtype=np.int64)
    row_of = {pair: r for r, pair in enumerate(pairs)}
    ids = sorted({e for pair in pairs for e in pair})
    triples = []
    for i, j, k in permutations(ids, 3):
        a, b, c = row_of.get((i, j)), row_of.get((j, k)), row_of.get((i, k))
        if a is not None and b is not None and c is not None:
            triples.append((a, b, c))
    arr = np.array(triples, dtype=np.int64) if triples else np.zeros((0, 3), dtype=np.int64)
    if budget is not None and len(arr) > budget:
        arr = arr[np.sort(rng.choice(len(arr), size=budget, replace=False))]
    return arr


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ReasonerParams
    model_cfg: ModelConfig
    history: list[dict]
    best_epoch: int
    best_dev_f1: float


def _dev_metrics(states: list[DocState], params: ReasonerParams, cfg: ModelConfig,
                 table: ConjunctionTable) -> dict:
    preds = predict_states(states, params, cfg)
    labels = preds.argmax_labels()
    gold = preds.gold_labels()
    space = cfg.label_space
    core = micro_prf(labels, gold, space)
    return {
        "dev_micro_f1": core["micro"]["f1"],
        "sym_violation": symmetry_violation_rate(labels),
        "conj_violation": conjunction_violation_rate(labels, table, space),
    }


def train(train_corpus: Corpus, dev_corpus: Corpus, model_cfg: ModelConfig,
          train_cfg: TrainConfig, table: ConjunctionTable | None = None,
          log=None) -> TrainResult:
    """Epoch loop with shuffling, per-document updates, and dev early stopping.

    Emits one JSON-serializable metrics dict per epoch through ``log`` and
    in the returned history. The best-dev parameters are restored before
    returning. Raises NumericError if any loss goes non-finite.
    """
    table = table if table is not None else default_table()
    space = model_cfg.label_space
    compiled = compile_table(table, space)

    emb = train_corpus.embeddings or {}
    if model_cfg.encoder == "toy" and model_cfg.feature_dim is None:
        dims = {t.dim for t in emb.values()}
        if len(dims) != 1:
            raise ConfigError(f"cannot infer feature_dim from corpus (dims seen: {sorted(dims)})")
        model_cfg = replace(model_cfg, feature_dim=dims.pop())

    params = ReasonerParams(model_cfg, feature_dim=model_cfg.feature_dim)
    named = params.named()

    if model_cfg.encoder == "precomputed":
        dims = {t.dim for t in emb.values()}
        if dims and dims != {model_cfg.d}:
            raise ConfigError(f"precomputed embedding dim {sorted(dims)} != model d={model_cfg.d}")

    def states_for(corpus: Corpus, with_triples: bool) -> list[DocState]:
        out = []
        for doc in corpus.documents:
            if len(doc.events) < 2:
                continue
            out.append(build_doc_state(
                doc, (corpus.embeddings or {}).get(doc.doc_id), model_cfg,
                triple_budget=train_cfg.conj_triple_budget if with_triples else 0,
                triple_seed=train_cfg.seed))
        return out

    train_states = states_for(train_corpus, with_triples=True)
    dev_states = states_for(dev_corpus, with_triples=False)
    if not train_states:
        raise ConfigError("no trainable documents (need >= 2 events each)")

    opt = AdamWState()
    history: list[dict] = []
    best_f1 = -1.0
    best_epoch = 0
    best_snapshot = {name: t.data.copy() for name, t in named.items()}
    stale = 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = key_rng(train_cfg.seed, "shuffle", epoch).permutation(len(train_states))
        sums = {"total": 0.0, "L1": 0.0, "Lsym": 0.0, "Lconj": 0.0}
        pending = 0
        for pos, di in enumerate(order):
            state = train_states[di]
            with Tape() as tape:
                enc = encode_state(state, params, model_cfg)
                probs = forward_document(enc, state.graph, params, model_cfg,
                                         training=True,
                                         rng_key=(train_cfg.seed, epoch, int(di)))
                loss, comps = total_loss(probs, state, model_cfg, compiled,
                                         train_cfg.conj_mode)
            val = float(loss.data)
            if not np.isfinite(val):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, doc {state.doc_id!r}: "
                    f"total={val}, components={comps}")
            ad.backward(loss, tape)
            sums["total"] += val
            for k in ("L1", "Lsym", "Lconj"):
                sums[k] += comps[k]
            pending += 1
            if pending == train_cfg.batch or pos == len(order) - 1:
                adamw_step(named, opt, train_cfg.lr, train_cfg.weight_decay)
                pending = 0

        n = len(train_states)
        record = {"epoch": epoch,
                  "train_loss": sums["total"] / n,
                  "L1": sums["L1"] / n,
                  "Lsym": sums["Lsym"] / n,
                  "Lconj": sums["Lconj"] / n}
        record.update(_dev_metrics(dev_states, params, model_cfg, table)
                      if dev_states else
                      {"dev_micro_f1": 0.0, "sym_violation": 0.0, "conj_violation": 0.0})
        history.append(record)
        if log is not None:
            log(json.dumps(record))

        if record["dev_micro_f1"] > best_f1 + 1e-12:
            best_f1 = record["dev_micro_f1"]
            best_epoch = epoch
            best_snapshot = {name: t.data.copy() for name, t in named.items()}
            stale = 0
        else:
            stale += 1
        if stale >= train_cfg.patience:
            break

    for name, t in named.items():
        t.data = best_snapshot[name]
    return TrainResult(params=params, model_cfg=model_cfg, history=history,
                       best_epoch=best_epoch, best_dev_f1=best_f1)
