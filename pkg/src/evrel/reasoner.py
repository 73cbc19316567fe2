"""Relational graph attention over the event/pair graph, plus the pair classifier.

Event nodes start from projected encoder embeddings, pair nodes from the
concatenation of their two event embeddings (order matters). Each layer
runs masked multi-head attention restricted to graph neighbors, with an
optional learned scalar bias per edge type added to the logits, then an
output projection, layer norm, and dropout. The classifier scores an
ordered pair from [document vector || event i || event j || pair node].
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderOutput, ToyEncoderParams
from .graph import NUM_EDGE_TYPES, EventPairGraph
from .labels import LabelSpace
from .rng import key_rng


class ConfigError(Exception):
    pass


@dataclass
class ModelConfig:
    d: int = 16
    layers: int = 2
    heads: int = 2
    d_k: int | None = None
    dropout: float = 0.2
    label_mode: str = "JOINT"
    use_edge_bias: bool = True
    use_ep_edges: bool = True
    use_coref: bool = True
    gamma_sym: float = 0.2
    gamma_conj: float = 0.2
    encoder: str = "toy"            # "toy" | "precomputed"
    feature_dim: int | None = None  # toy encoder input width; inferred from data if None
    seed: int = 0

    def __post_init__(self):
        if self.d <= 0 or self.layers < 0 or self.heads <= 0:
            raise ConfigError(f"bad model dimensions d={self.d} layers={self.layers} heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.gamma_sym < 0 or self.gamma_conj < 0:
            raise ConfigError("loss coefficients must be non-negative")
        if self.encoder not in ("toy", "precomputed"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        self.label_mode = self.label_mode.upper()
        LabelSpace.from_mode(self.label_mode)  # validates

    @property
    def dk(self) -> int:
        return self.d_k if self.d_k is not None else max(1, (2 * self.d) // self.heads)

    @property
    def label_space(self) -> LabelSpace:
        return LabelSpace.from_mode(self.label_mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**obj)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class LayerParams:
    w_q: list[Tensor]
    w_k: list[Tensor]
    w_v: list[Tensor]
    w_o: Tensor
    ln_gain: Tensor
    ln_bias: Tensor


def _uniform(rng, rows: int, cols: int) -> Tensor:
    bound = 1.0 / np.sqrt(rows)
    return ad.parameter(rng.uniform(-bound, bound, size=(rows, cols)))


class ReasonerParams:
    """All learnable tensors, addressable by stable names for the optimizer."""

    def __init__(self, cfg: ModelConfig, feature_dim: int | None = None):
        rng = key_rng(cfg.seed, "init")
        d, width, dk = cfg.d, 2 * cfg.d, cfg.dk
        self.encoder: ToyEncoderParams | None = None
        if cfg.encoder == "toy":
            if feature_dim is None:
                raise ConfigError("toy encoder needs feature_dim")
            self.encoder = ToyEncoderParams(feature_dim, d, rng)
        self.w_node = _uniform(rng, d, width)
        self.layers: list[LayerParams] = []
        for _ in range(cfg.layers):
            self.layers.append(LayerParams(
                w_q=[_uniform(rng, width, dk) for _ in range(cfg.heads)],
                w_k=[_uniform(rng, width, dk) for _ in range(cfg.heads)],
                w_v=[_uniform(rng, width, dk) for _ in range(cfg.heads)],
                w_o=_uniform(rng, cfg.heads * dk, width),
                ln_gain=ad.parameter(np.ones(width)),
                ln_bias=ad.parameter(np.zeros(width)),
            ))
        # one learned scalar per edge type, shared across layers
        self.r_edge = _uniform(rng, NUM_EDGE_TYPES, d)
        self.w_edge = _uniform(rng, d, 1)
        n_labels = len(cfg.label_space.labels)
        self.w_cls = _uniform(rng, 7 * d, n_labels)

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.encoder is not None:
            out.update(self.encoder.named())
        out["w_node"] = self.w_node
        for li, lp in enumerate(self.layers):
            for h in range(len(lp.w_q)):
                out[f"layer{li}.head{h}.w_q"] = lp.w_q[h]
                out[f"layer{li}.head{h}.w_k"] = lp.w_k[h]
                out[f"layer{li}.head{h}.w_v"] = lp.w_v[h]
            out[f"layer{li}.w_o"] = lp.w_o
            out[f"layer{li}.ln_gain"] = lp.ln_gain
            out[f"layer{li}.ln_bias"] = lp.ln_bias
        out["edge.r"] = self.r_edge
        out["edge.w"] = self.w_edge
        out["w_cls"] = self.w_cls
        return out

    def zero_grad(self) -> None:
        for t in self.named().values():
            t.zero_grad()


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def init_node_embeddings(enc: EncoderOutput, g: EventPairGraph,
                         params: ReasonerParams) -> Tensor:
    """[N, 2d] initial matrix: projected events, then concatenated pairs."""
    if enc.event_ids != g.event_ids:
        raise ConfigError(f"doc {g.doc_id!r}: encoder event order differs from graph order")
    ev = ad.matmul(enc.h_events, params.w_node)
    if not g.pairs:
        return ev
    idx = {eid: i for i, eid in enumerate(g.event_ids)}
    i_idx = np.array([idx[a] for a, _ in g.pairs], dtype=np.int64)
    j_idx = np.array([idx[b] for _, b in g.pairs], dtype=np.int64)
    pair0 = ad.concat([ad.gather_rows(enc.h_events, i_idx),
                       ad.gather_rows(enc.h_events, j_idx)], axis=1)
    return ad.concat([ev, pair0], axis=0)


def edge_bias_vector(params: ReasonerParams) -> Tensor:
    """One learned scalar logit offset per edge type."""
    return ad.reshape(ad.matmul(params.r_edge, params.w_edge), (NUM_EDGE_TYPES,))


def attention_weights(v: Tensor, g: EventPairGraph, lp: LayerParams, head: int,
                      dk: int, bias: Tensor | None) -> Tensor:
    """Per-edge attention weights for one head (softmax over each node's neighbors)."""
    q = ad.matmul(v, lp.w_q[head])
    k = ad.matmul(v, lp.w_k[head])
    scores = ad.rowsum(ad.mul(ad.gather_rows(q, g.edges_dst),
                              ad.gather_rows(k, g.edges_src)))
    scores = ad.scalar_mul(scores, 1.0 / np.sqrt(dk))
    if bias is not None:
        scores = ad.add(scores, ad.take1d(bias, g.edges_type))
    return ad.segment_softmax(scores, g.seg_ptr)


def attention_layer(v: Tensor, g: EventPairGraph, lp: LayerParams, cfg: ModelConfig,
                    bias: Tensor | None, rng_key: tuple = (), training: bool = False) -> Tensor:
    """One reasoning layer: biased neighbor attention, W_o, layer norm, dropout.

    Nodes with no neighbors aggregate zero and pass through the norm.
    """
    heads = []
    for h in range(cfg.heads):
        alpha = attention_weights(v, g, lp, h, cfg.dk, bias)
        vals = ad.gather_rows(ad.matmul(v, lp.w_v[h]), g.edges_src)
        heads.append(ad.segment_sum(ad.scale_rows(vals, alpha), g.edges_dst, g.n_nodes))
    out = ad.matmul(ad.concat(heads, axis=1) if len(heads) > 1 else heads[0], lp.w_o)
    out = ad.layer_norm_rows(out, lp.ln_gain, lp.ln_bias)
    return ad.dropout_mask(out, cfg.dropout, key=rng_key, training=training)


def classify_pairs(enc: EncoderOutput, v_final: Tensor, g: EventPairGraph,
                   params: ReasonerParams) -> Tensor:
    """[P, L] label distributions for every candidate ordered pair."""
    if not g.pairs:
        raise ConfigError(f"doc {g.doc_id!r} has no candidate pairs to classify")
    idx = {eid: i for i, eid in enumerate(g.event_ids)}
    i_idx = np.array([idx[a] for a, _ in g.pairs], dtype=np.int64)
    j_idx = np.array([idx[b] for _, b in g.pairs], dtype=np.int64)
    p_idx = np.arange(g.n_events, g.n_nodes, dtype=np.int64)
    feats = ad.concat([
        ad.gather_rows(enc.h_cls, np.zeros(len(g.pairs), dtype=np.int64)),
        ad.gather_rows(v_final, i_idx),
        ad.gather_rows(v_final, j_idx),
        ad.gather_rows(v_final, p_idx),
    ], axis=1)
    return ad.softmax_rows(ad.matmul(feats, params.w_cls))


def classify_pair(enc: EncoderOutput, v_final: Tensor, g: EventPairGraph,
                  pair: tuple[str, str], params: ReasonerParams) -> np.ndarray:
    """Probability vector for one ordered pair."""
    probs = classify_pairs(enc, v_final, g, params)
    return probs.data[g.pair_row(*pair)].copy()


def forward_document(enc: EncoderOutput, g: EventPairGraph, params: ReasonerParams,
                     cfg: ModelConfig, training: bool = False,
                     rng_key: tuple = ()) -> Tensor:
    """Init + stacked attention layers + classifier; returns [P, L] probabilities.

    Rows follow ``g.pairs`` order. Deterministic given ``rng_key``; eval
    mode (training=False) disables dropout entirely.
    """
    v = init_node_embeddings(enc, g, params)
    bias = edge_bias_vector(params) if cfg.use_edge_bias else None
    for li, lp in enumerate(params.layers):
        v = attention_layer(v, g, lp, cfg, bias, rng_key=rng_key + (li,), training=training)
    return classify_pairs(enc, v, g, params)
