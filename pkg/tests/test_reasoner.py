"""Reasoner tests: node init, attention weights, edge bias, classifier."""

import math

import numpy as np
import pytest

from evrel import autodiff as ad
from evrel.autodiff import Tensor
from evrel.corpus import Document, Event
from evrel.encoder import EncoderOutput
from evrel.graph import EventPairGraph, build_graph
from evrel.reasoner import (ConfigError, LayerParams, ModelConfig, ReasonerParams,
                            attention_weights, classify_pair, classify_pairs,
                            edge_bias_vector, forward_document,
                            init_node_embeddings)


def _doc(k, doc_id="d"):
    return Document(doc_id=doc_id, tokens=[f"t{i}" for i in range(k)],
                    events=[Event(f"e{i}", i, i + 1) for i in range(k)])


def _enc(h_events, d=None):
    h = np.atleast_2d(np.asarray(h_events, dtype=float))
    ids = tuple(f"e{i}" for i in range(h.shape[0]))
    return EncoderOutput(h_cls=Tensor(np.zeros((1, h.shape[1]))),
                         h_events=Tensor(h), event_ids=ids)


# ---------------------------------------------------------------------------
# initial node embeddings
# ---------------------------------------------------------------------------

def test_event_init_is_projection():
    cfg = ModelConfig(d=1, layers=0, heads=1, encoder="precomputed", dropout=0.0)
    params = ReasonerParams(cfg)
    params.w_node.data = np.array([[1.0, 3.0]])
    with pytest.warns(UserWarning):
        g = build_graph(_doc(1))
    v0 = init_node_embeddings(_enc([[2.0]]), g, params)
    assert v0.data.tolist() == [[2.0, 6.0]]


def test_pair_init_is_ordered_concatenation():
    cfg = ModelConfig(d=1, layers=0, heads=1, encoder="precomputed", dropout=0.0)
    params = ReasonerParams(cfg)
    g = build_graph(_doc(2))
    v0 = init_node_embeddings(_enc([[1.0], [2.0]]), g, params)
    row_ij = g.pair_node("e0", "e1")
    row_ji = g.pair_node("e1", "e0")
    assert v0.data[row_ij].tolist() == [1.0, 2.0]
    assert v0.data[row_ji].tolist() == [2.0, 1.0]


def test_zero_encoder_gives_zero_init():
    cfg = ModelConfig(d=2, layers=0, heads=1, encoder="precomputed", dropout=0.0)
    params = ReasonerParams(cfg)
    g = build_graph(_doc(3))
    v0 = init_node_embeddings(_enc(np.zeros((3, 2))), g, params)
    assert np.allclose(v0.data, 0.0)
    assert v0.shape == (g.n_nodes, 4)


# ---------------------------------------------------------------------------
# attention weights on a hand-built graph
# ---------------------------------------------------------------------------

def _two_neighbor_graph(types=(0, 0)):
    """Node 0 attends to nodes 1 and 2; nodes 1 and 2 see node 0."""
    dst = np.array([0, 0, 1, 2], dtype=np.int64)
    src = np.array([1, 2, 0, 0], dtype=np.int64)
    typ = np.array([types[0], types[1], types[0], types[1]], dtype=np.int64)
    seg_ptr = np.array([0, 2, 3, 4], dtype=np.int64)
    return EventPairGraph(doc_id="toy", event_ids=("a", "b", "c"), pairs=(),
                          edges_dst=dst, edges_src=src, edges_type=typ, seg_ptr=seg_ptr)


def _layer(width, dk, seed=0):
    rng = np.random.default_rng(seed)
    mk = lambda r, c: Tensor(rng.normal(size=(r, c)), requires_grad=True)
    return LayerParams(w_q=[mk(width, dk)], w_k=[mk(width, dk)], w_v=[mk(width, dk)],
                       w_o=mk(dk, width), ln_gain=Tensor(np.ones(width), requires_grad=True),
                       ln_bias=Tensor(np.zeros(width), requires_grad=True))


def test_equal_scores_no_bias_gives_half_half():
    g = _two_neighbor_graph()
    lp = _layer(width=4, dk=2)
    lp.w_q[0].data[:] = 0.0  # all logits zero -> uniform over each neighborhood
    v = Tensor(np.random.default_rng(1).normal(size=(3, 4)))
    alpha = attention_weights(v, g, lp, head=0, dk=2, bias=None)
    assert np.allclose(alpha.data[:2], [0.5, 0.5], atol=1e-15)
    assert np.allclose(alpha.data[2:], 1.0)


def test_bias_difference_of_ln2_gives_two_thirds():
    g = _two_neighbor_graph(types=(0, 1))
    lp = _layer(width=4, dk=2)
    lp.w_q[0].data[:] = 0.0
    v = Tensor(np.random.default_rng(2).normal(size=(3, 4)))
    bias = Tensor(np.array([math.log(2.0), 0.0, 0.0]))
    alpha = attention_weights(v, g, lp, head=0, dk=2, bias=bias)
    assert np.allclose(alpha.data[:2], [2 / 3, 1 / 3], atol=1e-12)


def test_attention_weights_sum_to_one_per_node():
    rng = np.random.default_rng(3)
    g = build_graph(_doc(4))
    lp = _layer(width=4, dk=3, seed=4)
    v = Tensor(rng.normal(size=(g.n_nodes, 4)))
    alpha = attention_weights(v, g, lp, head=0, dk=3, bias=Tensor(rng.normal(size=3)))
    sums = np.zeros(g.n_nodes)
    np.add.at(sums, g.edges_dst, alpha.data)
    assert np.allclose(sums, 1.0, atol=1e-9)


def test_no_bias_output_invariant_to_edge_type_relabeling():
    cfg = ModelConfig(d=3, layers=2, heads=2, dropout=0.0, use_edge_bias=False,
                      encoder="precomputed", seed=5)
    params = ReasonerParams(cfg)
    doc = _doc(3)
    g = build_graph(doc)
    enc = _enc(np.random.default_rng(6).normal(size=(3, 3)))
    p1 = forward_document(enc, g, params, cfg)
    relabeled = EventPairGraph(doc_id=g.doc_id, event_ids=g.event_ids, pairs=g.pairs,
                               edges_dst=g.edges_dst, edges_src=g.edges_src,
                               edges_type=(g.edges_type + 1) % 3, seg_ptr=g.seg_ptr)
    p2 = forward_document(enc, relabeled, params, cfg)
    assert (p1.data == p2.data).all()


def test_zeroed_bias_matches_disabled_bias_bitwise():
    doc = _doc(3)
    g = build_graph(doc)
    enc = _enc(np.random.default_rng(7).normal(size=(3, 3)))
    base = dict(d=3, layers=2, heads=2, dropout=0.0, encoder="precomputed", seed=8)
    cfg_off = ModelConfig(use_edge_bias=False, **base)
    cfg_on = ModelConfig(use_edge_bias=True, **base)
    params = ReasonerParams(cfg_on)
    params.r_edge.data[:] = 0.0  # beta becomes exactly zero
    assert np.allclose(edge_bias_vector(params).data, 0.0)
    p_on = forward_document(enc, g, params, cfg_on)
    p_off = forward_document(enc, g, params, cfg_off)
    assert (p_on.data == p_off.data).all()


# ---------------------------------------------------------------------------
# classifier
# ---------------------------------------------------------------------------

def test_classifier_rows_sum_to_one_and_are_in_unit_interval():
    cfg = ModelConfig(d=4, layers=1, heads=2, dropout=0.0, encoder="precomputed", seed=9)
    params = ReasonerParams(cfg)
    g = build_graph(_doc(4))
    enc = _enc(np.random.default_rng(10).normal(size=(4, 4)))
    probs = forward_document(enc, g, params, cfg)
    assert probs.shape == (len(g.pairs), 8)
    assert np.allclose(probs.data.sum(axis=1), 1.0, atol=1e-9)
    assert (probs.data > 0).all() and (probs.data < 1).all()


def test_zero_classifier_weights_give_uniform():
    cfg = ModelConfig(d=2, layers=0, heads=1, dropout=0.0, encoder="precomputed", seed=11)
    params = ReasonerParams(cfg)
    params.w_cls.data[:] = 0.0
    g = build_graph(_doc(2))
    enc = _enc(np.random.default_rng(12).normal(size=(2, 2)))
    v = init_node_embeddings(enc, g, params)
    probs = classify_pairs(enc, v, g, params)
    assert np.allclose(probs.data, 1.0 / 8)


def test_pair_direction_changes_prediction():
    cfg = ModelConfig(d=3, layers=1, heads=1, dropout=0.0, encoder="precomputed", seed=13)
    params = ReasonerParams(cfg)
    g = build_graph(_doc(2))
    enc = _enc(np.random.default_rng(14).normal(size=(2, 3)))
    v = init_node_embeddings(enc, g, params)
    p_ij = classify_pair(enc, v, g, ("e0", "e1"), params)
    p_ji = classify_pair(enc, v, g, ("e1", "e0"), params)
    assert not np.allclose(p_ij, p_ji)


# ---------------------------------------------------------------------------
# forward_document
# ---------------------------------------------------------------------------

def test_two_event_document_yields_two_distributions():
    cfg = ModelConfig(d=3, layers=1, heads=1, dropout=0.0, encoder="precomputed", seed=15)
    params = ReasonerParams(cfg)
    g = build_graph(_doc(2))
    enc = _enc(np.random.default_rng(16).normal(size=(2, 3)))
    probs = forward_document(enc, g, params, cfg)
    assert probs.shape == (2, 8)


def test_eval_mode_is_bitwise_deterministic():
    cfg = ModelConfig(d=4, layers=2, heads=2, dropout=0.3, encoder="precomputed", seed=17)
    params = ReasonerParams(cfg)
    g = build_graph(_doc(3))
    enc = _enc(np.random.default_rng(18).normal(size=(3, 4)))
    a = forward_document(enc, g, params, cfg, training=False)
    b = forward_document(enc, g, params, cfg, training=False)
    assert (a.data == b.data).all()


def test_train_mode_dropout_keyed():
    cfg = ModelConfig(d=4, layers=1, heads=1, dropout=0.5, encoder="precomputed", seed=19)
    params = ReasonerParams(cfg)
    g = build_graph(_doc(3))
    enc = _enc(np.random.default_rng(20).normal(size=(3, 4)))
    a = forward_document(enc, g, params, cfg, training=True, rng_key=(1,))
    b = forward_document(enc, g, params, cfg, training=True, rng_key=(1,))
    c = forward_document(enc, g, params, cfg, training=True, rng_key=(2,))
    assert (a.data == b.data).all()
    assert not (a.data == c.data).all()


def test_zero_layers_still_classifies():
    cfg = ModelConfig(d=3, layers=0, heads=1, dropout=0.0, encoder="precomputed", seed=21)
    params = ReasonerParams(cfg)
    g = build_graph(_doc(2))
    enc = _enc(np.random.default_rng(22).normal(size=(2, 3)))
    probs = forward_document(enc, g, params, cfg)
    assert np.allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)


def test_event_embeddings_invariant_to_event_insertion_order():
    cfg = ModelConfig(d=3, layers=2, heads=2, dropout=0.0, encoder="precomputed", seed=23)
    params = ReasonerParams(cfg)
    doc1 = _doc(4)
    doc2 = _doc(4)
    doc2.events = list(reversed(doc2.events))
    enc = _enc(np.random.default_rng(24).normal(size=(4, 3)))
    p1 = forward_document(enc, build_graph(doc1), params, cfg)
    p2 = forward_document(enc, build_graph(doc2), params, cfg)
    assert (p1.data == p2.data).all()


def test_encoder_graph_order_mismatch_rejected():
    cfg = ModelConfig(d=3, layers=0, heads=1, dropout=0.0, encoder="precomputed", seed=25)
    params = ReasonerParams(cfg)
    g = build_graph(_doc(2))
    enc = EncoderOutput(h_cls=Tensor(np.zeros((1, 3))),
                        h_events=Tensor(np.zeros((2, 3))), event_ids=("e1", "e0"))
    with pytest.raises(ConfigError):
        init_node_embeddings(enc, g, params)


def test_config_validation_and_hash():
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.5)
    with pytest.raises(ConfigError):
        ModelConfig(gamma_sym=-0.1)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"d": 8, "window": 3})
    a = ModelConfig(d=8).config_hash()
    b = ModelConfig(d=8).config_hash()
    c = ModelConfig(d=16).config_hash()
    assert a == b != c
