"""Command-line interface.

Subcommands: gen-data, train, eval, predict, check-coherence, gradcheck,
derive-table. Exit codes: 0 success, 1 usage, 2 data/config error,
3 numeric failure (non-finite loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import Tape, gradcheck
from .checkpoint import CheckpointError, load_checkpoint, restore_into, save_checkpoint
from .corpus import (Corpus, CorpusError, SyntheticWorldConfig, generate_synthetic,
                     load_corpus, save_corpus, split)
from .encoder import EncoderError
from .evaluation import (build_report, conjunction_violation_rate, micro_prf,
                         symmetry_violation_rate)
from .graph import build_graph
from .labels import (ALL_LABELS, AFTER, BEFORE, CHILD_PARENT, EQUAL, PARENT_CHILD,
                     LabelSpace, default_table, derive_temporal_table, load_table,
                     save_table)
from .reasoner import ConfigError, ModelConfig, ReasonerParams, forward_document
from .training import (NumericError, TrainConfig, build_doc_state, compile_table,
                       encode_state, predict, total_loss, train)

DATA_ERRORS = (CorpusError, EncoderError, CheckpointError, ConfigError,
               FileNotFoundError, ValueError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_events(text: str) -> tuple[int, int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return int(lo), int(hi)
    v = int(text)
    return v, v


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise UsageError(f"--ratios needs three comma-separated numbers, got {text!r}")
    return tuple(parts)


def _features_path(data_path: str, explicit: str | None) -> str | None:
    if explicit is not None:
        return explicit
    candidate = Path(data_path).with_suffix(".features.jsonl")
    return str(candidate) if candidate.exists() else None


def _positive_set(name: str, space: LabelSpace):
    name = name.lower()
    if name == "default":
        return None
    if name == "temporal":
        return frozenset(l for l in (BEFORE, AFTER, EQUAL) if l in space.labels)
    if name == "subevent":
        return frozenset(l for l in (PARENT_CHILD, CHILD_PARENT) if l in space.labels)
    if name == "all":
        return frozenset(space.labels)
    raise UsageError(f"unknown positive set {name!r}")


# ---------------------------------------------------------------------------
# config assembly
# ---------------------------------------------------------------------------

_MODEL_FLAGS = ("d", "layers", "heads", "d_k", "dropout", "label_mode",
                "gamma_sym", "gamma_conj", "encoder", "feature_dim", "seed")
_TRAIN_FLAGS = ("lr", "weight_decay", "batch", "max_epochs", "patience",
                "conj_mode", "conj_triple_budget")


def _load_config_file(path: str | None) -> tuple[dict, dict]:
    if path is None:
        return {}, {}
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    unknown = set(obj) - {"model", "train"}
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
    return dict(obj.get("model", {})), dict(obj.get("train", {}))


def _build_configs(args) -> tuple[ModelConfig, TrainConfig]:
    model_d, train_d = _load_config_file(getattr(args, "config", None))
    for name in _MODEL_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            model_d[name] = v
    for flag, key in (("no_edge_bias", "use_edge_bias"), ("no_coref", "use_coref"),
                      ("no_ep_edges", "use_ep_edges")):
        if getattr(args, flag, False):
            model_d[key] = False
    for name in _TRAIN_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            train_d[name] = v
    if getattr(args, "seed", None) is not None:
        train_d["seed"] = args.seed
        model_d.setdefault("seed", args.seed)
    return ModelConfig.from_dict(model_d), TrainConfig.from_dict(train_d)


def _load_model(checkpoint_path: str):
    cfg, arrays, meta = load_checkpoint(checkpoint_path)
    params = ReasonerParams(cfg, feature_dim=cfg.feature_dim)
    restore_into(params.named(), arrays)
    return cfg, params, meta


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    ev_min, ev_max = _parse_events(args.events)
    cfg = SyntheticWorldConfig(
        docs=args.docs, events_min=ev_min, events_max=ev_max,
        coref_rate=args.coref_rate, containment_rate=args.containment_rate,
        vague_rate=args.vague_rate, feature_dim=args.feature_dim,
        noise_std=args.noise_std, seed=args.seed)
    ratios = _parse_ratios(args.ratios)
    corpus = generate_synthetic(cfg)
    parts = split(corpus, ratios, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = {}
    for name, part in zip(("train", "dev", "test"), parts):
        save_corpus(part, out / f"{name}.jsonl", out / f"{name}.features.jsonl")
        sizes[name] = len(part)
    manifest = {"tool_version": __version__, "world_config": asdict(cfg),
                "ratios": list(ratios), "sizes": sizes, "feature_version": 1}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(json.dumps({"out": str(out), "sizes": sizes}))
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg = _build_configs(args)
    train_corpus = load_corpus(args.train, _features_path(args.train, args.train_features))
    dev_corpus = load_corpus(args.dev, _features_path(args.dev, args.dev_features))
    table = load_table(args.table) if args.table else default_table()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []

    def log(line: str) -> None:
        print(line, flush=True)
        lines.append(line)

    result = train(train_corpus, dev_corpus, model_cfg, train_cfg, table=table, log=log)
    (out / "metrics.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    meta = {"best_epoch": result.best_epoch, "best_dev_f1": result.best_dev_f1,
            "train_config": asdict(train_cfg)}
    save_checkpoint(out / "checkpoint.json", result.params.named(), result.model_cfg, meta)
    print(json.dumps({"checkpoint": str(out / "checkpoint.json"),
                      "best_epoch": result.best_epoch,
                      "best_dev_f1": result.best_dev_f1}))
    return 0


def cmd_eval(args) -> int:
    cfg, params, _ = _load_model(args.checkpoint)
    if args.config is not None:
        model_d, _ = _load_config_file(args.config)
        given = ModelConfig.from_dict(model_d)
        if given.config_hash() != cfg.config_hash():
            raise CheckpointError(
                f"config hash mismatch: --config gives {given.config_hash()}, "
                f"checkpoint has {cfg.config_hash()}")
    corpus = load_corpus(args.data, _features_path(args.data, args.features))
    table = load_table(args.table) if args.table else default_table()
    preds = predict(corpus, params, cfg)
    report = build_report(preds.argmax_labels(), preds.gold_labels(), cfg.label_space,
                          table, positive_set=_positive_set(args.positive, cfg.label_space))
    print(report.format_table())
    payload = json.dumps(report.to_dict(), indent=1, sort_keys=True)
    print(payload)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    return 0


def cmd_predict(args) -> int:
    cfg, params, _ = _load_model(args.checkpoint)
    corpus = load_corpus(args.data, _features_path(args.data, args.features))
    preds = predict(corpus, params, cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"labels": list(preds.labels),
                             "config_hash": cfg.config_hash()}) + "\n")
        for doc_id in sorted(preds.docs):
            dp = preds.docs[doc_id]
            picks = np.argmax(dp.probs, axis=1)
            for r, (a, b) in enumerate(dp.pairs):
                fh.write(json.dumps({"doc_id": doc_id, "e1": a, "e2": b,
                                     "label": preds.labels[picks[r]],
                                     "probs": dp.probs[r].tolist()}) + "\n")
    if args.dump_graphs:
        with open(args.dump_graphs, "w", encoding="utf-8") as fh:
            for doc in corpus.documents:
                g = build_graph(doc, use_coref=cfg.use_coref, include_ep=cfg.use_ep_edges)
                fh.write(json.dumps(g.to_json()) + "\n")
    print(json.dumps({"predictions": args.out, "docs": len(preds.docs)}))
    return 0


def _labels_from_predictions(path: str):
    header = None
    by_doc: dict[str, dict[tuple[str, str], str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if header is None:
                if "labels" not in obj:
                    raise CorpusError(f"{path}: first line must be a header with 'labels'")
                header = tuple(obj["labels"])
                continue
            by_doc.setdefault(obj["doc_id"], {})[(obj["e1"], obj["e2"])] = obj["label"]
    if header is None:
        raise CorpusError(f"{path}: empty predictions file")
    return header, by_doc


def cmd_check_coherence(args) -> int:
    table = load_table(args.table) if args.table else default_table()
    if args.predictions:
        labels_tuple, by_doc = _labels_from_predictions(args.predictions)
        space = LabelSpace.from_mode(
            {4: "SPLIT_TRE", 8: "JOINT"}.get(len(labels_tuple), "JOINT"))
        if set(labels_tuple) == set(space.labels) and labels_tuple != space.labels:
            space = LabelSpace.from_mode("JOINT")
    else:
        corpus = load_corpus(args.data)
        by_doc = {d.doc_id: dict(d.gold) for d in corpus.documents if d.gold}
        space = LabelSpace.from_mode("JOINT")
    rates = {"sym_violation_rate": symmetry_violation_rate(by_doc),
             "conj_violation_rate": conjunction_violation_rate(by_doc, table, space)}
    print(json.dumps(rates, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    world = SyntheticWorldConfig(docs=1, events_min=args.events, events_max=args.events,
                                 coref_rate=0.0, containment_rate=0.3, vague_rate=0.0,
                                 feature_dim=args.feature_dim, noise_std=0.05,
                                 seed=args.seed)
    corpus = generate_synthetic(world)
    cfg = ModelConfig(d=args.d, layers=args.layers, heads=args.heads, dropout=0.0,
                      gamma_sym=0.2, gamma_conj=0.2, feature_dim=args.feature_dim,
                      seed=args.seed)
    doc = corpus.documents[0]
    state = build_doc_state(doc, corpus.embeddings[doc.doc_id], cfg,
                            triple_budget=0, triple_seed=args.seed)
    params = ReasonerParams(cfg, feature_dim=args.feature_dim)
    compiled = compile_table(default_table(), cfg.label_space)

    def f(_params):
        enc = encode_state(state, params, cfg)
        probs = forward_document(enc, state.graph, params, cfg, training=False)
        loss, _ = total_loss(probs, state, cfg, compiled, "HINGE")
        return loss

    report = gradcheck(f, params.named(), h=args.h, tol=args.tol)
    print(report.summary())
    return 0 if report.passed else 3


def cmd_derive_table(args) -> int:
    save_table(derive_temporal_table(), args.out)
    print(json.dumps({"table": args.out}))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_model_flags(p) -> None:
    p.add_argument("--config", help="JSON config file with 'model'/'train' sections")
    p.add_argument("--d", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--d-k", dest="d_k", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--label-mode", dest="label_mode", choices=["JOINT", "SPLIT_TRE", "SPLIT_SRE"])
    p.add_argument("--gamma-sym", dest="gamma_sym", type=float)
    p.add_argument("--gamma-conj", dest="gamma_conj", type=float)
    p.add_argument("--encoder", choices=["toy", "precomputed"])
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--no-edge-bias", action="store_true")
    p.add_argument("--no-coref", action="store_true")
    p.add_argument("--no-ep-edges", action="store_true")


def build_parser() -> _Parser:
    parser = _Parser(prog="evrel", description=__doc__)
    parser.add_argument("--version", action="version", version=f"evrel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus and split it")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int, default=80)
    p.add_argument("--events", default="6..10", help="events per document, e.g. 6..10")
    p.add_argument("--coref-rate", type=float, default=0.1)
    p.add_argument("--containment-rate", type=float, default=0.3)
    p.add_argument("--vague-rate", type=float, default=0.05)
    p.add_argument("--feature-dim", type=int, default=12)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--ratios", default="0.7,0.15,0.15")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--train-features")
    p.add_argument("--dev-features")
    p.add_argument("--out", required=True)
    p.add_argument("--table", help="deduction table JSON (default: shipped table)")
    p.add_argument("--seed", type=int)
    _add_model_flags(p)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--conj-mode", dest="conj_mode", choices=["HINGE", "ABS"])
    p.add_argument("--conj-budget", dest="conj_triple_budget", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="verify this config's hash against the checkpoint")
    p.add_argument("--table")
    p.add_argument("--positive", default="default",
                   choices=["default", "temporal", "subevent", "all"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write per-pair labels and probabilities")
    p.add_argument("--data", required=True)
    p.add_argument("--features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-graphs", help="also dump graph structure JSONL here")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("check-coherence", help="violation rates for gold or predictions")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--data", help="corpus JSONL; checks gold labels")
    g.add_argument("--predictions", help="predictions JSONL from `evrel predict`")
    p.add_argument("--table")
    p.set_defaults(func=cmd_check_coherence)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--events", type=int, default=3)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("derive-table", help="write the oracle-derived temporal table")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derive_table)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
