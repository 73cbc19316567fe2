"""Micro-averaged P/R/F1 and logic-coherence diagnostics.

Scores are computed per ordered pair from argmax labels. Micro precision
and recall pool TP/FP/FN across a configurable positive label set (VAGUE
and NOREL are excluded by default); 0/0 divisions yield 0. The coherence
diagnostics measure how often predictions break reversal or deduction
rules, independently of gold labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

from .labels import (AFTER, BEFORE, CHILD_PARENT, EQUAL, PARENT_CHILD,
                     ConjunctionTable, LabelSpace, reverse)

LabelsByDoc = dict[str, dict[tuple[str, str], str]]


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


@dataclass
class MetricsReport:
    labels: tuple[str, ...]
    per_label: dict[str, dict] = field(default_factory=dict)
    micro: dict = field(default_factory=dict)
    temporal_micro: dict = field(default_factory=dict)
    subevent_micro: dict = field(default_factory=dict)
    sym_violation_rate: float = 0.0
    conj_violation_rate: float = 0.0
    n_scored_pairs: int = 0

    def to_dict(self) -> dict:
        return {
            "per_label": self.per_label,
            "micro": self.micro,
            "temporal_micro": self.temporal_micro,
            "subevent_micro": self.subevent_micro,
            "sym_violation_rate": self.sym_violation_rate,
            "conj_violation_rate": self.conj_violation_rate,
            "n_scored_pairs": self.n_scored_pairs,
        }

    def format_table(self) -> str:
        rows = [f"{'label':<14} {'P':>7} {'R':>7} {'F1':>7} {'TP':>5} {'FP':>5} {'FN':>5}"]
        for label in self.labels:
            s = self.per_label.get(label)
            if s is None:
                continue
            rows.append(f"{label:<14} {s['p']:>7.4f} {s['r']:>7.4f} {s['f1']:>7.4f} "
                        f"{s['tp']:>5d} {s['fp']:>5d} {s['fn']:>5d}")
        for name, block in (("micro", self.micro), ("temporal", self.temporal_micro),
                            ("subevent", self.subevent_micro)):
            if block:
                rows.append(f"{name:<14} {block['p']:>7.4f} {block['r']:>7.4f} "
                            f"{block['f1']:>7.4f}")
        rows.append(f"sym_violation_rate  = {self.sym_violation_rate:.4f}")
        rows.append(f"conj_violation_rate = {self.conj_violation_rate:.4f}")
        return "\n".join(rows)


def micro_prf(preds: LabelsByDoc, gold: LabelsByDoc, space: LabelSpace,
              positive_set=None) -> dict:
    """Per-label tallies plus micro P/R/F1 over the positive label set.

    Only gold pairs with labels inside ``space`` are scored; every scored
    pair must have a prediction.
    """
    positive = frozenset(positive_set) if positive_set is not None else space.positive_set
    tally = {l: {"tp": 0, "fp": 0, "fn": 0} for l in space.labels}
    n_scored = 0
    for doc_id in sorted(gold):
        doc_preds = preds.get(doc_id, {})
        for pair in sorted(gold[doc_id]):
            g = gold[doc_id][pair]
            if g not in space:
                continue
            if pair not in doc_preds:
                raise KeyError(f"doc {doc_id!r}: no prediction for scored pair {pair}")
            p = doc_preds[pair]
            n_scored += 1
            if p == g:
                tally[g]["tp"] += 1
            else:
                tally[g]["fn"] += 1
                tally[p]["fp"] += 1

    per_label = {}
    for label, t in tally.items():
        p, r, f1 = _prf(t["tp"], t["fp"], t["fn"])
        per_label[label] = {"p": p, "r": r, "f1": f1, **t}

    def pooled(subset) -> dict:
        subset = [l for l in subset if l in space.labels]
        tp = sum(tally[l]["tp"] for l in subset)
        fp = sum(tally[l]["fp"] for l in subset)
        fn = sum(tally[l]["fn"] for l in subset)
        p, r, f1 = _prf(tp, fp, fn)
        return {"p": p, "r": r, "f1": f1, "tp": tp, "fp": fp, "fn": fn}

    return {
        "per_label": per_label,
        "micro": pooled(positive),
        "temporal_micro": pooled((BEFORE, AFTER, EQUAL)),
        "subevent_micro": pooled((PARENT_CHILD, CHILD_PARENT)),
        "n_scored_pairs": n_scored,
    }


def symmetry_violation_rate(preds: LabelsByDoc) -> float:
    """Fraction of unordered pairs whose two directions disagree under reversal."""
    total = 0
    bad = 0
    for doc_id in sorted(preds):
        table = preds[doc_id]
        for (a, b), label in sorted(table.items()):
            if a >= b or (b, a) not in table:
                continue
            total += 1
            if table[(b, a)] != reverse(label):
                bad += 1
    return bad / total if total else 0.0


def conjunction_violation_rate(preds: LabelsByDoc, table: ConjunctionTable,
                               space: LabelSpace) -> float:
    """Fraction of constrained ordered triples whose (i,k) label falls
    outside the deduction set of their (i,j), (j,k) labels."""
    constrained = table.constrained(space)
    total = 0
    bad = 0
    for doc_id in sorted(preds):
        labels = preds[doc_id]
        ids = sorted({e for pair in labels for e in pair})
        for i, j, k in permutations(ids, 3):
            lij = labels.get((i, j))
            ljk = labels.get((j, k))
            lik = labels.get((i, k))
            if lij is None or ljk is None or lik is None:
                continue
            de = constrained.get((lij, ljk))
            if de is None:
                continue
            total += 1
            if lik not in de:
                bad += 1
    return bad / total if total else 0.0


def build_report(preds: LabelsByDoc, gold: LabelsByDoc, space: LabelSpace,
                 table: ConjunctionTable, positive_set=None) -> MetricsReport:
    core = micro_prf(preds, gold, space, positive_set=positive_set)
    return MetricsReport(
        labels=space.labels,
        per_label=core["per_label"],
        micro=core["micro"],
        temporal_micro=core["temporal_micro"],
        subevent_micro=core["subevent_micro"],
        sym_violation_rate=symmetry_violation_rate(preds),
        conj_violation_rate=conjunction_violation_rate(preds, table, space),
        n_scored_pairs=core["n_scored_pairs"],
    )
