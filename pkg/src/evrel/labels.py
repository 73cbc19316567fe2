"""Relation label algebra: the eight labels, reversal, and deduction tables.

Temporal labels order two events in time; hierarchy labels relate a
container event to its parts. Flipping the argument order of a pair maps
each label to its reciprocal (BEFORE<->AFTER, PARENT-CHILD<->CHILD-PARENT)
or to itself (EQUAL, VAGUE, COREF, NOREL).

The deduction table answers: given r1(i,j) and r2(j,k), which labels are
admissible for (i,k)? It is configuration data, not code. The shipped
default file is validated against a brute-force point-enumeration oracle
on its purely temporal block, so transcription errors surface as warnings
instead of silent behavior.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from importlib import resources
from itertools import product

BEFORE = "BEFORE"
AFTER = "AFTER"
EQUAL = "EQUAL"
VAGUE = "VAGUE"
PARENT_CHILD = "PARENT-CHILD"
CHILD_PARENT = "CHILD-PARENT"
COREF = "COREF"
NOREL = "NOREL"

TEMPORAL_LABELS = (BEFORE, AFTER, EQUAL, VAGUE)
SUBEVENT_LABELS = (PARENT_CHILD, CHILD_PARENT, COREF, NOREL)
ALL_LABELS = TEMPORAL_LABELS + SUBEVENT_LABELS

_REVERSE = {
    BEFORE: AFTER,
    AFTER: BEFORE,
    EQUAL: EQUAL,
    VAGUE: VAGUE,
    PARENT_CHILD: CHILD_PARENT,
    CHILD_PARENT: PARENT_CHILD,
    COREF: COREF,
    NOREL: NOREL,
}

# labels scored as positives by default (the two "no relation decided"
# labels are excluded from micro-F1)
DEFAULT_POSITIVE = frozenset(ALL_LABELS) - {VAGUE, NOREL}


def reverse(label: str) -> str:
    """Label of the flipped pair: reciprocal labels swap, reflexive ones stay."""
    try:
        return _REVERSE[label]
    except KeyError:
        raise ValueError(f"unknown relation label {label!r}") from None


@dataclass(frozen=True)
class LabelSpace:
    """The label set a model classifies over, plus scoring/loss subsets."""

    mode: str
    labels: tuple[str, ...]
    symmetric_set: frozenset[str]
    positive_set: frozenset[str]

    @classmethod
    def from_mode(cls, mode: str, positive_set=None) -> "LabelSpace":
        mode = mode.upper()
        if mode == "JOINT":
            labels = ALL_LABELS
        elif mode == "SPLIT_TRE":
            labels = TEMPORAL_LABELS
        elif mode == "SPLIT_SRE":
            labels = SUBEVENT_LABELS
        else:
            raise ValueError(f"unknown label mode {mode!r}")
        pos = frozenset(positive_set) if positive_set is not None else DEFAULT_POSITIVE & set(labels)
        if not pos <= set(labels):
            raise ValueError(f"positive_set {sorted(pos)} not within labels for mode {mode}")
        return cls(mode=mode, labels=labels,
                   symmetric_set=frozenset(labels), positive_set=pos)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"label {label!r} not in {self.mode} space") from None

    def __contains__(self, label: str) -> bool:
        return label in self.labels


# ---------------------------------------------------------------------------
# temporal composition oracle
# ---------------------------------------------------------------------------

_POINT_TEST = {
    BEFORE: lambda a, b: a < b,
    AFTER: lambda a, b: a > b,
    EQUAL: lambda a, b: a == b,
}


def temporal_composition(r1: str, r2: str, grid: int = 4) -> frozenset[str]:
    """Orders realizable for (a, c) given r1(a, b) and r2(b, c).

    Brute force over three time points on a small integer grid; the grid
    is large enough that every satisfiable order is witnessed.
    """
    if r1 not in _POINT_TEST or r2 not in _POINT_TEST:
        raise ValueError(f"temporal_composition is defined on {sorted(_POINT_TEST)}")
    out = set()
    for a, b, c in product(range(grid), repeat=3):
        if _POINT_TEST[r1](a, b) and _POINT_TEST[r2](b, c):
            if a < c:
                out.add(BEFORE)
            elif a > c:
                out.add(AFTER)
            else:
                out.add(EQUAL)
    return frozenset(out)


class ConjunctionTable:
    """Map (r1, r2) -> admissible labels for the composed pair.

    Absent entries mean "unconstrained": the full active label space is
    admissible. Provenance tags record where each entry came from.
    """

    def __init__(self, entries: dict[tuple[str, str], frozenset[str]],
                 provenance: dict[tuple[str, str], str] | None = None,
                 version: str = ""):
        self.entries = {k: frozenset(v) for k, v in entries.items()}
        self.provenance = dict(provenance or {})
        self.version = version

    def deduction_set(self, r1: str, r2: str, space: LabelSpace | None = None) -> frozenset[str]:
        labels = space.labels if space is not None else ALL_LABELS
        for r in (r1, r2):
            if r not in labels:
                raise ValueError(f"label {r!r} not in the active label space")
        de = self.entries.get((r1, r2))
        if de is None:
            return frozenset(labels)
        de = de & frozenset(labels)
        # an entry emptied by restriction to a sub-space carries no usable
        # information there; treat it as unconstrained
        return de if de else frozenset(labels)

    def constrained(self, space: LabelSpace) -> dict[tuple[str, str], frozenset[str]]:
        """Entries that actually constrain within ``space``."""
        out = {}
        full = frozenset(space.labels)
        for (r1, r2), de in sorted(self.entries.items()):
            if r1 not in space.labels or r2 not in space.labels:
                continue
            de = de & full
            if de and de != full:
                out[(r1, r2)] = de
        return out

    def __len__(self):
        return len(self.entries)


def deduction_set(table: ConjunctionTable, r1: str, r2: str,
                  space: LabelSpace | None = None) -> frozenset[str]:
    return table.deduction_set(r1, r2, space)


def derive_temporal_table(grid: int = 4) -> ConjunctionTable:
    """Deduction entries for BEFORE/AFTER/EQUAL compositions, by enumeration.

    Cells where every order is realizable are unconstrained and get no
    entry. VAGUE is never forced out by a constrained temporal cell: a
    composition that pins the order admits only that order's label.
    """
    entries = {}
    prov = {}
    for r1, r2 in product((BEFORE, AFTER, EQUAL), repeat=2):
        realizable = temporal_composition(r1, r2, grid=grid)
        if len(realizable) < 3:
            entries[(r1, r2)] = realizable
            prov[(r1, r2)] = "oracle-derived"
    return ConjunctionTable(entries, prov, version="oracle")


def load_table(path) -> ConjunctionTable:
    """Load a table file and merge it over the temporal oracle.

    File entries win; a file entry that disagrees with the oracle on the
    purely temporal block is kept but reported as a warning.
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or "entries" not in raw:
        raise ValueError(f"{path}: table file must be an object with an 'entries' map")
    version = str(raw.get("version", ""))
    file_entries: dict[tuple[str, str], frozenset[str]] = {}
    for key, de in raw["entries"].items():
        parts = key.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}: bad entry key {key!r}, expected 'R1,R2'")
        r1, r2 = parts
        for r in (r1, r2):
            if r not in ALL_LABELS:
                raise ValueError(f"{path}: unknown label {r!r} in entry key {key!r}")
        if not isinstance(de, list) or not de:
            raise ValueError(f"{path}: entry {key!r} must map to a non-empty label list")
        for r in de:
            if r not in ALL_LABELS:
                raise ValueError(f"{path}: unknown label {r!r} in entry {key!r}")
        file_entries[(r1, r2)] = frozenset(de)

    oracle = derive_temporal_table()
    entries = dict(oracle.entries)
    prov = dict(oracle.provenance)
    temporal3 = (BEFORE, AFTER, EQUAL)
    for key, de in file_entries.items():
        if key[0] in temporal3 and key[1] in temporal3:
            oracle_de = oracle.entries.get(key)
            if oracle_de is None:
                warnings.warn(
                    f"table entry {key} constrains a cell the temporal oracle leaves "
                    f"unconstrained; keeping the file entry {sorted(de)}")
            elif oracle_de != de:
                warnings.warn(
                    f"table entry {key}={sorted(de)} disagrees with oracle "
                    f"{sorted(oracle_de)}; keeping the file entry")
        entries[key] = de
        prov[key] = "paper-figure"
    return ConjunctionTable(entries, prov, version=version)


_DEFAULT_TABLE: ConjunctionTable | None = None


def default_table() -> ConjunctionTable:
    """The shipped deduction table (cached)."""
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        path = resources.files("evrel").joinpath("data/conjunction_table.json")
        with resources.as_file(path) as p:
            _DEFAULT_TABLE = load_table(p)
    return _DEFAULT_TABLE


def save_table(table: ConjunctionTable, path) -> None:
    payload = {
        "version": table.version or "1",
        "entries": {f"{r1},{r2}": sorted(de) for (r1, r2), de in sorted(table.entries.items())},
        "provenance": {f"{r1},{r2}": table.provenance.get((r1, r2), "unconstrained")
                       for (r1, r2) in sorted(table.entries)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
