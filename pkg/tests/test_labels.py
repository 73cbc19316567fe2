"""Label algebra, reversal, and deduction table tests.

The temporal block is checked against an enumerator written here from
scratch (fractions over a different grid), independent of the library's
own oracle.
"""

import json
from itertools import product

import pytest

from evrel.labels import (AFTER, ALL_LABELS, BEFORE, CHILD_PARENT, COREF, EQUAL,
                          NOREL, PARENT_CHILD, VAGUE, ConjunctionTable, LabelSpace,
                          deduction_set, default_table, derive_temporal_table,
                          load_table, reverse, save_table, temporal_composition)


# ---------------------------------------------------------------------------
# reversal
# ---------------------------------------------------------------------------

def test_reverse_reciprocal_and_reflexive_classes():
    assert reverse(BEFORE) == AFTER
    assert reverse(AFTER) == BEFORE
    assert reverse(PARENT_CHILD) == CHILD_PARENT
    assert reverse(CHILD_PARENT) == PARENT_CHILD
    for label in (EQUAL, VAGUE, COREF, NOREL):
        assert reverse(label) == label


def test_reverse_is_involution_and_bijection():
    assert sorted(reverse(l) for l in ALL_LABELS) == sorted(ALL_LABELS)
    for label in ALL_LABELS:
        assert reverse(reverse(label)) == label


def test_reverse_unknown_label():
    with pytest.raises(ValueError):
        reverse("CAUSES")


# ---------------------------------------------------------------------------
# label spaces
# ---------------------------------------------------------------------------

def test_label_space_modes():
    joint = LabelSpace.from_mode("JOINT")
    assert len(joint.labels) == 8
    tre = LabelSpace.from_mode("SPLIT_TRE")
    assert tre.labels == (BEFORE, AFTER, EQUAL, VAGUE)
    sre = LabelSpace.from_mode("SPLIT_SRE")
    assert sre.labels == (PARENT_CHILD, CHILD_PARENT, COREF, NOREL)
    assert set(joint.labels) == set(tre.labels) | set(sre.labels)


def test_positive_set_excludes_vague_and_norel_by_default():
    space = LabelSpace.from_mode("JOINT")
    assert VAGUE not in space.positive_set
    assert NOREL not in space.positive_set
    assert BEFORE in space.positive_set and PARENT_CHILD in space.positive_set


def test_label_space_rejects_bad_mode_and_out_of_space_positive():
    with pytest.raises(ValueError):
        LabelSpace.from_mode("BOTH")
    with pytest.raises(ValueError):
        LabelSpace.from_mode("SPLIT_TRE", positive_set={PARENT_CHILD})


# ---------------------------------------------------------------------------
# temporal oracle vs independent enumeration
# ---------------------------------------------------------------------------

def _independent_composition(r1, r2):
    """Re-derivation with different machinery: fractional grid, dict lookups."""
    holds = {
        BEFORE: lambda x, y: x < y,
        AFTER: lambda x, y: x > y,
        EQUAL: lambda x, y: x == y,
    }
    grid = [0.0, 0.5, 1.0, 1.5, 2.0]
    seen = set()
    for a in grid:
        for b in grid:
            for c in grid:
                if holds[r1](a, b) and holds[r2](b, c):
                    seen.add(BEFORE if a < c else AFTER if a > c else EQUAL)
    return frozenset(seen)


def test_temporal_composition_matches_independent_enumeration():
    for r1, r2 in product((BEFORE, AFTER, EQUAL), repeat=2):
        assert temporal_composition(r1, r2) == _independent_composition(r1, r2)


def test_oracle_specific_cells():
    assert temporal_composition(BEFORE, BEFORE) == {BEFORE}
    assert temporal_composition(EQUAL, BEFORE) == {BEFORE}
    assert temporal_composition(BEFORE, AFTER) == {BEFORE, AFTER, EQUAL}


def test_derived_table_constrains_exactly_the_pinned_cells():
    table = derive_temporal_table()
    assert table.entries[(BEFORE, BEFORE)] == {BEFORE}
    assert table.entries[(EQUAL, BEFORE)] == {BEFORE}
    assert table.entries[(EQUAL, EQUAL)] == {EQUAL}
    assert (BEFORE, AFTER) not in table.entries
    assert (AFTER, BEFORE) not in table.entries
    assert all(v == "oracle-derived" for v in table.provenance.values())


def test_oracle_associativity_on_constrained_entries():
    # four-point check: realizable (a, d) orders are covered by composing
    # the deduction sets pairwise
    labels3 = (BEFORE, AFTER, EQUAL)
    for r1, r2, r3 in product(labels3, repeat=3):
        direct = set()
        holds = {
            BEFORE: lambda x, y: x < y,
            AFTER: lambda x, y: x > y,
            EQUAL: lambda x, y: x == y,
        }
        for a, b, c, d in product(range(5), repeat=4):
            if holds[r1](a, b) and holds[r2](b, c) and holds[r3](c, d):
                direct.add(BEFORE if a < d else AFTER if a > d else EQUAL)
        via = set()
        for mid in temporal_composition(r1, r2):
            via |= temporal_composition(mid, r3)
        assert direct <= via, (r1, r2, r3)


# ---------------------------------------------------------------------------
# shipped default table
# ---------------------------------------------------------------------------

def test_default_table_coref_identity():
    table = default_table()
    for r in ALL_LABELS:
        assert table.deduction_set(COREF, r) == {r}
        assert table.deduction_set(r, COREF) == {r}


def test_default_table_reversal_symmetry():
    table = default_table()
    space = LabelSpace.from_mode("JOINT")
    for r1 in ALL_LABELS:
        for r2 in ALL_LABELS:
            de = table.deduction_set(r1, r2, space)
            mirror = table.deduction_set(reverse(r2), reverse(r1), space)
            for r3 in de:
                assert reverse(r3) in mirror, (r1, r2, r3)


def test_default_table_hierarchy_entries():
    table = default_table()
    # nested containment composes transitively
    assert table.deduction_set(PARENT_CHILD, PARENT_CHILD) == {PARENT_CHILD}
    assert table.deduction_set(CHILD_PARENT, CHILD_PARENT) == {CHILD_PARENT}
    # the mixed entry asserted by the source material, plus its mirror
    assert table.deduction_set(PARENT_CHILD, BEFORE) == {PARENT_CHILD}
    assert table.deduction_set(AFTER, CHILD_PARENT) == {CHILD_PARENT}
    assert table.provenance[(PARENT_CHILD, BEFORE)] == "paper-figure"


def test_containment_transitivity_by_interval_enumeration():
    # independent support for the PC,PC entry: strict nesting is transitive
    intervals = [(0, 10), (1, 9), (2, 8), (3, 7)]
    for (a1, a2), (b1, b2), (c1, c2) in product(intervals, repeat=3):
        contains_ab = a1 < b1 and b2 < a2
        contains_bc = b1 < c1 and c2 < b2
        if contains_ab and contains_bc:
            assert a1 < c1 and c2 < a2


def test_unconstrained_defaults_to_full_space():
    table = default_table()
    space = LabelSpace.from_mode("JOINT")
    assert table.deduction_set(VAGUE, VAGUE, space) == frozenset(ALL_LABELS)
    assert table.deduction_set(NOREL, BEFORE, space) == frozenset(ALL_LABELS)
    assert deduction_set(table, BEFORE, BEFORE) == {BEFORE}


def test_deduction_set_rejects_out_of_space_labels():
    table = default_table()
    with pytest.raises(ValueError):
        table.deduction_set(PARENT_CHILD, BEFORE, LabelSpace.from_mode("SPLIT_TRE"))


def test_restriction_to_split_space():
    table = default_table()
    tre = LabelSpace.from_mode("SPLIT_TRE")
    constrained = table.constrained(tre)
    assert constrained[(BEFORE, BEFORE)] == {BEFORE}
    assert all(r1 in tre.labels and r2 in tre.labels for r1, r2 in constrained)


# ---------------------------------------------------------------------------
# table file loading
# ---------------------------------------------------------------------------

def test_load_table_file_overrides_oracle_with_warning(tmp_path):
    path = tmp_path / "table.json"
    path.write_text(json.dumps({"version": "x", "entries": {"BEFORE,BEFORE": ["BEFORE", "EQUAL"]}}))
    with pytest.warns(UserWarning, match="disagrees with oracle"):
        table = load_table(path)
    assert table.deduction_set(BEFORE, BEFORE) == {BEFORE, EQUAL}
    assert table.provenance[(BEFORE, BEFORE)] == "paper-figure"


def test_load_table_warns_when_constraining_free_cell(tmp_path):
    path = tmp_path / "table.json"
    path.write_text(json.dumps({"version": "x", "entries": {"BEFORE,AFTER": ["EQUAL"]}}))
    with pytest.warns(UserWarning, match="unconstrained"):
        load_table(path)


def test_load_table_rejects_unknown_labels(tmp_path):
    path = tmp_path / "table.json"
    path.write_text(json.dumps({"entries": {"BEFORE,SOMETIME": ["BEFORE"]}}))
    with pytest.raises(ValueError):
        load_table(path)
    path.write_text(json.dumps({"entries": {"BEFORE,BEFORE": []}}))
    with pytest.raises(ValueError):
        load_table(path)


def test_save_and_reload_roundtrip(tmp_path):
    table = ConjunctionTable({(BEFORE, BEFORE): {BEFORE}}, {(BEFORE, BEFORE): "paper-figure"},
                             version="7")
    path = tmp_path / "t.json"
    save_table(table, path)
    loaded = load_table(path)
    assert loaded.deduction_set(BEFORE, BEFORE) == {BEFORE}
    assert loaded.version == "7"
