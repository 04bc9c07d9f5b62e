"""Sequence layout and attention-mask invariants.

The blocked-pair count oracle is computed in closed form here:
a causal mask over T tokens blocks T*(T-1)/2 pairs; the decoupling
block adds K_s * K_m more (it lies strictly below the diagonal because
the structural bank sits after the metric bank).
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamsi.errors import ConfigError, ShapeError
from gamsi.masking import (
    AttentionMask,
    build_layout,
    build_mask,
    make_layout,
    mask_to_json,
    render_mask_grid,
    verify_mask,
)
from gamsi.tensor import NEG_INF


def closed_form_blocked(t: int, k_m: int, k_s: int, decouple: bool) -> int:
    causal = t * (t - 1) // 2
    return causal + (k_s * k_m if decouple else 0)


# ---------------------------------------------------------------- layout


def test_layout_span_arithmetic():
    lay = build_layout(2, 4, 3, 5, 2)
    assert lay.visual_len == 8
    assert lay.metric_span == (8, 11)
    assert lay.struct_span == (11, 14)
    assert lay.question_span == (14, 19)
    assert lay.answer_span == (19, 21)
    assert lay.total == 2 * 4 + 2 * 3 + 5 + 2
    # closed-interval accessors are inclusive on both ends
    assert lay.metric_range() == (8, 10)
    assert lay.struct_range() == (11, 13)
    assert lay.frame_span(1) == (4, 8)


def test_layout_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        build_layout(0, 4, 2, 3, 1)
    with pytest.raises(ConfigError):
        build_layout(1, 0, 2, 3, 1)
    with pytest.raises(ConfigError):
        build_layout(1, 4, 0, 3, 1)  # standard layout needs K >= 1
    with pytest.raises(ConfigError):
        build_layout(1, 4, 2, 0, 1)  # question must be nonempty
    with pytest.raises(ConfigError):
        build_layout(1, 4, 2, 3, -1)
    with pytest.raises(ShapeError):
        build_layout(2, 4, 1, 1, 0).frame_span(2)


def test_make_layout_allows_empty_banks():
    lay = make_layout(1, 4, 0, 0, 3, 1)
    assert lay.metric_span == (4, 4)
    assert lay.struct_span == (4, 4)
    assert lay.total == 8


def test_layout_json_ranges_are_closed_intervals():
    d = build_layout(1, 4, 2, 3, 2).to_json_dict()
    assert d["visual"] == [0, 3]
    assert d["metric"] == [4, 5]
    assert d["struct"] == [6, 7]
    assert d["question"] == [8, 10]
    assert d["answer"] == [11, 12]
    d0 = make_layout(1, 4, 0, 0, 3, 0).to_json_dict()
    assert d0["metric"] is None and d0["struct"] is None and d0["answer"] is None


# ------------------------------------------------------------------ mask


def test_mask_blocked_pair_count_matches_closed_form():
    lay = build_layout(2, 4, 3, 5, 2)
    m = build_mask(lay)
    assert m.blocked_pairs_count() == closed_form_blocked(lay.total, 3, 3, True)
    m_plain = build_mask(lay, decouple=False)
    assert m_plain.blocked_pairs_count() == closed_form_blocked(lay.total, 3, 3, False)


def test_mask_entries_are_exactly_zero_or_neg_inf():
    m = build_mask(build_layout(1, 2, 2, 1, 1))
    vals = np.unique(m.values)
    assert set(vals.tolist()) <= {0.0, NEG_INF}


def test_mask_decoupling_block_location():
    lay = build_layout(1, 4, 2, 3, 1)
    allowed = build_mask(lay).allowed()
    ss, se = lay.struct_span
    ms, me = lay.metric_span
    # every structural row x metric column pair is blocked
    assert not allowed[ss:se, ms:me].any()
    # but those same rows still see the whole visual prefix
    assert allowed[ss:se, : lay.visual_len].all()
    # and the metric rows see the visual prefix too
    assert allowed[ms:me, : lay.visual_len].all()
    # question rows see both banks
    qs, qe = lay.question_span
    assert allowed[qs:qe, ms:me].all() and allowed[qs:qe, ss:se].all()


def test_mask_is_immutable_and_square():
    m = build_mask(build_layout(1, 2, 1, 1, 1))
    with pytest.raises(ValueError):
        m.values[0, 0] = 1.0
    with pytest.raises(ShapeError):
        AttentionMask(np.zeros((2, 3)))


def test_verify_mask_passes_for_built_masks():
    lay = build_layout(2, 4, 2, 3, 2)
    rep = verify_mask(build_mask(lay), lay)
    assert rep.ok and rep.failures == []
    assert "PASS" in rep.summary()


@pytest.mark.parametrize(
    "mutate,expect",
    [
        (lambda v, lay: v.__setitem__((0, 1), 0.0), "above the diagonal"),
        (
            lambda v, lay: v.__setitem__(
                (lay.struct_span[0], lay.metric_span[0]), 0.0
            ),
            "metric-query column",
        ),
        (lambda v, lay: v.__setitem__((2, 2), NEG_INF), "self-attention"),
    ],
)
def test_verify_mask_catches_seeded_violations(mutate, expect):
    lay = build_layout(1, 4, 2, 2, 2, )
    vals = build_mask(lay).values.copy()
    vals.setflags(write=True)
    mutate(vals, lay)
    rep = verify_mask(AttentionMask(vals), lay)
    assert not rep.ok
    assert any(expect in why for _, _, why in rep.failures)
    assert "FAIL" in rep.summary()


def test_verify_mask_rejects_size_mismatch():
    lay = build_layout(1, 4, 2, 2, 2)
    rep = verify_mask(AttentionMask(np.zeros((3, 3))), lay)
    assert not rep.ok


def test_render_grid_marks_blocked_cells():
    lay = build_layout(1, 2, 1, 2, 1)
    text = render_mask_grid(build_mask(lay), lay)
    lines = text.splitlines()
    # header + T rows, one char per column after the 4-char gutter
    assert len(lines[0]) == 4 + lay.total
    ss, _ = lay.struct_span
    ms, _ = lay.metric_span
    struct_row = lines[1 + ss]
    assert struct_row[4 + ms] == "X"  # the decoupling block is visible
    assert struct_row[4 + ss] == "."  # self-attention is open
    assert "metric" in text and "struct" in text


def test_mask_json_shape():
    lay = build_layout(1, 4, 2, 2, 2)
    d = mask_to_json(build_mask(lay), lay)
    assert d["T"] == lay.total
    assert d["blocked_pairs_count"] == closed_form_blocked(lay.total, 2, 2, True)
    assert d["ranges"]["metric"] == list(lay.metric_range())


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 3),
    p=st.integers(1, 6),
    k_m=st.integers(0, 4),
    k_s=st.integers(0, 4),
    lq=st.integers(1, 4),
    la=st.integers(0, 3),
)
def test_random_layouts_verify_and_count(n, p, k_m, k_s, lq, la):
    lay = make_layout(n, p, k_m, k_s, lq, la)
    m = build_mask(lay)
    assert verify_mask(m, lay).ok
    assert m.blocked_pairs_count() == closed_form_blocked(lay.total, k_m, k_s, True)
