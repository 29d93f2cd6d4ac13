import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osad import _pykernels
from osad.errors import DegenerateInputError, InvalidArgumentError
from osad.geometry import (
    Box,
    LtrbOffsets,
    centerness,
    iou,
    iou_matrix,
    ltrb_decode,
    ltrb_encode,
    make_proposal,
    nms,
    objectness,
)

from conftest import _ckernels

coord = st.floats(0, 200, allow_nan=False)
size = st.floats(1, 100, allow_nan=False)


@st.composite
def boxes(draw):
    x, y, w, h = draw(coord), draw(coord), draw(size), draw(size)
    return Box(x, y, x + w, y + h)


def test_box_validation():
    with pytest.raises(DegenerateInputError):
        Box(0, 0, 0, 5)
    with pytest.raises(DegenerateInputError):
        Box(0, 0, 5, -1)
    with pytest.raises(InvalidArgumentError):
        Box(0, 0, float("nan"), 1)
    b = Box.from_list([1, 2, 4, 8])
    assert (b.width, b.height, b.area, b.center) == (3, 6, 18, (2.5, 5.0))
    assert b.translate(1, -2).as_list() == [2, 0, 5, 6]


def test_iou_examples():
    a = Box(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, Box(1, 0, 3, 2)) == pytest.approx(1 / 3)
    assert iou(a, Box(2, 0, 4, 2)) == 0.0  # touching edges
    assert iou(a, Box(5, 5, 6, 6)) == 0.0
    assert iou(Box(0, 0, 10, 10), Box(2, 2, 4, 4)) == pytest.approx(0.04)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)


@given(boxes(), st.floats(-50, 50), st.floats(-50, 50))
def test_iou_translation_invariant(a, dx, dy):
    b = Box(a.x1 + 3, a.y1 + 1, a.x2 + 5, a.y2 + 2)
    assert iou(a.translate(dx, dy), b.translate(dx, dy)) == pytest.approx(iou(a, b), abs=1e-9)


def test_iou_matrix_matches_scalar(kernels, rng):
    a = [Box(x, y, x + w, y + h) for x, y, w, h in rng.uniform(1, 50, size=(7, 4))]
    b = [Box(x, y, x + w, y + h) for x, y, w, h in rng.uniform(1, 50, size=(5, 4))]
    m = iou_matrix(a, b)
    assert m.shape == (7, 5)
    for i in range(7):
        for j in range(5):
            assert m[i, j] == pytest.approx(iou(a[i], b[j]), abs=1e-15)
    assert iou_matrix([], b).shape == (0, 5)


@pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
def test_backends_agree(rng):
    for _ in range(20):
        n, m = rng.integers(0, 30, size=2)
        a = rng.uniform(0, 100, size=(n, 2))
        a = np.hstack([a, a + rng.uniform(1, 40, size=(n, 2))])
        b = rng.uniform(0, 100, size=(m, 2))
        b = np.hstack([b, b + rng.uniform(1, 40, size=(m, 2))])
        if n and m:
            np.testing.assert_array_equal(_pykernels.iou_matrix(a, b), _ckernels.iou_matrix(a, b))
        assert list(_pykernels.nms_sorted(a, 0.4)) == list(_ckernels.nms_sorted(a, 0.4))
        py = _pykernels.greedy_match(a, b, 0.3)
        cy = _ckernels.greedy_match(a, b, 0.3)
        assert list(py[0]) == list(cy[0]) and list(py[1]) == list(cy[1])


def test_ltrb_roundtrip_and_centerness():
    box = Box(0, 0, 10, 20)
    off = ltrb_encode((5, 10), box)
    assert off.as_tuple() == (5, 10, 5, 10)
    assert centerness(off) == 1.0
    assert ltrb_decode((5, 10), off) == box
    assert centerness(LtrbOffsets(1, 2, 3, 2)) == pytest.approx(math.sqrt(1 / 3))
    with pytest.raises(DegenerateInputError):
        ltrb_encode((0, 10), box)  # on the border
    with pytest.raises(DegenerateInputError):
        ltrb_encode((11, 10), box)
    with pytest.raises(InvalidArgumentError):
        LtrbOffsets(-1, 0, 1, 1)


@given(boxes(), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_ltrb_roundtrip_property(box, fx, fy):
    loc = (box.x1 + fx * box.width, box.y1 + fy * box.height)
    if not (box.x1 < loc[0] < box.x2 and box.y1 < loc[1] < box.y2):
        return
    off = ltrb_encode(loc, box)
    back = ltrb_decode(loc, off)
    np.testing.assert_allclose(back.as_list(), box.as_list(), atol=1e-9)
    c = centerness(off)
    assert 0.0 < c <= 1.0


def test_objectness():
    assert objectness(0.25, 1.0) == 0.5
    assert objectness(0.0, 0.9) == 0.0
    assert make_proposal(Box(0, 0, 1, 1), 0.64, 1.0).objectness == pytest.approx(0.8)
    with pytest.raises(InvalidArgumentError):
        objectness(1.2, 0.5)


def brute_force_nms(dets, thresh):
    """Reference: repeatedly take the best remaining box, drop its overlaps."""
    remaining = list(range(len(dets)))
    kept = []
    while remaining:
        best = max(remaining, key=lambda i: (dets[i][1], -i))
        kept.append(best)
        remaining = [i for i in remaining if i != best and iou(dets[i][0], dets[best][0]) < thresh]
    return kept


def test_nms_examples(kernels):
    dets = [(Box(0, 0, 10, 10), 0.9), (Box(1, 1, 11, 11), 0.8), (Box(50, 50, 60, 60), 0.7)]
    assert nms(dets, 0.5) == [0, 2]
    assert nms(dets, 0.99) == [0, 1, 2]
    assert nms([], 0.5) == []
    # identical boxes and scores: first one wins
    same = [(Box(0, 0, 1, 1), 0.5), (Box(0, 0, 1, 1), 0.5)]
    assert nms(same, 0.7) == [0]


@settings(max_examples=60)
@given(st.lists(st.tuples(boxes(), st.floats(0, 1)), max_size=25), st.floats(0.05, 0.95))
def test_nms_matches_brute_force(dets, thresh):
    kept = nms(dets, thresh)
    assert kept == brute_force_nms(dets, thresh)
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            assert iou(dets[a][0], dets[b][0]) < thresh
    # idempotent
    sub = [dets[i] for i in kept]
    assert nms(sub, thresh) == list(range(len(sub)))
