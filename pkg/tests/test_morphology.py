import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cfdiff.errors import MaskError
from cfdiff.morphology import (MaskSet, area, as_mask, complement, dilate, intersect, is_subset,
                               union)

masks = arrays(bool, st.tuples(st.integers(1, 9), st.integers(1, 9)))
odd_k = st.sampled_from([1, 3, 5, 7])


def brute_dilate(p, k, disk=False):
    """Direct definition: output pixel is on if any input pixel lies within the element."""
    r = (k - 1) // 2
    H, W = p.shape
    out = np.zeros_like(p)
    for i in range(H):
        for j in range(W):
            for a in range(H):
                for b in range(W):
                    dy, dx = a - i, b - j
                    inside = dy * dy + dx * dx <= r * r if disk else max(abs(dy), abs(dx)) <= r
                    if p[a, b] and inside:
                        out[i, j] = True
    return out


def test_single_pixel_square():
    p = np.zeros((9, 9), bool)
    p[4, 4] = True
    d = dilate(p, 3)
    assert area(d) == 9
    assert d[3:6, 3:6].all()


def test_corner_pixel_clipped():
    p = np.zeros((6, 6), bool)
    p[0, 0] = True
    assert area(dilate(p, 5)) == 9


def test_disk_element_shape():
    p = np.zeros((9, 9), bool)
    p[4, 4] = True
    assert area(dilate(p, 5, "disk")) == 13


@settings(max_examples=60, deadline=None)
@given(p=masks, k=odd_k, disk=st.booleans())
def test_matches_brute_force(p, k, disk):
    got = dilate(p, k, "disk" if disk else "square")
    np.testing.assert_array_equal(got, brute_dilate(p, k, disk))


@settings(max_examples=60, deadline=None)
@given(p=masks, k=odd_k)
def test_extensive_and_identity(p, k):
    d = dilate(p, k)
    assert is_subset(p, d)
    np.testing.assert_array_equal(dilate(p, 1), p)


@settings(max_examples=60, deadline=None)
@given(p=masks, q=masks, k=odd_k)
def test_monotone_and_distributes_over_union(p, q, k):
    if p.shape != q.shape:
        q = np.resize(q, p.shape)
    pq = intersect(p, q)
    assert is_subset(dilate(pq, k), dilate(p, k))
    np.testing.assert_array_equal(dilate(union(p, q), k), dilate(p, k) | dilate(q, k))


@settings(max_examples=60, deadline=None)
@given(p=masks, k1=odd_k, k2=odd_k)
def test_square_composition(p, k1, k2):
    np.testing.assert_array_equal(dilate(dilate(p, k1), k2), dilate(p, k1 + k2 - 1))
    np.testing.assert_array_equal(dilate(dilate(p, k1), k1), dilate(p, 2 * k1 - 1))


@settings(max_examples=60, deadline=None)
@given(p=arrays(bool, (8, 8)), k=odd_k, dy=st.integers(-2, 2), dx=st.integers(-2, 2))
def test_translation_equivariance(p, k, dy, dx):
    """Embed in a larger canvas so borders do not interfere, then shift."""
    big = np.zeros((24, 24), bool)
    big[8:16, 8:16] = p
    shifted = np.roll(big, (dy, dx), axis=(0, 1))
    np.testing.assert_array_equal(dilate(shifted, k), np.roll(dilate(big, k), (dy, dx), axis=(0, 1)))


@settings(max_examples=60)
@given(p=masks, q=masks)
def test_de_morgan(p, q):
    q = np.resize(q, p.shape)
    np.testing.assert_array_equal(complement(union(p, q)), intersect(complement(p), complement(q)))
    np.testing.assert_array_equal(complement(intersect(p, q)), union(complement(p), complement(q)))


def test_empty_stays_empty():
    assert area(dilate(np.zeros((5, 5), bool), 7)) == 0


@pytest.mark.parametrize("k", [0, 2, -3, 4])
def test_bad_kernel(k):
    with pytest.raises(ValueError):
        dilate(np.zeros((5, 5), bool), k)


def test_bad_element_and_dims():
    with pytest.raises(ValueError):
        dilate(np.zeros((5, 5), bool), 3, "cross")
    with pytest.raises(MaskError):
        dilate(np.zeros((2, 5, 5), bool), 3)


def test_as_mask():
    np.testing.assert_array_equal(as_mask([[0, 1]]), [[False, True]])
    with pytest.raises(MaskError):
        as_mask([[0.5]])


def test_shape_mismatch():
    with pytest.raises(MaskError):
        union(np.zeros((2, 2), bool), np.zeros((3, 2), bool))
    with pytest.raises(MaskError):
        MaskSet(np.zeros((2, 2)), np.zeros((2, 3)))


def test_pathology_in_brain():
    b = np.zeros((4, 4), bool)
    b[1:3, 1:3] = True
    p = np.zeros((4, 4), bool)
    p[0, 0] = True
    with pytest.raises(MaskError):
        MaskSet(b, p).check_pathology_in_brain()
    MaskSet(b, p & b).check_pathology_in_brain()
