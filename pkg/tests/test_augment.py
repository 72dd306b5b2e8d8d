import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fdclab.augment import (METHODS, Method, alternate, augment, augment_batch, augment_matrix,
                            duplicate, flip, repeat_elements, source_index, tile, zero_pad)
from fdclab.sdi import SDIMatrix

unit = st.floats(0, 1, allow_nan=False, width=32)
sdis = arrays(np.float64, (15, 31), elements=unit)


def test_tile_example():
    np.testing.assert_array_equal(tile(np.array([[1, 2], [3, 4]]), 2, 2),
                                  [[1, 2, 1, 2], [3, 4, 3, 4], [1, 2, 1, 2], [3, 4, 3, 4]])
    M = np.arange(6).reshape(2, 3)
    np.testing.assert_array_equal(tile(M, 1, 1), M)
    assert tile(np.zeros((15, 31)), 14, 7).shape == (210, 217)


def test_repeat_example():
    np.testing.assert_array_equal(repeat_elements(np.array([[1, 2]]), 2, 2),
                                  [[1, 1, 2, 2], [1, 1, 2, 2]])
    np.testing.assert_array_equal(repeat_elements(np.array([[5]]), 3, 3), np.full((3, 3), 5))


def test_flip_examples():
    M = np.arange(12).reshape(3, 4)
    np.testing.assert_array_equal(flip(np.array([[1, 2, 3]]), "lr"), [[3, 2, 1]])
    np.testing.assert_array_equal(flip(flip(M, "lr"), "lr"), M)
    np.testing.assert_array_equal(flip(flip(M, "lr"), "ud"), flip(flip(M, "ud"), "lr"))
    np.testing.assert_array_equal(flip(flip(M, "lr"), "ud"), np.rot90(M, 2))
    with pytest.raises(ValueError):
        flip(M, "diag")


def test_zero_pad_examples():
    out = zero_pad(np.ones((210, 217)))
    assert out.shape == (224, 224) and out.sum() == 45570
    X = np.arange(210 * 217, dtype=float).reshape(210, 217) + 1
    P = zero_pad(X)
    assert P[7, 3] == X[0, 0] and P[216, 219] == X[209, 216]
    assert not zero_pad(np.zeros((210, 217))).any()
    with pytest.raises(ValueError):
        zero_pad(np.ones((210, 216)))


def test_method_constructions():
    M = np.random.default_rng(0).random((15, 31))
    row = alternate(M, 7, "lr")
    np.testing.assert_array_equal(duplicate(M, "All_Flip"), alternate(row, 14, "ud"))
    np.testing.assert_array_equal(duplicate(M, "LR_Flip_Tile"), np.vstack([row] * 14))
    np.testing.assert_array_equal(duplicate(M, "LR_Flip_Repeat"), np.repeat(row, 14, axis=0))
    col = alternate(M, 14, "ud")
    np.testing.assert_array_equal(duplicate(M, "UD_Flip_Tile"), np.hstack([col] * 7))
    np.testing.assert_array_equal(duplicate(M, "UD_Flip_Repeat"), np.repeat(col, 7, axis=1))
    np.testing.assert_array_equal(augment_matrix(M, "All_Tile")[7:22, 3:34], M)


def test_constant_sdi_all_methods_identical():
    M = np.full((15, 31), 0.3)
    outs = [augment_matrix(M, m) for m in METHODS]
    for o in outs[1:]:
        np.testing.assert_array_equal(o, outs[0])


def test_bad_shape():
    with pytest.raises(ValueError):
        augment_matrix(np.zeros((15, 30)))


def border_ok(img):
    return (not img[:7].any() and not img[217:].any() and not img[:, :3].any()
            and not img[:, 220:].any())


@settings(max_examples=1000, deadline=None)
@given(sdis, st.sampled_from(METHODS))
def test_geometry_property(M, method):
    img = augment_matrix(M, method)
    assert img.shape == (224, 224) and border_ok(img)
    inner = np.sort(img[7:217, 3:220].ravel())
    np.testing.assert_array_equal(inner, np.sort(np.repeat(M.ravel(), 98)))


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(METHODS), st.integers(0, 2 ** 31))
def test_batch_and_source_index_agree(method, seed):
    M = np.random.default_rng(seed).random((3, 15, 31)).astype(np.float32)
    batch = augment_batch(M, method)
    rows, cols = source_index(method)
    for k in range(3):
        ref = augment_matrix(M[k], method)
        np.testing.assert_array_equal(batch[k, 0], ref)
        i, j = 100, 150
        assert ref[i, j] == M[k][rows[i], cols[j]]
    assert (rows[:7] == -1).all() and (cols[220:] == -1).all() and (cols[:3] == -1).all()


def test_augment_wrapper():
    s = SDIMatrix(np.full((15, 31), 0.5), 3, 31.0)
    a = augment(s, "All_Repeat")
    assert a.label == 3 and a.method is Method.ALL_REPEAT and a.values.shape == (224, 224)
