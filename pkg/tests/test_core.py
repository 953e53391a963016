import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segqa import core
from segqa.errors import DimensionError, ValidationError

pytestmark = pytest.mark.property


def masks(n=8):
    return arrays(np.uint8, (n, n), elements=st.integers(0, 1))


def images(n=8):
    return arrays(np.float32, (n, n), elements=st.floats(0, 1, width=32))


# -- mask_image ------------------------------------------------------------

def test_mask_image_example():
    img = np.array([[0.5, 0.2], [0.1, 0.9]])
    seg = np.array([[1, 0], [0, 1]])
    np.testing.assert_array_equal(core.mask_image(img, seg), [[0, 0.2], [0.1, 0]])


def test_mask_image_identity_and_annihilation():
    img = np.random.default_rng(0).random((16, 16)).astype(np.float32)
    np.testing.assert_array_equal(core.mask_image(img, np.zeros((16, 16), np.uint8)), img)
    assert not core.mask_image(img, np.ones((16, 16), np.uint8)).any()


def test_mask_image_errors():
    with pytest.raises(DimensionError):
        core.mask_image(np.zeros((4, 4)), np.zeros((4, 5), np.uint8))
    with pytest.raises(ValidationError):
        core.mask_image(np.zeros((4, 4)), np.full((4, 4), 2))


@given(images(), masks())
def test_mask_image_idempotent(img, seg):
    once = core.mask_image(img, seg)
    np.testing.assert_array_equal(core.mask_image(once, seg), once)


@given(images(), masks())
def test_mask_image_partition(img, seg):
    np.testing.assert_array_equal(core.mask_image(img, seg) + img * seg, img)


@given(images(), masks())
def test_mask_image_pointwise(img, seg):
    out = core.mask_image(img, seg)
    assert np.all(out[seg == 1] == 0)
    np.testing.assert_array_equal(out[seg == 0], img[seg == 0])


# -- difference_image ------------------------------------------------------

def test_difference_examples():
    a = np.random.default_rng(1).random((8, 8)).astype(np.float32)
    assert not core.difference_image(a, a).any()
    assert core.difference_image(np.array([[0.8]]), np.array([[0.5]]))[0, 0] == pytest.approx(0.3)
    with pytest.raises(DimensionError):
        core.difference_image(np.zeros((3, 3)), np.zeros((3, 4)))


def test_difference_inverse_random_pairs():
    rng = np.random.default_rng(2)
    for _ in range(20):
        orig = rng.random((64, 64), dtype=np.float32)
        rec = rng.random((64, 64), dtype=np.float32)
        dif = core.difference_image(orig, rec)
        assert np.max(np.abs((rec + dif) - orig)) == 0


@given(arrays(np.float32, (8, 8), elements=st.integers(0, 2**24).map(lambda k: k / 2**24)),
       arrays(np.float32, (8, 8), elements=st.integers(0, 2**24).map(lambda k: k / 2**24)))
def test_difference_inverse_on_24bit_grid(orig, rec):
    dif = core.difference_image(orig, rec)
    np.testing.assert_array_equal(rec + dif, orig)
    assert np.all(np.abs(dif) <= 1)


# -- dice ------------------------------------------------------------------

def test_dice_examples():
    a = np.zeros((4, 4), np.uint8)
    a[0, :] = 1
    assert core.dice(a, a) == 1.0
    b = np.zeros((4, 4), np.uint8)
    b[3, :] = 1
    assert core.dice(a, b) == 0.0
    c = np.zeros((4, 4), np.uint8)
    c[0, :2] = 1
    c[1, :2] = 1
    assert core.dice(a, c) == 0.5
    empty = np.zeros((4, 4), np.uint8)
    assert core.dice(empty, empty) == 1.0
    assert core.dice(empty, a) == 0.0


def test_dice_shape_mismatch():
    with pytest.raises(DimensionError):
        core.dice(np.zeros((4, 4)), np.zeros((5, 4)))


@given(masks(), masks())
def test_dice_symmetric_and_bounded(a, b):
    d = core.dice(a, b)
    assert d == core.dice(b, a)
    assert 0.0 <= d <= 1.0


@given(masks())
def test_dice_self(a):
    assert core.dice(a, a) == 1.0


@given(masks(), masks())
def test_dice_matches_counting_oracle(a, b):
    inter = sum(1 for x, y in zip(a.ravel(), b.ravel()) if x and y)
    total = int(a.sum()) + int(b.sum())
    expected = 1.0 if total == 0 else 2 * inter / total
    assert core.dice(a, b) == expected


# -- normalize -------------------------------------------------------------

def test_normalize_examples():
    raw = np.linspace(100, 300, 64).reshape(8, 8)
    np.testing.assert_allclose(core.normalize(raw), (raw - 100) / 200, atol=1e-7)
    assert not core.normalize(np.full((8, 8), 7.0)).any()
    unit = np.random.default_rng(3).random((8, 8))
    out = core.normalize(unit)
    assert out.min() == 0.0 and out.max() == 1.0


def test_normalize_rejects_nonfinite():
    raw = np.ones((8, 8))
    raw[0, 0] = np.nan
    with pytest.raises(ValidationError):
        core.normalize(raw)


@settings(max_examples=50)
@given(arrays(np.float64, (8, 8), elements=st.floats(-1e6, 1e6)))
def test_normalize_range_and_extrema(raw):
    out = core.normalize(raw)
    assert out.min() >= 0 and out.max() <= 1
    if raw.max() > raw.min():
        assert out.flat[np.argmax(raw)] == 1.0
        assert out.flat[np.argmin(raw)] == 0.0


def test_validate_image():
    core.validate_image(np.zeros((8, 8)))
    with pytest.raises(DimensionError):
        core.validate_image(np.zeros((8, 9)))
    with pytest.raises(DimensionError):
        core.validate_image(np.zeros((4, 4)))
    with pytest.raises(ValidationError):
        core.validate_image(np.full((8, 8), 1.5))
