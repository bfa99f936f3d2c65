import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mosaicgen.bicubic import kernel, resize


def reference_resize(values, out_h, out_w):
    """Brute-force oracle: direct 2-D evaluation of the Catmull-Rom sum."""

    def k(x):
        x = abs(x)
        a = -0.5
        if x <= 1:
            return (a + 2) * x**3 - (a + 3) * x**2 + 1
        if x < 2:
            return a * (x**3 - 5 * x**2 + 8 * x - 4)
        return 0.0

    src_h, src_w = values.shape
    out = np.zeros((out_h, out_w))
    for oy in range(out_h):
        sy = (oy + 0.5) * src_h / out_h - 0.5
        by = int(np.floor(sy))
        for ox in range(out_w):
            sx = (ox + 0.5) * src_w / out_w - 0.5
            bx = int(np.floor(sx))
            acc = 0.0
            for ty in (-1, 0, 1, 2):
                yy = min(max(by + ty, 0), src_h - 1)
                wy = k(sy - (by + ty))
                for tx in (-1, 0, 1, 2):
                    xx = min(max(bx + tx, 0), src_w - 1)
                    acc += wy * k(sx - (bx + tx)) * values[yy, xx]
            out[oy, ox] = acc
    return out


def test_kernel_values():
    assert kernel(np.array([0.0]))[0] == 1.0
    assert kernel(np.array([1.0]))[0] == 0.0
    assert kernel(np.array([2.0]))[0] == 0.0
    # partition of unity at an arbitrary phase
    f = 0.3
    taps = kernel(np.array([f + 1, f, 1 - f, 2 - f]))
    assert abs(taps.sum() - 1.0) < 1e-12


@pytest.mark.parametrize("shape,out_shape", [((4, 4), (16, 16)), ((7, 3), (21, 24)),
                                             ((5, 5), (3, 4)), ((2, 2), (2, 2))])
def test_constant_map_reproduced_exactly(shape, out_shape):
    vals = np.full(shape, 0.731)
    out = resize(vals, *out_shape)
    assert np.allclose(out, 0.731, atol=1e-12)


def test_identity_resize():
    rng = np.random.default_rng(3)
    vals = rng.random((6, 9))
    assert np.allclose(resize(vals, 6, 9), vals, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    src_h=st.integers(2, 8), src_w=st.integers(2, 8),
    out_h=st.integers(1, 12), out_w=st.integers(1, 12),
    seed=st.integers(0, 10_000),
)
def test_matches_bruteforce_oracle(src_h, src_w, out_h, out_w, seed):
    vals = np.random.default_rng(seed).random((src_h, src_w))
    got = resize(vals, out_h, out_w)
    want = reference_resize(vals, out_h, out_w)
    assert np.allclose(got, want, atol=1e-12)


def test_linear_ramp_preserved_in_interior():
    # cubic kernels reproduce affine functions away from clamped edges
    vals = np.linspace(0.0, 1.0, 10)[None, :].repeat(10, axis=0)
    out = resize(vals, 20, 20)
    expected = (np.arange(20) + 0.5) * 0.5 - 0.5  # source coordinate per column
    interior = slice(4, 16)
    want = (expected[interior]) / 9.0
    assert np.allclose(out[10, interior], want, atol=1e-9)


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        resize(np.zeros((2, 2, 2)), 4, 4)
    with pytest.raises(ValueError):
        resize(np.zeros((2, 2)), 0, 4)
