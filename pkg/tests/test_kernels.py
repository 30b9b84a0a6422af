import os
import subprocess
import sys

import numpy as np
import pytest

from hdrradar import _pykernels, kernels

BACKENDS = kernels.backend_modules()


def brute_ring(power, hd, hr, gd, gr):
    """Training-ring sums by explicit loops: Doppler wraps, range is clamped."""
    m, n = power.shape
    total = np.zeros((m, n))
    count = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for di in range(-hd, hd + 1):
                for dj in range(-hr, hr + 1):
                    if abs(di) <= gd and abs(dj) <= gr:
                        continue
                    jj = j + dj
                    if 0 <= jj < n:
                        total[i, j] += power[(i + di) % m, jj]
                        count[i, j] += 1
    return total, count


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("shape,win", [((8, 12), (2, 3, 1, 1)), ((16, 9), (3, 2, 1, 0)), ((6, 6), (1, 1, 0, 0))])
def test_box_sums_match_loops(name, shape, win, rng):
    p = rng.exponential(size=shape)
    total, count = BACKENDS[name].box_sums(p, *win)
    t_ref, c_ref = brute_ring(p, *win)
    np.testing.assert_allclose(total, t_ref, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(count, c_ref)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
def test_backends_agree(rng):
    a, b = BACKENDS["numpy"], BACKENDS["cython"]
    x = (rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))) * 10.0 ** rng.uniform(-3, 6, (64, 64))
    g = rng.normal(size=x.shape) + 1j * rng.normal(size=x.shape)
    np.testing.assert_allclose(a.lcb_forward(x, 5.0, 1e-12), b.lcb_forward(x, 5.0, 1e-12), rtol=1e-14)
    np.testing.assert_allclose(a.lcb_backward(x, g, 5.0, 1e-12), b.lcb_backward(x, g, 5.0, 1e-12),
                               rtol=1e-12, atol=1e-15)
    p = np.abs(x) ** 2
    ta, ca = a.box_sums(p, 6, 6, 2, 2)
    tb, cb = b.box_sums(p, 6, 6, 2, 2)
    np.testing.assert_allclose(ta, tb, rtol=1e-9)
    np.testing.assert_array_equal(ca, cb)


def test_kernels_accept_readonly_input():
    x = np.ones((4, 4), complex)
    x.setflags(write=False)
    for mod in BACKENDS.values():
        assert mod.lcb_forward(x, 0.5, 1e-12).shape == (4, 4)
        assert mod.box_sums(np.abs(x), 1, 1, 0, 0)[0].shape == (4, 4)


def test_pure_python_selected_by_env():
    env = dict(os.environ, HDRRADAR_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from hdrradar import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    assert _pykernels.BACKEND == "numpy"
