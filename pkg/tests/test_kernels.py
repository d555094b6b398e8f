import os

import numpy as np
import pytest

from dactext import _kernels_py as py
from dactext import kernels
from dactext.stats import _log_factorials

compiled = pytest.importorskip("dactext._kernels")


def _conv_inputs(rng, B=3, L=9, D=4, F=5, w=3):
    x = rng.normal(size=(B, L, D))
    lengths = np.array([L, 5, 3], dtype=np.int64)[:B]
    for b in range(B):
        x[b, lengths[b]:] = 0.0
    return x, lengths, rng.normal(size=(F, w, D)), rng.normal(size=F)


def test_backend_flag():
    assert kernels.BACKEND in ("compiled", "python")


def test_conv_forward_parity(rng):
    x, lengths, k, b = _conv_inputs(rng)
    p1, a1 = py.conv_relu_maxpool(x, lengths, k, b)
    p2, a2 = compiled.conv_relu_maxpool(x, lengths, k, b)
    assert np.allclose(p1, p2, atol=1e-12)
    assert np.array_equal(a1, a2)


def test_conv_forward_respects_length(rng):
    x, lengths, k, b = _conv_inputs(rng)
    _, arg = py.conv_relu_maxpool(x, lengths, k, b)
    assert np.all(arg <= (lengths - 3)[:, None])


def test_conv_backward_parity(rng):
    x, lengths, k, b = _conv_inputs(rng)
    pooled, arg = py.conv_relu_maxpool(x, lengths, k, b)
    g = rng.normal(size=pooled.shape)
    r1 = py.conv_maxpool_backward(x, arg, pooled, g, k)
    r2 = compiled.conv_maxpool_backward(x, arg, pooled, g, k)
    for u, v in zip(r1, r2):
        assert np.allclose(u, v, atol=1e-12)


def test_scatter_parity(rng):
    ids = rng.integers(0, 6, size=(4, 7))
    g = rng.normal(size=(4, 7, 3))
    a, b = np.zeros((6, 3)), np.zeros((6, 3))
    py.scatter_add_rows(a, ids, g)
    compiled.scatter_add_rows(b, ids, g)
    assert np.allclose(a, b, atol=1e-12)


def test_fisher_sums_parity():
    lg = _log_factorials(60)
    t = [[5, 3, 9], [7, 12, 4]]
    lp = (lg[17] + lg[23] + lg[12] + lg[15] + lg[13] - lg[40] - sum(lg[v] for row in t for v in row))
    r1 = py.fisher_2x3_sums(17, 12, 15, 13, lp, 1e-10, lg)
    r2 = compiled.fisher_2x3_sums(17, 12, 15, 13, lp, 1e-10, lg)
    assert r1 == pytest.approx(r2, rel=1e-12)


def test_env_var_forces_fallback():
    import subprocess
    import sys
    env = dict(os.environ, DACTEXT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import dactext.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
