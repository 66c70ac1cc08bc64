import os
import subprocess
import sys

import numpy as np
import pytest

from sissa import kernels
from sissa.kernels import numpy_impl

numba_impl = pytest.importorskip("sissa.kernels.numba_impl")


def _close(a, b, tol):
    for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
        np.testing.assert_allclose(np.asarray(x, np.float64), np.asarray(y, np.float64), rtol=tol, atol=tol)


@pytest.mark.parametrize("dtype, tol", [(np.float64, 1e-12), (np.float32, 1e-5)])
@pytest.mark.parametrize("stride, pad", [(1, 1), (1, 0), (2, 1)])
@pytest.mark.parametrize("c_in", [1, 5])  # direct loop and im2col paths
def test_conv_backends_agree(dtype, tol, stride, pad, c_in):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, c_in, 9, 8)).astype(dtype)
    w = rng.standard_normal((4, c_in, 3, 3)).astype(dtype)
    b = rng.standard_normal(4).astype(dtype)
    y = numpy_impl.conv2d_forward(x, w, b, stride, pad)
    _close(y, numba_impl.conv2d_forward(x, w, b, stride, pad), tol)
    gy = rng.standard_normal(y.shape).astype(dtype)
    _close(numpy_impl.conv2d_backward(x, w, gy, stride, pad),
           numba_impl.conv2d_backward(x, w, gy, stride, pad), tol)


@pytest.mark.parametrize("shape", [(2, 3, 8, 8), (1, 1, 5, 7)])
def test_maxpool_backends_agree(shape):
    x = np.random.default_rng(1).standard_normal(shape)
    y0, i0 = numpy_impl.maxpool2d_forward(x, 2)
    y1, i1 = numba_impl.maxpool2d_forward(x, 2)
    np.testing.assert_array_equal(y0, y1)
    gy = np.random.default_rng(2).standard_normal(y0.shape)
    np.testing.assert_array_equal(numpy_impl.maxpool2d_backward(gy, i0, x.shape, 2),
                                  numba_impl.maxpool2d_backward(gy, i1, x.shape, 2))


@pytest.mark.parametrize("dtype, tol", [(np.float64, 1e-12), (np.float32, 1e-6)])
def test_lstm_backends_agree(dtype, tol):
    rng = np.random.default_rng(3)
    z = (rng.standard_normal((5, 16)) * 3).astype(dtype)
    c = rng.standard_normal((5, 4)).astype(dtype)
    f0 = numpy_impl.lstm_pointwise_forward(z, c)
    _close(f0, numba_impl.lstm_pointwise_forward(z, c), tol)
    gh, gc = rng.standard_normal((2, 5, 4)).astype(dtype)
    _close(numpy_impl.lstm_pointwise_backward(f0[2], f0[3], c, gh, gc),
           numba_impl.lstm_pointwise_backward(f0[2], f0[3], c, gh, gc), tol)


def test_use_backend_switches_module_functions():
    original = kernels.backend
    try:
        kernels.use_backend("numpy")
        assert kernels.conv2d_forward is numpy_impl.conv2d_forward
        kernels.use_backend("numba")
        assert kernels.conv2d_forward is numba_impl.conv2d_forward
        with pytest.raises(ValueError):
            kernels.use_backend("cuda")
    finally:
        kernels.use_backend(original)


def test_model_output_same_under_both_backends():
    from sissa.models import ModelConfig, build_model
    from sissa.nn import Tensor
    original = kernels.backend
    x = np.random.default_rng(0).uniform(0, 1, (2, 32, 21)).astype(np.float32)
    outs = {}
    try:
        for name in ("numpy", "numba"):
            kernels.use_backend(name)
            m = build_model(ModelConfig("L-A", 32), 0).eval()
            outs[name] = m(Tensor(x)).data
            outs[name + "C"] = build_model(ModelConfig("C-A", 32), 0).eval()(Tensor(x)).data
    finally:
        kernels.use_backend(original)
    np.testing.assert_allclose(outs["numpy"], outs["numba"], rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(outs["numpyC"], outs["numbaC"], rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("flag, want", [("0", "numpy"), ("1", "numba")])
def test_env_flag_selects_backend(flag, want):
    env = dict(os.environ, SISSA_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from sissa import kernels; print(kernels.backend)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == want
