import numpy as np
import pytest

from drcn.autodiff import ConvLayer, Tensor
from drcn.demo import write_demo_dataset


def make_layer(w, b=None, requires_grad=True) -> ConvLayer:
    w = np.asarray(w, dtype=np.float64)
    if b is None:
        b = np.zeros(w.shape[0])
    return ConvLayer(
        Tensor(w, requires_grad=requires_grad),
        Tensor(np.asarray(b, dtype=np.float64), requires_grad=requires_grad),
    )


def identity_layer(channels: int) -> ConvLayer:
    w = np.zeros((channels, channels, 3, 3))
    for c in range(channels):
        w[c, c, 1, 1] = 1.0
    return make_layer(w)


def zero_layer(c_in: int, c_out: int, bias=None) -> ConvLayer:
    return make_layer(np.zeros((c_out, c_in, 3, 3)), bias)


def naive_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct-summation same-padded cross-correlation, the reference for
    the im2col implementation.  Deliberately loop-based and independent."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = (k - 1) // 2
    out = np.zeros((n, o, h, wd), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for i in range(h):
                for j in range(wd):
                    acc = float(b[oi])
                    for ci in range(c):
                        for u in range(k):
                            for v in range(k):
                                ii, jj = i + u - p, j + v - p
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += w[oi, ci, u, v] * x[ni, ci, ii, jj]
                    out[ni, oi, i, j] = acc
    return out


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A few small synthetic images for fast pipeline and CLI tests."""
    root = tmp_path_factory.mktemp("tiny_data")
    write_demo_dataset(root, count=3, size=64, seed=500)
    return root
