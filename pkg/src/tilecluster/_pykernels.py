"""Pure numpy implementations of the convolution and pooling kernels.

Layouts are NCHW float64; convolutions are 3x3, stride 1, zero "same" padding.
Max pooling is 2x2/stride 2 and records the winning position (0..3, row-major
within the window, first maximum wins) for the backward pass.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(a):
    ap = np.pad(a, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return sliding_window_view(ap, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)


def conv2d_forward(x, w, b):
    out = np.tensordot(_windows(x), w, axes=([1, 4, 5], [1, 2, 3]))  # (N, H, W, O)
    out += b
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(x, w, grad_out):
    grad_w = np.tensordot(grad_out, _windows(x), axes=([0, 2, 3], [0, 2, 3]))
    grad_b = grad_out.sum(axis=(0, 2, 3))
    flipped = w[:, :, ::-1, ::-1]
    grad_x = np.tensordot(_windows(grad_out), flipped, axes=([1, 4, 5], [0, 2, 3]))
    return np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2)), grad_w, grad_b


def maxpool2d_forward(x):
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    blocks = x[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.int8)


def maxpool2d_backward(grad_out, idx, input_shape):
    n, c, h, w = input_shape
    h2, w2 = grad_out.shape[2], grad_out.shape[3]
    blocks = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(blocks, idx.astype(np.intp)[..., None], grad_out[..., None], axis=-1)
    blocks = blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    grad_x = np.zeros(input_shape)
    grad_x[:, :, :2 * h2, :2 * w2] = blocks.reshape(n, c, 2 * h2, 2 * w2)
    return grad_x
