# Copyright 2026 ivret contributors
#
# Licensed under the Apache License, Version 2.0 (the "License"); you may
# not use this file except in compliance with the License. You may obtain
# a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
# WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
# License for the specific language governing permissions and limitations
# under the License.

"""Dense float64 tensors with reverse-mode differentiation.

Every model in ivret is built from :class:`Tensor` operations.  An operation
whose inputs require gradients records a node holding its parents and a
backward closure; :meth:`Tensor.backward` walks those nodes in reverse
topological order.  Only leaves keep their ``grad`` between calls, so calling
``backward`` twice without :func:`zero_grad` accumulates.
"""
from __future__ import absolute_import, division, print_function, with_statement

import logging

import numpy as np


LOG = logging.getLogger(__name__)
DTYPE = np.float64


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


def _dim_error(op, a, b):
    return DimensionError('{}: incompatible shapes {} and {}'.format(
        op, tuple(a), tuple(b)))


def _unbroadcast(grad, shape):
    """sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)"""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor(object):
    """n-dimensional float64 array with an optional gradient accumulator"""
    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_parents', '_backward')

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def __repr__(self):
        return 'Tensor(shape={}, requires_grad={})'.format(self.shape, self.requires_grad)

    def __len__(self):
        return self.data.shape[0]

    def item(self):
        if self.data.size != 1:
            raise ContractError('item(): tensor of shape {} is not a scalar'.format(self.shape))
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    __div__ = __truediv__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _node(data, parents, backward_fn):
    """wrap ``data``; record the op when any parent requires grad"""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss):
    """populate ``grad`` of every leaf reachable from scalar ``loss``"""
    if loss.data.size != 1:
        raise ContractError('backward(): loss must be scalar, got shape {}'.format(loss.shape))
    if not loss.requires_grad:
        raise ContractError('backward(): loss does not depend on any parameter')

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = _unbroadcast(parent_grad, parent.shape)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad


def zero_grad(params):
    for p in params:
        p.grad = None


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast(a.data, b.data).shape
    except ValueError:
        raise _dim_error(op, a.shape, b.shape)


# elementwise binary ops

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('sub', a, b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('div', a, b)
    out = a.data / b.data
    return _node(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def scale(a, factor):
    return _node(a.data * factor, (a,), lambda g: (g * factor,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _dim_error('matmul', a.shape, b.shape)
    return _node(a.data.dot(b.data), (a, b),
                 lambda g: (g.dot(b.data.T), a.data.T.dot(g)))


# elementwise unary ops

def exp(a):
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


# max(0, .) is the hinge used by the retrieval losses
hinge = relu


def leaky_relu(a, slope=0.2):
    factor = np.where(a.data > 0, 1.0, slope)
    return _node(a.data * factor, (a,), lambda g: (g * factor,))


def square(a):
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def softplus(a):
    out = np.logaddexp(0.0, a.data)
    sig = np.exp(a.data - out)
    return _node(out, (a,), lambda g: (g * sig,))


# reductions and shape ops

def sum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _node(out, (a,), _backward)


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def norm(a, eps=0.0):
    """L2 norm along the last axis; the gradient at the origin is zero"""
    out = np.sqrt((a.data * a.data).sum(axis=-1))
    safe = np.where(out > eps, out, 1.0)

    def _backward(g):
        direction = np.where((out > eps)[..., None], a.data / safe[..., None], 0.0)
        return (g[..., None] * direction,)
    return _node(out, (a,), _backward)


def l2_normalize(a, eps=1e-12):
    n = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    n = np.maximum(n, eps)
    out = a.data / n

    def _backward(g):
        return ((g - out * (g * out).sum(axis=-1, keepdims=True)) / n,)
    return _node(out, (a,), _backward)


def concat(tensors):
    """concatenate along the last axis"""
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape[:-1] != tensors[0].shape[:-1]:
            raise _dim_error('concat', tensors[0].shape, t.shape)
    out = np.concatenate([t.data for t in tensors], axis=-1)
    bounds = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=-1))
    return _node(out, tuple(tensors), _backward)


def _is_basic(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def take(a, index):
    """indexing; used to split network heads and gather mismatch rows"""
    out = a.data[index]

    def _backward(g):
        full = np.zeros_like(a.data)
        if _is_basic(index):
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)
    return _node(out, (a,), _backward)


def reshape(a, shape):
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    inverse = None if axes is None else np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def broadcast_rows(row, batch):
    """repeat a row vector (or scalar) over a leading batch dimension"""
    row = as_tensor(row)
    shape = (batch,) + row.shape[-1:] if row.ndim else (batch,)
    return _node(np.broadcast_to(row.data, shape).copy(), (row,),
                 lambda g: (_unbroadcast(g, row.shape),))


# convolution

def _conv_geometry(input_shape, kernel_shape, stride, padding):
    if len(input_shape) != 4 or len(kernel_shape) != 4 or input_shape[1] != kernel_shape[1]:
        raise _dim_error('conv2d', input_shape, kernel_shape)
    k_h, k_w = kernel_shape[2:]
    h, w = input_shape[2] + 2 * padding, input_shape[3] + 2 * padding
    if h < k_h or w < k_w or (h - k_h) % stride or (w - k_w) % stride:
        raise DimensionError(
            'conv2d: input {} with kernel {} does not tile at stride {} padding {}'.format(
                tuple(input_shape), tuple(kernel_shape), stride, padding))
    return (h - k_h) // stride + 1, (w - k_w) // stride + 1


def conv2d(x, kernel, stride=2, padding=1):
    """cross-correlation of ``x`` [B, C, H, W] with ``kernel`` [Cout, Cin, kh, kw]"""
    x, kernel = as_tensor(x), as_tensor(kernel)
    h_out, w_out = _conv_geometry(x.shape, kernel.shape, stride, padding)
    k_h, k_w = kernel.shape[2:]
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    s_b, s_c, s_h, s_w = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded,
        shape=(padded.shape[0], padded.shape[1], h_out, w_out, k_h, k_w),
        strides=(s_b, s_c, s_h * stride, s_w * stride, s_h, s_w),
        writeable=False)
    out = np.einsum('bchwij,ocij->bohw', windows, kernel.data, optimize=True)

    def _backward(g):
        grad_kernel = np.einsum('bohw,bchwij->ocij', g, windows, optimize=True)
        grad_windows = np.einsum('bohw,ocij->bchwij', g, kernel.data, optimize=True)
        grad_padded = np.zeros_like(padded)
        for i in range(k_h):
            for j in range(k_w):
                grad_padded[:, :, i:i + h_out * stride:stride, j:j + w_out * stride:stride] += \
                    grad_windows[:, :, :, :, i, j]
        h_end = grad_padded.shape[2] - padding
        w_end = grad_padded.shape[3] - padding
        return grad_padded[:, :, padding:h_end, padding:w_end], grad_kernel
    return _node(out, (x, kernel), _backward)


# random numbers

class Rng(object):
    """Seeded counter-based (Philox) generator.

    Philox streams are specified bit-for-bit, so equal seeds give equal draws
    on every platform.  ``derive`` gives independent child streams keyed by
    integers, used for per-trial and per-purpose seeds.
    """

    def __init__(self, seed, path=()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        entropy = [self.seed] + list(self.path)
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def derive(self, *keys):
        return Rng(self.seed, self.path + tuple(keys))

    def normal(self, shape, scale=1.0):
        return self._gen.standard_normal(shape) * scale

    def uniform(self, shape, low=0.0, high=1.0):
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    @property
    def state(self):
        """plain-python snapshot of the generator state (YAML friendly)"""
        return _plain(self._gen.bit_generator.state)

    @state.setter
    def state(self, value):
        bit_gen = self._gen.bit_generator
        current = bit_gen.state
        bit_gen.state = _restore(value, current)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [int(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    return value


def _restore(value, template):
    if isinstance(template, dict):
        return {k: _restore(value[k], template[k]) for k in template}
    if isinstance(template, np.ndarray):
        return np.array(value, dtype=template.dtype)
    return value


# optimizer

class AdamState(object):
    """moments for Adam, keyed by parameter name"""

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if learning_rate <= 0:
            raise ContractError('learning rate must be positive, got {}'.format(learning_rate))
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ContractError('betas must lie in (0, 1)')
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = {}
        self.second_moment = {}


def _named(params):
    if isinstance(params, dict):
        return list(params.items())
    return [(p.name if p.name is not None else str(i), p) for i, p in enumerate(params)]


def adam_step(params, state):
    """one bias-corrected Adam update; zeroes the grads afterwards

    :param dict|list params: ``{name: Tensor}`` or a list of tensors
    :param AdamState state: optimizer state, updated in place
    """
    named = _named(params)
    for name, p in named:
        if p.grad is None:
            raise ContractError('adam_step: parameter "{}" has no gradient'.format(name))

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, p in named:
        g = p.grad
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None or m.shape != p.shape:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.grad = None
