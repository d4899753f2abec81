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

"""Layer compositions and the modality embedders e1, e2"""
from __future__ import absolute_import, division, print_function, with_statement

import logging

import numpy as np

import ivret.numkit as nk


LOG = logging.getLogger(__name__)
ACTIVATIONS = ('tanh', 'relu', 'leaky_relu', 'none')


class Module(object):
    """Parameter container.

    Subclasses assign :class:`ivret.numkit.Tensor` parameters and child
    modules as attributes and list their names in ``_children``.
    """
    _children = ()

    def named_parameters(self, prefix=''):
        for name in self._children:
            value = getattr(self, name)
            if isinstance(value, nk.Tensor):
                yield prefix + name, value
            elif isinstance(value, Module):
                for item in value.named_parameters(prefix + name + '.'):
                    yield item
            elif isinstance(value, (list, tuple)):
                for i, sub in enumerate(value):
                    sub_prefix = '{}{}.{}'.format(prefix, name, i)
                    if isinstance(sub, nk.Tensor):
                        yield sub_prefix, sub
                    else:
                        for item in sub.named_parameters(sub_prefix + '.'):
                            yield item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def param_dict(self, prefix=''):
        return dict(self.named_parameters(prefix))

    def set_requires_grad(self, flag):
        for p in self.parameters():
            p.requires_grad = flag
            p.grad = None

    def state_arrays(self, prefix=''):
        return {name: p.data.copy() for name, p in self.named_parameters(prefix)}

    def load_arrays(self, arrays, prefix=''):
        for name, p in self.named_parameters(prefix):
            if name not in arrays:
                raise nk.ContractError('missing parameter "{}"'.format(name))
            value = np.asarray(arrays[name], dtype=nk.DTYPE)
            if value.shape != p.shape:
                raise nk.DimensionError('{}: stored shape {} != model shape {}'.format(
                    name, value.shape, p.shape))
            p.data = value.copy()


def _param(shape):
    return nk.Tensor(np.zeros(shape), requires_grad=True)


def activate(x, activation, slope=0.2):
    if activation == 'tanh':
        return nk.tanh(x)
    if activation == 'relu':
        return nk.relu(x)
    if activation == 'leaky_relu':
        return nk.leaky_relu(x, slope)
    return x


class Linear(Module):
    _children = ('W', 'b')

    def __init__(self, dim_in, dim_out):
        self.W = _param((dim_in, dim_out))
        self.b = _param((dim_out,))

    @property
    def fan_in(self):
        return self.W.shape[0]

    def __call__(self, x):
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise nk.DimensionError('linear: input {} does not match weight {}'.format(
                x.shape, self.W.shape))
        return nk.matmul(x, self.W) + self.b


class Mlp(Module):
    """fully connected net; ``activation`` between layers, linear output"""
    _children = ('layers',)

    def __init__(self, layer_dims, activation='relu', slope=0.2):
        if activation not in ACTIVATIONS:
            raise ValueError('unknown activation "{}"'.format(activation))
        if len(layer_dims) < 2:
            raise ValueError('an Mlp needs at least input and output dims')
        self.layer_dims = list(layer_dims)
        self.activation = activation
        self.slope = slope
        self.layers = [Linear(a, b) for a, b in zip(layer_dims[:-1], layer_dims[1:])]

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def __call__(self, x):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i != last:
                x = activate(x, self.activation, self.slope)
        return x


class Conv(Module):
    _children = ('K', 'b')

    def __init__(self, c_in, c_out, kernel_size=4, stride=2, padding=1):
        self.K = _param((c_out, c_in, kernel_size, kernel_size))
        self.b = _param((c_out, 1, 1))
        self.stride = stride
        self.padding = padding

    @property
    def fan_in(self):
        return int(np.prod(self.K.shape[1:]))

    def __call__(self, x):
        return nk.conv2d(x, self.K, self.stride, self.padding) + self.b


class ConvStack(Module):
    """four 4x4 conv layers (32, 32, 64, 64) then FC 128 and FC out_dim, ReLU"""
    _children = ('convs', 'fc')

    def __init__(self, out_dim, channels=(32, 32, 64, 64), hidden=128,
                 image_size=64, kernel_size=4, stride=2, padding=1):
        self.image_size = image_size
        self.out_dim = out_dim
        c_in = 1
        self.convs = []
        size = image_size
        for c_out in channels:
            self.convs.append(Conv(c_in, c_out, kernel_size, stride, padding))
            size = (size + 2 * padding - kernel_size) // stride + 1
            c_in = c_out
        self.flat_dim = c_in * size * size
        self.fc = Mlp([self.flat_dim, hidden, out_dim], activation='relu')

    @property
    def in_shape(self):
        return (1, self.image_size, self.image_size)

    def __call__(self, x):
        x = nk.reshape(x, (x.shape[0], 1, self.image_size, self.image_size))
        for conv in self.convs:
            x = nk.relu(conv(x))
        x = nk.reshape(x, (x.shape[0], self.flat_dim))
        return self.fc(x)


class Embedder(Module):
    """v = e(x), L2-normalized rows"""
    _children = ('backbone',)

    def __init__(self, backbone, in_dim, out_dim, normalize_output=True):
        self.backbone = backbone
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.normalize_output = normalize_output

    def __call__(self, x):
        return embed(self, x)


def embed(e, x):
    """embed a batch of flattened inputs ``x`` [batch, in_dim]"""
    x = nk.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != e.in_dim:
        raise nk.DimensionError('embed: input {} does not match embedder input dim {}'.format(
            x.shape, e.in_dim))
    v = e.backbone(x)
    if e.normalize_output:
        v = nk.l2_normalize(v)
    return v


def _layers(net):
    if isinstance(net, (Linear, Conv)):
        return [net]
    found = []
    for name in net._children:
        value = getattr(net, name)
        values = value if isinstance(value, (list, tuple)) else [value]
        for sub in values:
            if isinstance(sub, Module):
                found.extend(_layers(sub))
    return found


def _init_std(fan_in, activation):
    # He for rectifiers, Xavier/LeCun fan-in otherwise
    if activation in ('relu', 'leaky_relu'):
        return np.sqrt(2.0 / fan_in)
    return np.sqrt(1.0 / fan_in)


def _activation_of(net):
    if isinstance(net, Mlp):
        return net.activation
    if isinstance(net, (ConvStack,)):
        return 'relu'
    if isinstance(net, Embedder):
        return _activation_of(net.backbone)
    return 'none'


def init_params(rng, net):
    """draw weights from a fan-in scaled normal, zero the biases"""
    activation = _activation_of(net)
    for layer in _layers(net):
        weight = layer.W if isinstance(layer, Linear) else layer.K
        std = _init_std(layer.fan_in, activation)
        weight.data = rng.normal(weight.shape, std)
        layer.b.data = np.zeros(layer.b.shape)
    return net


def make_embedder(kind, out_dim, cfg=None):
    """embedder with the per-dataset architecture

    :param str kind: ``synth``, ``sprites`` or ``split_mnist``
    :param int out_dim: dim(V)
    :param dict cfg: the resolved ``nets`` config section
    """
    cfg = cfg or {}
    if kind == 'synth':
        in_dim = cfg.get('in_dim', 50)
        backbone = Mlp([in_dim] + [cfg.get('hidden', 25)] * cfg.get('hidden_layers', 1) + [out_dim],
                       activation=cfg.get('activation', 'tanh'))
    elif kind == 'sprites':
        size = cfg.get('image_size', 64)
        in_dim = size * size
        backbone = ConvStack(out_dim,
                             channels=tuple(cfg.get('channels', (32, 32, 64, 64))),
                             hidden=cfg.get('hidden', 128),
                             image_size=size,
                             kernel_size=cfg.get('kernel_size', 4),
                             stride=cfg.get('stride', 2),
                             padding=cfg.get('padding', 1))
    elif kind == 'split_mnist':
        in_dim = cfg.get('in_dim', 28 * 14)
        backbone = Mlp([in_dim] + [cfg.get('hidden', 1024)] * cfg.get('hidden_layers', 4) + [out_dim],
                       activation=cfg.get('activation', 'relu'))
    else:
        raise ValueError('no embedder architecture for dataset "{}"'.format(kind))
    return Embedder(backbone, in_dim, out_dim)
