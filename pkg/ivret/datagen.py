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

"""Bi-modal datasets with ground-truth factors

* ``synth``: factors ``[fS_1, fS_2, f_1, f_2]`` iid N(0, 1), each modality a
  fixed random two-layer tanh net of the shared and its private factors.
* ``sprites``: a filled square (modality 1) and a filled oval (modality 2)
  rasterised at identical position and scale on a 64x64 binary canvas.
* ``split_mnist``: left and right 28x14 halves of MNIST digits, read from the
  standard IDX files, the digit label as the only factor.
"""
from __future__ import absolute_import, division, print_function, with_statement

import gzip
import logging
import os
import struct

import numpy as np

import ivret.container
from ivret.container import FormatError


LOG = logging.getLogger(__name__)

# IDX type byte -> numpy dtype (big-endian)
IDX_TYPES = {
    0x08: np.dtype('>u1'),
    0x09: np.dtype('>i1'),
    0x0B: np.dtype('>i2'),
    0x0C: np.dtype('>i4'),
    0x0D: np.dtype('>f4'),
    0x0E: np.dtype('>f8'),
}
MNIST_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}


class PairedDataset(object):
    """aligned rows of ``x1``, ``x2`` and ``factors``

    ``x1``/``x2`` keep their storage dtype and per-sample shape; ``batch``
    hands out flattened float64 rows multiplied by ``scale``.
    """

    def __init__(self, name, x1, x2, factors, factor_names, split='all', scale=1.0,
                 generator=None):
        x1, x2 = np.asarray(x1), np.asarray(x2)
        factors = np.asarray(factors, dtype=np.float64)
        if factors.ndim == 1:
            factors = factors[:, None]
        if not (len(x1) == len(x2) == len(factors)):
            raise ValueError('x1 ({}), x2 ({}) and factors ({}) differ in length'.format(
                len(x1), len(x2), len(factors)))
        if factors.shape[1] != len(factor_names):
            raise ValueError('{} factor columns but {} names'.format(
                factors.shape[1], len(factor_names)))
        self.name = name
        self.x1 = x1
        self.x2 = x2
        self.factors = factors
        self.factor_names = list(factor_names)
        self.split = split
        self.scale = float(scale)
        self.generator = generator or {}

    def __len__(self):
        return len(self.x1)

    def __repr__(self):
        return '<PairedDataset {} {} n={}>'.format(self.name, self.split, len(self))

    @property
    def x1_dim(self):
        return int(np.prod(self.x1.shape[1:]))

    @property
    def x2_dim(self):
        return int(np.prod(self.x2.shape[1:]))

    @property
    def has_labels(self):
        return self.factors.shape[1] > 0

    def rows(self, which, idx):
        x = self.x1 if which == 1 else self.x2
        x = x[idx]
        return x.reshape(len(x), -1).astype(np.float64) * self.scale

    def batch(self, idx):
        """``(x1, x2)`` float rows for the indices ``idx``"""
        return self.rows(1, idx), self.rows(2, idx)

    def subset(self, idx, split=None):
        return PairedDataset(self.name, self.x1[idx], self.x2[idx], self.factors[idx],
                             self.factor_names, split or self.split, self.scale, self.generator)

    def header(self):
        return {
            'name': self.name,
            'split': self.split,
            'dtype': 'u1' if self.x1.dtype == np.uint8 else 'f8',
            'scale': self.scale,
            'factor_names': list(self.factor_names),
            'generator': dict(self.generator),
        }


def split(dataset, n_test, rng):
    """seeded train/test split: ``(train, test)``"""
    if not 0 < n_test < len(dataset):
        raise ValueError('cannot hold out {} of {} samples'.format(n_test, len(dataset)))
    order = rng.permutation(len(dataset))
    return (dataset.subset(np.sort(order[n_test:]), 'train'),
            dataset.subset(np.sort(order[:n_test]), 'test'))


def save(dataset, path):
    ivret.container.save_dataset(path, dataset.header(), dataset.x1, dataset.x2, dataset.factors)


def load(path):
    header, x1, x2, factors = ivret.container.load_dataset(path)
    if header['dtype'] == 'u1':
        x1, x2 = x1.astype(np.uint8), x2.astype(np.uint8)
    else:
        x1, x2 = x1.astype(np.float64), x2.astype(np.float64)
    LOG.info('loaded %s (%s, %d pairs) from %s', header['name'], header['split'], len(x1), path)
    return PairedDataset(header['name'], x1, x2, factors, header['factor_names'],
                         header['split'], header['scale'], header.get('generator'))


# synth

class SynthSpec(object):
    def __init__(self, shared_dim=2, private_dim=1, ambient_dim=50, hidden=50,
                 n_train=10000, n_test=2000):
        self.shared_dim = shared_dim
        self.private_dim = private_dim
        self.ambient_dim = ambient_dim
        self.hidden = hidden
        self.n_train = n_train
        self.n_test = n_test

    @property
    def factor_count(self):
        return self.shared_dim + 2 * self.private_dim

    def factor_names(self):
        return (['fS{}'.format(i + 1) for i in range(self.shared_dim)]
                + ['f1_{}'.format(i + 1) for i in range(self.private_dim)]
                + ['f2_{}'.format(i + 1) for i in range(self.private_dim)])

    def as_dict(self):
        return dict(vars(self), kind='synth')


def _random_net(rng, dims):
    """weights ~ N(0, 1/fan_in), zero biases"""
    return [(rng.normal((a, b), 1.0 / np.sqrt(a)), np.zeros(b))
            for a, b in zip(dims[:-1], dims[1:])]


def _run_net(net, x):
    for i, (w, b) in enumerate(net):
        x = x.dot(w) + b
        if i != len(net) - 1:
            x = np.tanh(x)
    return x


def synth_generators(spec, rng):
    """the fixed generator nets ``(G1, G2)`` of a seed"""
    dims = [spec.shared_dim + spec.private_dim, spec.hidden, spec.ambient_dim]
    return _random_net(rng.derive(1), dims), _random_net(rng.derive(2), dims)


def synth_render(spec, generators, factors):
    """``x1 = G1(fS, f1)``, ``x2 = G2(fS, f2)`` for stored factor rows"""
    factors = np.asarray(factors, dtype=np.float64)
    s, p = spec.shared_dim, spec.private_dim
    shared = factors[:, :s]
    x1 = _run_net(generators[0], np.hstack([shared, factors[:, s:s + p]]))
    x2 = _run_net(generators[1], np.hstack([shared, factors[:, s + p:s + 2 * p]]))
    return x1, x2


def synth_generate(spec, rng, split='train'):
    """draw the factors of ``split`` and render both modalities

    The generator nets depend on ``rng`` only, so train and test share them.
    """
    generators = synth_generators(spec, rng.derive(0))
    n = spec.n_train if split == 'train' else spec.n_test
    factors = rng.derive(1 if split == 'train' else 2).normal((n, spec.factor_count))
    x1, x2 = synth_render(spec, generators, factors)
    generator = spec.as_dict()
    generator.update(seed=rng.seed, path=list(rng.path))
    return PairedDataset('synth', x1, x2, factors, spec.factor_names(), split, 1.0, generator)


# sprites

class SpritesSpec(object):
    """32 x 32 positions, 6 scales, 64x64 canvas

    Scale index ``s`` is a half-width of ``half_widths[s]`` pixels; the oval
    has semi-axes ``(hw, hw / aspect)``.  Sprite centres span
    ``position_range`` so the largest sprite stays in frame.
    """

    def __init__(self, image_size=64, n_x=32, n_y=32, half_widths=(4, 6, 8, 10, 12, 14),
                 aspect=1.5, position_range=(14.0, 50.0), n_test=1024):
        self.image_size = image_size
        self.n_x = n_x
        self.n_y = n_y
        self.half_widths = tuple(half_widths)
        self.aspect = aspect
        self.position_range = tuple(position_range)
        self.n_test = n_test

    @property
    def count(self):
        return self.n_x * self.n_y * len(self.half_widths)

    def positions(self, n):
        return np.linspace(self.position_range[0], self.position_range[1], n)

    def as_dict(self):
        out = dict(vars(self), kind='sprites')
        out['half_widths'] = list(self.half_widths)
        out['position_range'] = list(self.position_range)
        return out


def sprites_factors(spec):
    """(x index, y index, scale index) for every sample, scale-major order"""
    s, x, y = np.meshgrid(np.arange(len(spec.half_widths)), np.arange(spec.n_x),
                          np.arange(spec.n_y), indexing='ij')
    return np.stack([x.ravel(), y.ravel(), s.ravel()], axis=1).astype(np.float64)


def sprites_render(spec, factors):
    """rasterise ``(square, oval)`` images for factor rows ``(x, y, scale)``"""
    factors = np.asarray(factors)
    xi, yi, si = (factors[:, k].astype(int) for k in range(3))
    cx = spec.positions(spec.n_x)[xi][:, None, None]
    cy = spec.positions(spec.n_y)[yi][:, None, None]
    hw = np.asarray(spec.half_widths, dtype=np.float64)[si][:, None, None]
    # pixel centres
    grid = np.arange(spec.image_size) + 0.5
    px = grid[None, None, :]
    py = grid[None, :, None]
    dx, dy = px - cx, py - cy
    square = (np.abs(dx) <= hw) & (np.abs(dy) <= hw)
    oval = (dx / hw) ** 2 + (dy * spec.aspect / hw) ** 2 <= 1.0
    return square.astype(np.uint8), oval.astype(np.uint8)


def sprites_generate(spec):
    factors = sprites_factors(spec)
    x1, x2 = sprites_render(spec, factors)
    return PairedDataset('sprites', x1, x2, factors, ['x', 'y', 'scale'], 'all', 1.0,
                         spec.as_dict())


# split mnist

class SplitMnistSpec(object):
    def __init__(self, idx_dir, split_column=14):
        self.idx_dir = idx_dir
        self.split_column = split_column

    def paths(self, split):
        return [_find_idx(self.idx_dir, name) for name in MNIST_FILES[split]]


def _find_idx(idx_dir, name):
    for candidate in (name, name + '.gz'):
        path = os.path.join(idx_dir, candidate)
        if os.path.exists(path):
            return path
    raise FormatError('IDX file {} not found in {}'.format(name, idx_dir), path=idx_dir)


def read_idx(path):
    """parse an IDX file (optionally gzip compressed) into an array"""
    opener = gzip.open if path.endswith('.gz') else open
    with opener(path, 'rb') as f:
        buf = f.read()
    if len(buf) < 4:
        raise FormatError('truncated magic number', len(buf), path)
    zero, type_code, ndim = struct.unpack('>HBB', buf[:4])
    if zero != 0 or type_code not in IDX_TYPES:
        raise FormatError('bad magic number 0x{:08x}'.format(struct.unpack('>I', buf[:4])[0]), 0, path)
    header_end = 4 + 4 * ndim
    if len(buf) < header_end:
        raise FormatError('truncated dimension header', len(buf), path)
    shape = struct.unpack('>{}I'.format(ndim), buf[4:header_end])
    dtype = IDX_TYPES[type_code]
    expected = header_end + int(np.prod(shape)) * dtype.itemsize
    if len(buf) < expected:
        raise FormatError('truncated payload: {} of {} bytes'.format(len(buf), expected),
                          len(buf), path)
    return np.frombuffer(buf, dtype=dtype, count=int(np.prod(shape)),
                         offset=header_end).reshape(shape)


def split_mnist_load(spec, split='train'):
    images_path, labels_path = spec.paths(split)
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise FormatError('image shape {} does not pair with label shape {}'.format(
            images.shape, labels.shape), 4, images_path)
    images = images.astype(np.uint8)
    x1 = np.ascontiguousarray(images[:, :, :spec.split_column])
    x2 = np.ascontiguousarray(images[:, :, spec.split_column:])
    LOG.info('read %d %s digits from %s', len(images), split, spec.idx_dir)
    return PairedDataset('split_mnist', x1, x2, labels.astype(np.float64), ['digit'], split,
                         1.0 / 255.0, {'kind': 'split_mnist', 'split_column': spec.split_column})
