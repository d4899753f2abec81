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

"""Self-describing little-endian binary containers

Dataset files (``.ivd``)::

    [offset] [type]         [description]
    0        4 bytes        magic "IVDS"
    4        uint16         format version
    6        uint32         header length H
    10       H bytes        YAML header (name, split, count, shapes, dtype, ...)
    ...      payload        x1, x2 (row-major, header dtype), factors (float64)
    end-4    uint32         CRC-32 of every preceding byte

Checkpoint files (``.ivc``)::

    0        4 bytes        magic "IVCK"
    4        uint16         format version
    6        uint32         entry count
    10       entries        kind (uint8), name length (uint16), name (utf-8),
                            ndim (uint8), shape (uint32 * ndim),
                            payload length (uint64), payload
    end-4    uint32         CRC-32 of every preceding byte

Array entries (kind 0) hold float64 data, text entries (kind 1) utf-8.
"""
from __future__ import absolute_import, division, print_function, with_statement

import collections
import logging
import struct
import zlib

import numpy as np
import yaml


LOG = logging.getLogger(__name__)
VERSION = 1
DATASET_MAGIC = b'IVDS'
CHECKPOINT_MAGIC = b'IVCK'
KIND_ARRAY = 0
KIND_TEXT = 1
DTYPES = {'u1': np.dtype('<u1'), 'f8': np.dtype('<f8')}


class FormatError(ValueError):
    def __init__(self, message, offset=None, path=None):
        if offset is not None:
            message = '{} (at byte offset {})'.format(message, offset)
        if path is not None:
            message = '{}: {}'.format(path, message)
        super(FormatError, self).__init__(message)
        self.offset = offset
        self.path = path


class _Cursor(object):
    def __init__(self, buf, path=None):
        self.buf = buf
        self.pos = 0
        self.path = path

    def error(self, message, offset=None):
        return FormatError(message, self.pos if offset is None else offset, self.path)

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise self.error('truncated while reading {} ({} bytes needed, {} left)'.format(
                what, n, len(self.buf) - self.pos))
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _seal(body):
    return body + struct.pack('<I', zlib.crc32(body) & 0xffffffff)


def _open_sealed(buf, magic, path):
    cur = _Cursor(buf, path)
    found = cur.take(len(magic), 'magic')
    if found != magic:
        raise cur.error('bad magic {!r}, expected {!r}'.format(found, magic), 0)
    version, = cur.unpack('<H', 'version')
    if version != VERSION:
        raise cur.error('unsupported format version {} (this is version {})'.format(
            version, VERSION), len(magic))
    if len(buf) < cur.pos + 4:
        raise cur.error('truncated: no room for the checksum')
    stored, = struct.unpack('<I', buf[-4:])
    if zlib.crc32(buf[:-4]) & 0xffffffff != stored:
        raise cur.error('checksum mismatch', len(buf) - 4)
    cur.buf = buf[:-4]
    return cur


def _write(path, data):
    with open(path, 'wb') as f:
        f.write(data)


def _read(path):
    with open(path, 'rb') as f:
        return f.read()


def _yaml_text(value):
    return yaml.safe_dump(value, default_flow_style=False, sort_keys=True)


# datasets

def encode_dataset(header, x1, x2, factors):
    """serialise a paired dataset; ``header['dtype']`` picks the storage type"""
    dtype = DTYPES[header['dtype']]
    x1 = np.ascontiguousarray(x1, dtype=dtype)
    x2 = np.ascontiguousarray(x2, dtype=dtype)
    factors = np.ascontiguousarray(factors, dtype=DTYPES['f8'])
    if not (len(x1) == len(x2) == len(factors)):
        raise ValueError('x1, x2 and factors must have the same number of rows')
    header = dict(header)
    header.update({
        'count': int(len(x1)),
        'x1_shape': [int(s) for s in x1.shape[1:]],
        'x2_shape': [int(s) for s in x2.shape[1:]],
        'factor_count': int(factors.shape[1]) if factors.ndim == 2 else 0,
    })
    text = _yaml_text(header).encode('utf-8')
    body = b''.join([DATASET_MAGIC, struct.pack('<HI', VERSION, len(text)), text,
                     x1.tobytes(), x2.tobytes(), factors.tobytes()])
    return _seal(body)


def decode_dataset(buf, path=None):
    """:return: ``(header, x1, x2, factors)``"""
    cur = _open_sealed(buf, DATASET_MAGIC, path)
    size, = cur.unpack('<I', 'header length')
    start = cur.pos
    try:
        header = yaml.safe_load(cur.take(size, 'header').decode('utf-8'))
    except (yaml.YAMLError, UnicodeDecodeError) as e:
        raise cur.error('unreadable header: {}'.format(e), start)
    if not isinstance(header, dict) or 'dtype' not in header or header['dtype'] not in DTYPES:
        raise cur.error('header lacks a known dtype', start)
    dtype = DTYPES[header['dtype']]
    count = header['count']
    arrays = []
    for key in ('x1_shape', 'x2_shape'):
        shape = (count,) + tuple(header[key])
        n = int(np.prod(shape)) * dtype.itemsize
        arrays.append(np.frombuffer(cur.take(n, key[:2]), dtype=dtype).reshape(shape))
    fshape = (count, header['factor_count'])
    n = int(np.prod(fshape)) * 8
    factors = np.frombuffer(cur.take(n, 'factors'), dtype=DTYPES['f8']).reshape(fshape)
    if cur.pos != len(cur.buf):
        raise cur.error('{} trailing bytes after the payload'.format(len(cur.buf) - cur.pos))
    return header, arrays[0].copy(), arrays[1].copy(), factors.copy()


def save_dataset(path, header, x1, x2, factors):
    _write(path, encode_dataset(header, x1, x2, factors))
    LOG.info('wrote %d pairs to %s', len(x1), path)


def load_dataset(path):
    return decode_dataset(_read(path), path)


# checkpoints

def encode_checkpoint(entries):
    """serialise an ordered mapping of name -> float array or text"""
    parts = [CHECKPOINT_MAGIC, struct.pack('<HI', VERSION, len(entries))]
    for name, value in entries.items():
        raw_name = name.encode('utf-8')
        if isinstance(value, str):
            kind, shape, payload = KIND_TEXT, (), value.encode('utf-8')
        else:
            arr = np.ascontiguousarray(value, dtype=DTYPES['f8'])
            kind, shape, payload = KIND_ARRAY, arr.shape, arr.tobytes()
        parts.append(struct.pack('<BH', kind, len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack('<B', len(shape)))
        parts.append(struct.pack('<{}I'.format(len(shape)), *shape))
        parts.append(struct.pack('<Q', len(payload)))
        parts.append(payload)
    return _seal(b''.join(parts))


def decode_checkpoint(buf, path=None):
    cur = _open_sealed(buf, CHECKPOINT_MAGIC, path)
    count, = cur.unpack('<I', 'entry count')
    entries = collections.OrderedDict()
    for _ in range(count):
        start = cur.pos
        kind, name_len = cur.unpack('<BH', 'entry kind')
        name = cur.take(name_len, 'entry name').decode('utf-8')
        ndim, = cur.unpack('<B', 'ndim')
        shape = cur.unpack('<{}I'.format(ndim), 'shape')
        size, = cur.unpack('<Q', 'payload length')
        payload = cur.take(size, 'payload of ' + name)
        if kind == KIND_TEXT:
            entries[name] = payload.decode('utf-8')
        elif kind == KIND_ARRAY:
            if size != int(np.prod(shape)) * 8:
                raise cur.error('entry {} has {} bytes for shape {}'.format(name, size, shape), start)
            entries[name] = np.frombuffer(payload, dtype=DTYPES['f8']).reshape(shape).copy()
        else:
            raise cur.error('unknown entry kind {}'.format(kind), start)
    if cur.pos != len(cur.buf):
        raise cur.error('{} trailing bytes after the entries'.format(len(cur.buf) - cur.pos))
    return entries


def save_checkpoint(path, entries):
    _write(path, encode_checkpoint(entries))
    LOG.info('wrote checkpoint %s (%d entries)', path, len(entries))


def load_checkpoint(path):
    return decode_checkpoint(_read(path), path)
