"""small fixtures shared by the test modules"""
from __future__ import absolute_import, division, print_function, with_statement

import os

import numpy as np
import pytest

import ivret.baselines
import ivret.datagen
import ivret.nets
import ivret.numkit as nk
import ivret.rivae

BASE = os.path.dirname(__file__)
AMBIENT = 8
DIM_V = 3
Z_DIM = 2

#: full-length training runs; opt in with IVRET_SLOW=1
slow = pytest.mark.skipif(not os.environ.get('IVRET_SLOW'), reason='set IVRET_SLOW=1')


def tiny_synth(n=64, seed=0, split='train'):
    spec = ivret.datagen.SynthSpec(ambient_dim=AMBIENT, hidden=8, n_train=n, n_test=n)
    return ivret.datagen.synth_generate(spec, nk.Rng(seed), split)


def embedders(in_dim=AMBIENT, dim_v=DIM_V):
    cfg = {'in_dim': in_dim, 'hidden': 6, 'hidden_layers': 1, 'activation': 'tanh'}
    return (ivret.nets.make_embedder('synth', dim_v, cfg),
            ivret.nets.make_embedder('synth', dim_v, cfg))


def tiny_rivae(seed=0, **kwargs):
    e1, e2 = embedders()
    kwargs.setdefault('hidden', (6,))
    return ivret.rivae.RivaeModel(e1, e2, Z_DIM, **kwargs).init(nk.Rng(seed))


def tiny_rbivae(seed=0, frozen=False):
    e1, e2 = embedders()
    kwargs = dict(hidden=6, disc_hidden=8, disc_layers=2)
    if frozen:
        model = ivret.baselines.make_bivae_on_v(e1, e2, Z_DIM, **kwargs)
    else:
        model = ivret.baselines.RbiVae(e1, e2, Z_DIM, **kwargs)
    return model.init(nk.Rng(seed))


def tiny_cossim(seed=0):
    e1, e2 = embedders()
    return ivret.baselines.CosSimLvm(e1, e2, Z_DIM, hidden=(6,)).init(nk.Rng(seed))


def tiny_schedule(epochs=3, joint_start=1, batch_size=16, decay_epochs=(2,)):
    return ivret.rivae.Schedule(batch_size=batch_size, epochs=epochs, learning_rate=0.005,
                                decay_epochs=decay_epochs, joint_start=joint_start)


def params_equal(a, b):
    pa, pb = a.state_arrays(), b.state_arrays()
    return sorted(pa) == sorted(pb) and all(np.array_equal(pa[k], pb[k]) for k in pa)


def jitter(model, seed, scale=0.3):
    """move every parameter, biases and ``log_c`` included, off its initial value"""
    rng = nk.Rng(seed)
    for i, (name, p) in enumerate(model.named_parameters()):
        p.data = np.array(p.data + rng.derive(i).normal(p.shape, scale), dtype=np.float64)
    return model


def read_tree(root):
    """``{relative path: bytes}`` of every file below ``root``"""
    root = str(root)
    out = {}
    for directory, _, files in os.walk(root):
        for name in files:
            path = os.path.join(directory, name)
            out[os.path.relpath(path, root).replace(os.sep, '/')] = open(path, 'rb').read()
    return out
