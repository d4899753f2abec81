from __future__ import absolute_import, division, print_function, with_statement

import numpy as np
import pytest

import ivret.nets
import ivret.numkit as nk
import ivret.testing

from .common import embedders, AMBIENT, DIM_V


def test_embedder_rows_are_unit_length():
    e1, _ = embedders()
    ivret.nets.init_params(nk.Rng(0), e1)
    v = ivret.nets.embed(e1, nk.Rng(1).normal((5, AMBIENT)))
    assert v.shape == (5, DIM_V)
    np.testing.assert_allclose(np.linalg.norm(v.data, axis=1), 1.0)


def test_embedder_input_dim():
    e1, _ = embedders()
    with pytest.raises(nk.DimensionError):
        ivret.nets.embed(e1, np.zeros((2, AMBIENT + 1)))


def test_init_params():
    mlp = ivret.nets.Mlp([4, 8, 2], 'relu')
    ivret.nets.init_params(nk.Rng(0), mlp)
    for layer in mlp.layers:
        assert np.all(layer.b.data == 0)
        assert np.std(layer.W.data) > 0
    again = ivret.nets.init_params(nk.Rng(0), ivret.nets.Mlp([4, 8, 2], 'relu'))
    np.testing.assert_array_equal(again.layers[0].W.data, mlp.layers[0].W.data)


def test_named_parameters_and_requires_grad():
    mlp = ivret.nets.Mlp([3, 4, 2])
    names = [name for name, _ in mlp.named_parameters('net.')]
    assert names == ['net.layers.0.W', 'net.layers.0.b', 'net.layers.1.W', 'net.layers.1.b']
    mlp.set_requires_grad(False)
    assert not any(p.requires_grad for p in mlp.parameters())


def test_state_arrays_roundtrip():
    a = ivret.nets.init_params(nk.Rng(0), ivret.nets.Mlp([3, 4, 2]))
    b = ivret.nets.Mlp([3, 4, 2])
    b.load_arrays(a.state_arrays())
    for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)

    with pytest.raises(nk.ContractError):
        b.load_arrays({})
    wrong = ivret.nets.Mlp([3, 5, 2]).state_arrays()
    with pytest.raises(nk.DimensionError):
        b.load_arrays(wrong)


def test_mlp_gradients():
    mlp = ivret.nets.init_params(nk.Rng(2), ivret.nets.Mlp([3, 4, 2], 'tanh'))
    x = nk.Rng(3).normal((5, 3))
    errors = ivret.testing.check_gradients(
        lambda: nk.sum(nk.square(mlp(nk.Tensor(x)))), mlp.param_dict())
    assert max(errors.values()) < 1e-6


def test_conv_stack_forward():
    net = ivret.nets.ConvStack(4, channels=(2, 2, 2, 2), hidden=5, image_size=16)
    ivret.nets.init_params(nk.Rng(0), net)
    assert net.flat_dim == 2
    out = net(nk.Tensor(nk.Rng(1).uniform((3, 256))))
    assert out.shape == (3, 4)


def test_make_embedder():
    sprites = ivret.nets.make_embedder('sprites', 10)
    assert sprites.in_dim == 64 * 64
    assert sprites.backbone.flat_dim == 64 * 4 * 4
    mnist = ivret.nets.make_embedder('split_mnist', 50)
    assert mnist.in_dim == 28 * 14
    assert mnist.backbone.layer_dims == [392, 1024, 1024, 1024, 1024, 50]
    with pytest.raises(ValueError):
        ivret.nets.make_embedder('cifar', 3)
