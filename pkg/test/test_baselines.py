from __future__ import absolute_import, division, print_function, with_statement

import numpy as np
import pytest

import ivret.baselines
import ivret.numkit as nk
import ivret.rivae
import ivret.testing
from ivret.rivae import DiagGaussian, LossWeights

from .common import (tiny_cossim, tiny_rbivae, tiny_synth, tiny_schedule, params_equal, jitter,
                     DIM_V, Z_DIM)


def test_poe_with_prior():
    m = np.array([[2.0, -4.0]])
    g = DiagGaussian(m, np.zeros((1, 2)))
    q = ivret.baselines.poe_posterior([g])
    np.testing.assert_allclose(q.mean.data, m / 2.0)
    np.testing.assert_allclose(q.variance, 0.5)


def test_poe_without_prior_is_precision_weighted():
    a = DiagGaussian(np.array([[1.0]]), np.log([[1.0]]))
    b = DiagGaussian(np.array([[4.0]]), np.log([[3.0]]))
    q = ivret.baselines.poe_posterior([a, b], prior=False)
    # precisions 1 and 1/3
    assert q.mean.data[0, 0] == pytest.approx((1.0 + 4.0 / 3.0) / (4.0 / 3.0))
    assert q.variance[0, 0] == pytest.approx(0.75)
    with pytest.raises(nk.ContractError):
        ivret.baselines.poe_posterior([])
    with pytest.raises(nk.DimensionError):
        ivret.baselines.poe_posterior([a, DiagGaussian(np.zeros((1, 2)), np.zeros((1, 2)))])


def test_permute_dims_shuffles_columns_independently():
    z = np.arange(20.0).reshape(10, 2)
    out = ivret.baselines.permute_dims(z, nk.Rng(0))
    for j in range(2):
        assert sorted(out[:, j]) == sorted(z[:, j])
    assert not np.array_equal(out, z)


def test_tc_loss():
    model = tiny_rbivae()
    z = nk.Rng(1).normal((8, Z_DIM))
    estimate = ivret.baselines.tc_loss(model, z, nk.Rng(2))
    logits = model.discriminator(nk.Tensor(z)).data
    assert estimate.tc_value == pytest.approx(np.mean(logits[:, 0] - logits[:, 1]))
    assert estimate.discriminator_loss > 0
    with pytest.raises(nk.ContractError):
        ivret.baselines.tc_loss(model, z[:1], nk.Rng(2))


def test_discriminator_step_only_moves_the_discriminator():
    model = tiny_rbivae()
    before = model.state_arrays()
    z = nk.Rng(1).normal((16, Z_DIM))
    state = nk.AdamState(0.01)
    losses = [ivret.baselines.discriminator_step(model, z, nk.Rng(i), state) for i in range(30)]
    after = model.state_arrays()
    for name in before:
        moved = not np.array_equal(before[name], after[name])
        assert moved == name.startswith('discriminator.'), name
    assert not any(p.requires_grad for p in model.discriminator.parameters())
    assert all(p.grad is None for p in model.discriminator.parameters())
    assert state.step_count == 30
    assert np.isfinite(losses).all()


def test_rbivae_score_items_is_item_decoder_log_prob():
    model = tiny_rbivae()
    z = nk.Rng(1).normal((3, Z_DIM))
    db = nk.Rng(2).normal((5, DIM_V))
    scores = model.score_items(z, db)
    dec = model.decode(2, z)
    for j in range(5):
        column = ivret.rivae.gaussian_log_prob(dec, np.tile(db[j], (3, 1))).data
        np.testing.assert_allclose(scores[:, j], column, rtol=1e-9)


def test_rbivae_query_latent_uses_only_the_query():
    model = tiny_rbivae()
    v1 = nk.Rng(1).normal((4, DIM_V))
    q = model.query_latent(v1)
    expert = model.expert(1, v1)
    precision = np.exp(-expert.log_var.data) + 1.0
    np.testing.assert_allclose(q.variance, 1.0 / precision)


def test_rbivae_training():
    data = tiny_synth(48)
    model = tiny_rbivae()
    result = ivret.baselines.rbivae_train(model, data, tiny_schedule(), nk.Rng(0))
    assert set(ivret.baselines.RBIVAE_KEYS) <= set(result.history[0])
    assert result.disc_state.step_count == 3 * 3
    assert result.state.step_count == 3 * 3
    assert result.history[-1]['L_Retr'] > 0
    assert not params_equal(model, tiny_rbivae())


def test_bivae_on_v_keeps_the_embedders_frozen():
    data = tiny_synth(48)
    model = tiny_rbivae(frozen=True)
    assert model.kind == 'bivae_on_v'
    before = model.state_arrays()
    result = ivret.baselines.rbivae_train(model, data, tiny_schedule(), nk.Rng(0),
                                          LossWeights(1.0, 0.1))
    after = model.state_arrays()
    for name in before:
        if name.startswith(('e1.', 'e2.')) or name == 'log_c':
            np.testing.assert_array_equal(before[name], after[name])
    assert all(row['L_Retr'] == 0.0 and row['L_Reg'] == 0.0 for row in result.history)
    assert not np.array_equal(before['enc1.layers.0.W'], after['enc1.layers.0.W'])


def test_cossim_scores_are_cosines():
    model = tiny_cossim()
    z = nk.Rng(1).normal((4, Z_DIM))
    db = nk.Rng(2).normal((6, DIM_V))
    scores = model.score_items(z, db)
    assert scores.shape == (4, 6)
    assert np.all(np.abs(scores) <= 1.0 + 1e-12)
    v1 = model.embed_query(tiny_synth(5).rows(1, np.arange(5)))
    assert model.latent_scale(v1.data).shape == (5, Z_DIM)
    dist = model.query_latent(v1.data)
    np.testing.assert_array_equal(dist.std, 1.0)


def test_alignment_loss_hinge():
    model = tiny_cossim()
    x1, x2 = tiny_synth(6).batch(np.arange(6))
    loss = ivret.baselines.alignment_loss(model, x1, x2, nk.Rng(0)).item()
    assert 0.0 <= loss <= 2.0 + model.margin


def test_cossim_training_stages():
    data = tiny_synth(48)
    embedders_only = tiny_cossim()
    ivret.baselines.cossim_train(embedders_only, data, tiny_schedule(epochs=2), nk.Rng(0),
                                 embedder_fraction=1.0)
    initial = tiny_cossim().state_arrays()
    trained = embedders_only.state_arrays()
    for name in initial:
        changed = not np.array_equal(initial[name], trained[name])
        assert changed == name.startswith(('e1.', 'e2.')), name

    bottleneck_only = tiny_cossim()
    result = ivret.baselines.cossim_train(bottleneck_only, data, tiny_schedule(epochs=2),
                                          nk.Rng(0), embedder_fraction=0.0)
    trained = bottleneck_only.state_arrays()
    for name in initial:
        if name.startswith(('e1.', 'e2.')):
            np.testing.assert_array_equal(initial[name], trained[name])
    assert all(row['L_Align'] == 0.0 for row in result.history)


def test_poe_matches_the_product_density_on_a_grid():
    grid = np.linspace(-10.0, 10.0, 20001)
    rng = nk.Rng(4)
    for i in range(5):
        means, log_vars = rng.derive(i).normal((2,)), rng.derive(i, 1).uniform((2,), -1.0, 1.0)
        experts = [DiagGaussian([[m]], [[lv]]) for m, lv in zip(means, log_vars)]
        q = ivret.baselines.poe_posterior(experts)

        log_product = -0.5 * grid ** 2
        for m, lv in zip(means, log_vars):
            log_product = log_product - 0.5 * (grid - m) ** 2 / np.exp(lv)
        product = np.exp(log_product - log_product.max())
        product /= product.sum() * (grid[1] - grid[0])
        mean, var = q.mean.data[0, 0], q.variance[0, 0]
        expected = np.exp(-0.5 * (grid - mean) ** 2 / var) / np.sqrt(2 * np.pi * var)
        np.testing.assert_allclose(product, expected, atol=1e-8)


def model_nets(model, names):
    return dict((name, p) for name, p in model.named_parameters()
                if name.split('.')[0] in names)


def test_rbivae_gradients_over_random_draws():
    x1, x2 = tiny_synth(6).batch(np.arange(6))
    perm = ivret.rivae.mismatch_indices(nk.Rng(0), 6)
    for seed in range(20):
        model = jitter(tiny_rbivae(seed), seed)
        v1, v2 = model.embed_query(x1).detach(), model.embed_item(x2).detach()

        ivret.testing.assert_gradients(
            lambda: ivret.baselines.rbivae_elbo(model, v1, v2, nk.Rng(seed)),
            model_nets(model, ('enc1', 'enc2', 'dec1', 'dec2')))

        ivret.testing.assert_gradients(
            lambda: ivret.baselines.rbivae_retrieval_loss(
                model, model.embed_query(x1), model.embed_item(x2), model.embed_item(x2[perm]),
                nk.Rng(seed)),
            model_nets(model, ('enc1', 'dec2', 'e1', 'e2')))


def test_tc_gradients_over_random_draws():
    for seed in range(20):
        model = jitter(tiny_rbivae(seed), seed)
        model.discriminator.set_requires_grad(True)
        z = nk.Tensor(nk.Rng(seed).normal((8, Z_DIM)), requires_grad=True)
        params = dict(model.discriminator.param_dict('discriminator.'), z=z)
        ivret.testing.assert_gradients(
            lambda: ivret.baselines.tc_loss(model, z, nk.Rng(seed)).tc, params)
        ivret.testing.assert_gradients(
            lambda: ivret.baselines.discriminator_loss(model, z.data, nk.Rng(seed)),
            model.discriminator.param_dict('discriminator.'))
