from __future__ import absolute_import, division, print_function, with_statement

import math

import numpy as np
import pytest
import scipy.stats

import ivret.cfg
import ivret.cli
import ivret.datagen
import ivret.numkit as nk
import ivret.rivae
import ivret.testing
from ivret.rivae import DiagGaussian, LossWeights

from .common import (tiny_rivae, tiny_synth, tiny_schedule, params_equal, jitter, slow,
                     Z_DIM, DIM_V)


def unit_rows(n, dim, seed):
    x = nk.Rng(seed).normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_kl_diag():
    q = DiagGaussian(np.array([[0.5, -1.0]]), np.array([[0.2, -0.3]]))
    assert ivret.rivae.kl_diag(q, q).item() == pytest.approx(0.0)
    p = ivret.rivae.standard_normal(1, 2)
    var = np.exp([0.2, -0.3])
    expected = 0.5 * np.sum(var + np.array([0.5, -1.0]) ** 2 - 1.0 - np.log(var))
    assert ivret.rivae.kl_diag(q, p).item() == pytest.approx(expected)


def test_gaussian_log_prob_matches_scipy():
    mean = np.array([[0.1, 0.2, -0.3]])
    log_var = np.array([[0.0, -1.0, 0.5]])
    x = np.array([[0.3, -0.1, 0.0]])
    got = ivret.rivae.gaussian_log_prob(DiagGaussian(mean, log_var), x).item()
    expected = np.sum(scipy.stats.norm.logpdf(x, mean, np.exp(0.5 * log_var)))
    assert got == pytest.approx(expected)


def test_score_items_is_decoder_log_prob():
    model = tiny_rivae(eta=0.5)
    z = nk.Rng(1).normal((4, Z_DIM))
    db = unit_rows(6, DIM_V, 2)
    scores = model.score_items(z, db)
    assert scores.shape == (4, 6)
    dec = ivret.rivae.decode(model, z)
    for j in range(6):
        column = ivret.rivae.gaussian_log_prob(dec, np.tile(db[j], (4, 1))).data
        np.testing.assert_allclose(scores[:, j], column, rtol=1e-9)


def test_mismatch_indices_never_pair_a_row_with_itself():
    for seed in range(20):
        perm = ivret.rivae.mismatch_indices(nk.Rng(seed), 5)
        assert sorted(perm) == list(range(5))
        assert np.all(perm != np.arange(5))
    with pytest.raises(nk.ContractError):
        ivret.rivae.mismatch_indices(nk.Rng(0), 1)


def test_retrieval_loss_is_a_hinge_on_the_log_prob_gap():
    model = tiny_rivae(eta=0.3)
    v1, v2 = unit_rows(4, DIM_V, 1), unit_rows(4, DIM_V, 2)
    v2_bad = v2[[1, 2, 3, 0]]
    got = ivret.rivae.retrieval_loss(model, v1, v2, v2_bad, nk.Rng(5)).item()

    z = ivret.rivae.encode_posterior(model, v1, v2).sample(nk.Rng(5))
    dec = ivret.rivae.decode(model, z)
    gap = (ivret.rivae.gaussian_log_prob(dec, v2_bad).data
           - ivret.rivae.gaussian_log_prob(dec, v2).data)
    assert got == pytest.approx(np.mean(np.maximum(gap + 1.0, 0.0)))

    with pytest.raises(nk.ContractError):
        ivret.rivae.retrieval_loss(model, v1[:1], v2[:1], v2[:1], nk.Rng(0))


def test_perturbation_norm():
    eps = ivret.rivae.perturbation(nk.Rng(0), (6, 50), 1e-3)
    np.testing.assert_allclose(np.linalg.norm(eps, axis=1), 1e-3)


def test_embedder_reg_targets_c():
    model = tiny_rivae()
    x2 = tiny_synth(8).rows(2, np.arange(8))
    reg = ivret.rivae.embedder_reg(model.e2, x2, model.reg_c, nk.Rng(3), 1e-3).item()
    response = ivret.rivae.embedder_response(model.e2, x2, nk.Rng(3), 1e-3)
    assert reg == pytest.approx(np.mean((response - 0.01) ** 2))
    with pytest.raises(nk.ContractError):
        ivret.rivae.embedder_reg(model.e2, x2, model.reg_c, nk.Rng(3), 0.0)


def test_elbo_gradients():
    model = tiny_rivae(eta=0.5)
    v1, v2 = unit_rows(5, DIM_V, 1), unit_rows(5, DIM_V, 2)
    params = {
        'prior': model.prior_net.layers[0].W,
        'posterior': model.posterior_net.layers[-1].b,
        'decoder': model.decoder_net.layers[0].W,
    }
    errors = ivret.testing.check_gradients(
        lambda: ivret.rivae.elbo_loss(model, v1, v2, nk.Rng(4)), params)
    assert max(errors.values()) < 1e-5, errors


def test_trainable_groups():
    model = tiny_rivae()
    full = LossWeights(1.0, 0.1)

    def flags():
        return (model.e1.parameters()[0].requires_grad, model.e2.parameters()[0].requires_grad,
                model.log_c.requires_grad)

    ivret.rivae.trainable(model, 1, full)
    assert flags() == (False, False, True)
    ivret.rivae.trainable(model, 2, full)
    assert flags() == (True, True, True)
    ivret.rivae.trainable(model, 2, LossWeights(0.0, 0.1))
    assert flags() == (False, True, True)
    ivret.rivae.trainable(model, 2, LossWeights(1.0, 0.0))
    assert flags() == (True, True, False)
    params = ivret.rivae.trainable(model, 2, LossWeights(0.0, 0.0))
    assert flags() == (False, False, False)
    assert all(name.split('.')[0] in ('prior_net', 'decoder_net', 'posterior_net')
               for name in params)


def test_lower_bound_does_not_reach_the_embedders():
    model = tiny_rivae()
    data = tiny_synth(8)
    model.e1.set_requires_grad(True)
    model.e2.set_requires_grad(True)
    total, terms = ivret.rivae.joint_loss(model, data.batch(np.arange(8)),
                                          LossWeights(0.0, 0.0), nk.Rng(0))
    nk.backward(total)
    assert all(p.grad is None for p in model.e1.parameters() + model.e2.parameters())
    assert terms['L_Retr'] == 0.0 and terms['L_Reg'] == 0.0
    assert terms['total'] == pytest.approx(terms['L_LB'])


def test_joint_loss_trains_the_embedders_in_stage_two():
    model = tiny_rivae(eta=0.3)
    data = tiny_synth(8)
    params = ivret.rivae.trainable(model, 2, LossWeights())
    total, terms = ivret.rivae.joint_loss(model, data.batch(np.arange(8)), LossWeights(),
                                          nk.Rng(0))
    nk.backward(total)
    assert terms['total'] == pytest.approx(terms['L_LB'] + terms['L_Retr'] + 0.1 * terms['L_Reg'])
    assert any(np.any(p.grad) for p in model.e1.parameters() if p.grad is not None)
    assert model.log_c.grad is not None
    assert all(p.grad is not None for p in params.values())


def test_schedule():
    schedule = ivret.rivae.Schedule()
    assert schedule.lr_at(0) == pytest.approx(0.005)
    assert schedule.lr_at(199) == pytest.approx(0.005)
    assert schedule.lr_at(200) == pytest.approx(0.0025)
    assert schedule.lr_at(1000) == pytest.approx(0.00125)
    assert schedule.stage_at(99) == 1
    assert schedule.stage_at(100) == 2
    with pytest.raises(ValueError):
        ivret.rivae.Schedule(batch_size=1)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_retr=-1.0)
    with pytest.raises(ValueError):
        LossWeights(lambda_reg=float('nan'))
    with pytest.raises(ValueError):
        LossWeights(noise_magnitude=0.0)


def test_minibatches_drop_single_rows():
    batches = list(ivret.rivae.minibatches(np.arange(33), 16))
    assert [len(b) for b in batches] == [16, 16]


def test_train_is_deterministic_and_publishes_epochs():
    data = tiny_synth(48)
    seen = []

    def listener(epoch, stage, row, model, state):
        seen.append((epoch, stage))

    with ivret.rivae.EPOCH_END.listening(listener):
        a = ivret.rivae.train(tiny_rivae(), data, tiny_schedule(), nk.Rng(1))
    b = ivret.rivae.train(tiny_rivae(), data, tiny_schedule(), nk.Rng(1))
    assert seen == [(0, 1), (1, 2), (2, 2)]
    assert [row['epoch'] for row in a.history] == [0, 1, 2]
    assert set(ivret.rivae.LOSS_KEYS) <= set(a.history[-1])
    assert a.history[2]['lr'] == pytest.approx(0.0025)
    assert params_equal(a.model, b.model)
    assert a.model.version == 3 * 3
    assert not params_equal(a.model, tiny_rivae())


def test_resume_replays_the_uninterrupted_run():
    data = tiny_synth(48)
    full = ivret.rivae.train(tiny_rivae(), data, tiny_schedule(epochs=4), nk.Rng(2))
    first = ivret.rivae.train(tiny_rivae(), data, tiny_schedule(epochs=2), nk.Rng(2))
    resumed = ivret.rivae.train(first.model, data, tiny_schedule(epochs=4), nk.Rng(2),
                                state=first.state, start_epoch=2, history=first.history)
    assert params_equal(full.model, resumed.model)
    assert len(resumed.history) == 4


def test_divergence_restores_the_last_good_epoch():
    data = tiny_synth(32)
    model = tiny_rivae()
    events = []

    def step(model, batch, rng, stage, state):
        model.prior_net.layers[0].W.data += 1.0
        if state.step_count >= 2:
            raise ivret.rivae.DivergenceError('boom')
        state.step_count += 1
        return {'total': 0.0}

    def on_diverged(epoch, last_good_epoch, model, error):
        events.append((epoch, last_good_epoch))

    schedule = tiny_schedule(epochs=3, batch_size=16)
    with ivret.rivae.DIVERGED.listening(on_diverged):
        with pytest.raises(ivret.rivae.DivergenceError) as info:
            ivret.rivae.run_epochs(model, data, schedule, nk.Rng(0), step, loss_keys=('total',))
    assert info.value.epoch == 1
    assert info.value.last_good_epoch == 0
    assert events == [(1, 0)]
    initial = tiny_rivae().prior_net.layers[0].W.data
    # two steps of epoch 0 survive, the partial epoch 1 is rolled back
    np.testing.assert_allclose(model.prior_net.layers[0].W.data, initial + 2.0)


def test_check_finite():
    with pytest.raises(ivret.rivae.DivergenceError):
        ivret.rivae.check_finite(nk.Tensor([1.0, math.inf]), 'x')


def test_gaussian_log_prob_examples():
    standard = DiagGaussian(np.zeros((1, 1)), np.zeros((1, 1)))
    assert ivret.rivae.gaussian_log_prob(standard, np.zeros((1, 1))).item() == \
        pytest.approx(-0.5 * math.log(2 * math.pi))

    # the density integrates to one
    grid = np.linspace(-12.0, 12.0, 240001)[:, None]
    g = DiagGaussian(np.full(grid.shape, 0.3), np.full(grid.shape, math.log(0.5)))
    density = np.exp(ivret.rivae.gaussian_log_prob(g, grid).data)
    assert np.sum(density) * (grid[1, 0] - grid[0, 0]) == pytest.approx(1.0, abs=1e-6)

    mean = nk.Rng(0).normal((4, 3))
    log_var = nk.Rng(1).normal((4, 3))
    x = nk.Rng(2).normal((4, 3))
    shift = nk.Rng(3).normal((1, 3)) * 5.0
    a = ivret.rivae.gaussian_log_prob(DiagGaussian(mean, log_var), x).data
    b = ivret.rivae.gaussian_log_prob(DiagGaussian(mean + shift, log_var), x + shift).data
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_kl_diag_matches_monte_carlo():
    assert ivret.rivae.kl_diag(DiagGaussian([[1.0]], [[0.0]]),
                               DiagGaussian([[0.0]], [[0.0]])).item() == pytest.approx(0.5)
    rng = nk.Rng(11)
    for i in range(50):
        r = rng.derive(i)
        mean_q, log_var_q = r.normal((1, 3)), r.uniform((1, 3), -0.5, 0.5)
        mean_p, log_var_p = mean_q + r.uniform((1, 3), 1.0, 2.0), r.uniform((1, 3), -0.5, 0.5)
        kl = ivret.rivae.kl_diag(DiagGaussian(mean_q, log_var_q),
                                 DiagGaussian(mean_p, log_var_p)).item()
        std_q, std_p = np.exp(0.5 * log_var_q), np.exp(0.5 * log_var_p)
        x = mean_q + std_q * r.normal((10 ** 6, 3))
        log_ratio = (scipy.stats.norm.logpdf(x, mean_q, std_q)
                     - scipy.stats.norm.logpdf(x, mean_p, std_p)).sum(axis=1)
        assert np.mean(log_ratio) == pytest.approx(kl, rel=0.01)


def test_retrieval_loss_examples():
    model = tiny_rivae(eta=0.3)
    v1, v2 = unit_rows(6, DIM_V, 1), unit_rows(6, DIM_V, 2)
    assert ivret.rivae.retrieval_loss(model, v1, v2, v2, nk.Rng(0)).item() == pytest.approx(1.0)
    for seed in range(10):
        bad = unit_rows(6, DIM_V, 100 + seed)
        assert ivret.rivae.retrieval_loss(model, v1, v2, bad, nk.Rng(seed)).item() >= 0.0


def test_embedder_reg_of_a_constant_map_is_zero():
    model = tiny_rivae()
    for p in model.e2.parameters():
        p.data = np.zeros(p.shape)
    model.e2.parameters()[-1].data = np.ones(model.e2.parameters()[-1].shape)
    model.log_c.data = np.array(-700.0)
    x2 = tiny_synth(8).rows(2, np.arange(8))
    assert ivret.rivae.embedder_reg(model.e2, x2, model.reg_c, nk.Rng(0), 1e-3).item() == \
        pytest.approx(0.0, abs=1e-12)


def latent_and_c(model):
    return {name: p for name, p in model.named_parameters()
            if name.split('.')[0] in ('prior_net', 'decoder_net', 'posterior_net', 'log_c')}


def test_loss_gradients_over_random_draws():
    data = tiny_synth(6)
    x1, x2 = data.batch(np.arange(6))
    perm = ivret.rivae.mismatch_indices(nk.Rng(0), 6)
    for seed in range(20):
        model = jitter(tiny_rivae(seed, eta=0.5), seed)
        v1, v2 = model.embed_query(x1).detach(), model.embed_item(x2).detach()

        ivret.testing.assert_gradients(
            lambda: ivret.rivae.elbo_loss(model, v1, v2, nk.Rng(seed)),
            dict((k, p) for k, p in latent_and_c(model).items() if k != 'log_c'))

        # the decoder's output bias cancels over a derangement, atol covers it
        ivret.testing.assert_gradients(
            lambda: ivret.rivae.retrieval_loss(model, model.embed_query(x1), model.embed_item(x2),
                                               model.embed_item(x2[perm]), nk.Rng(seed)),
            model.param_dict())

        ivret.testing.assert_gradients(
            lambda: ivret.rivae.embedder_reg(model.e2, x2, model.reg_c, nk.Rng(seed), 1e-3),
            dict(model.e2.param_dict('e2.'), log_c=model.log_c), atol=1e-9)


def test_joint_loss_gradients_of_latent_nets_and_c():
    data = tiny_synth(6)
    batch = data.batch(np.arange(6))
    weights = LossWeights(1.0, 0.1)
    for seed in range(20):
        model = jitter(tiny_rivae(seed, eta=0.5), seed)
        ivret.rivae.trainable(model, 2, weights)
        ivret.testing.assert_gradients(
            lambda: ivret.rivae.joint_loss(model, batch, weights, nk.Rng(seed))[0],
            latent_and_c(model))


def synth_model(seed):
    """the default Synth IVAE with its default embedders"""
    return ivret.cli.build_model(ivret.cfg.load('synth'), nk.Rng(seed).derive(0))


def synth_pairs(seed, n=1000):
    spec = ivret.datagen.SynthSpec(n_train=n, n_test=n)
    rng = nk.Rng(seed)
    return ivret.datagen.synth_generate(spec, rng), ivret.datagen.synth_generate(spec, rng, 'test')


@slow
def test_stage_one_loss_trends_down():
    curves = []
    for seed in range(5):
        train_set, _ = synth_pairs(seed)
        schedule = ivret.rivae.Schedule(epochs=50, joint_start=100)
        result = ivret.rivae.train(synth_model(seed), train_set, schedule, nk.Rng(seed).derive(1))
        assert set(row['stage'] for row in result.history) == {1}
        curves.append([row['total'] for row in result.history])
    median = np.median(curves, axis=0)
    assert np.mean(median[-10:]) < np.mean(median[:10])
    assert scipy.stats.spearmanr(np.arange(50), median)[0] < 0


@slow
def test_regularizer_evens_out_the_embedder_response():
    spreads = {}
    for lambda_reg in (0.1, 0.0):
        train_set, test_set = synth_pairs(0)
        schedule = ivret.rivae.Schedule(epochs=150, joint_start=30, decay_epochs=(100,))
        model = ivret.rivae.train(synth_model(0), train_set, schedule, nk.Rng(0).derive(1),
                                  LossWeights(1.0, lambda_reg)).model
        response = ivret.rivae.embedder_response(model.e2, test_set.x2[:1000], nk.Rng(7), 1e-3)
        spreads[lambda_reg] = np.std(response)
    assert spreads[0.1] < spreads[0.0]
