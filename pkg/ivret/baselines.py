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

"""Comparison models trained on the same embedders as :mod:`ivret.rivae`

Cos-Sim-LVM
    Embedders aligned with a cosine hinge, followed by a small bottleneck
    autoencoder on ``v1`` whose reconstruction ``v1'`` is scored against items
    by ``cos(v1', v2)``.

RBi-VAE
    A joint latent model of ``(v1, v2)`` with a standard normal prior, a
    product-of-experts posterior and a total-correlation penalty estimated by
    a density-ratio discriminator.  With ``frozen_embedders`` and both lambda
    weights at zero it is the plain Bi-VAE on the embedding space.
"""
from __future__ import absolute_import, division, print_function, with_statement

import copy
import logging
import math

import numpy as np

import ivret.nets
import ivret.numkit as nk
import ivret.rivae
from ivret.rivae import DiagGaussian, LOG_2PI


LOG = logging.getLogger(__name__)
COSSIM_KEYS = ('L_Align', 'L_Bottleneck', 'total')
RBIVAE_KEYS = ('L_ELBO', 'TC', 'L_Disc', 'L_Retr', 'L_Reg', 'total')


def _cos_rows(a, b):
    """row-wise cosine of two batches of tensors"""
    return nk.sum(nk.l2_normalize(a) * nk.l2_normalize(b), axis=-1)


class CosSimLvm(ivret.nets.Module):
    kind = 'cossim_lvm'
    deterministic = True
    _children = ('e1', 'e2', 'bottleneck_enc', 'bottleneck_dec')

    def __init__(self, e1, e2, z_dim, hidden=(10, 10), slope=0.2, margin=0.3):
        if e1.out_dim != e2.out_dim:
            raise nk.DimensionError('embedders disagree on dim(V): {} vs {}'.format(
                e1.out_dim, e2.out_dim))
        hidden = list(hidden)
        self.e1 = e1
        self.e2 = e2
        self.z_dim = z_dim
        self.dim_v = e1.out_dim
        self.margin = float(margin)
        self.bottleneck_enc = ivret.nets.Mlp([self.dim_v] + hidden + [z_dim], 'leaky_relu', slope)
        self.bottleneck_dec = ivret.nets.Mlp([z_dim] + hidden + [self.dim_v], 'leaky_relu', slope)
        self.version = 0

    def init(self, rng):
        nets = (self.bottleneck_enc, self.bottleneck_dec, self.e1, self.e2)
        for i, net in enumerate(nets):
            ivret.nets.init_params(rng.derive(i), net)
        return self

    def embed_query(self, x1):
        return ivret.nets.embed(self.e1, x1)

    def embed_item(self, x2):
        return ivret.nets.embed(self.e2, x2)

    def query_latent(self, v1):
        mean = self.bottleneck_enc(nk.as_tensor(v1))
        return DiagGaussian(mean, np.zeros(mean.shape))

    def latent_scale(self, v1):
        # point encoder: traversal range taken from the spread over the batch
        z = self.query_latent(v1).mean.data
        return np.broadcast_to(z.std(axis=0, keepdims=True), z.shape).copy()

    def reconstruct(self, z):
        return self.bottleneck_dec(nk.as_tensor(z))

    def score_items(self, z, v2_db):
        """``cos(v1', v2_j)``; ``v2_db`` rows are unit length"""
        v1r = self.reconstruct(z).data
        v1r = v1r / np.maximum(np.linalg.norm(v1r, axis=1, keepdims=True), 1e-12)
        v2n = v2_db / np.maximum(np.linalg.norm(v2_db, axis=1, keepdims=True), 1e-12)
        return v1r.dot(v2n.T)


def alignment_loss(model, x1, x2, rng):
    """mean of ``(margin - cos(v1, v2) + cos(v1, v2'))_+`` with in-batch mismatches"""
    v1 = model.embed_query(x1)
    v2 = model.embed_item(x2)
    perm = ivret.rivae.mismatch_indices(rng, v1.shape[0])
    gap = _cos_rows(v1, v2[perm]) - _cos_rows(v1, v2)
    return nk.mean(nk.hinge(gap + model.margin))


def bottleneck_loss(model, v1, v2):
    """``||v1' - v1||^2 + 1 - cos(v1', v2)`` averaged over the batch"""
    v1, v2 = nk.as_tensor(v1), nk.as_tensor(v2)
    v1r = model.reconstruct(model.query_latent(v1).mean)
    recon = nk.sum(nk.square(v1r - v1), axis=-1)
    return nk.mean(recon + (1.0 - _cos_rows(v1r, v2)))


def cossim_train(model, dataset, schedule, rng, embedder_fraction=0.5, state=None,
                 start_epoch=0, history=None):
    """embedder alignment for the first ``embedder_fraction`` of the epochs, then
    the bottleneck on frozen embeddings"""
    schedule = copy.copy(schedule)
    schedule.joint_start = int(round(schedule.epochs * embedder_fraction))

    def step(model, batch, step_rng, stage, state):
        x1, x2 = batch
        embedders_on = stage == 1
        model.e1.set_requires_grad(embedders_on)
        model.e2.set_requires_grad(embedders_on)
        model.bottleneck_enc.set_requires_grad(not embedders_on)
        model.bottleneck_dec.set_requires_grad(not embedders_on)
        if embedders_on:
            loss = ivret.rivae.check_finite(alignment_loss(model, x1, x2, step_rng), 'L_Align')
            terms = {'L_Align': loss.item(), 'L_Bottleneck': 0.0}
        else:
            v1 = model.embed_query(x1)
            v2 = model.embed_item(x2)
            loss = ivret.rivae.check_finite(bottleneck_loss(model, v1, v2), 'L_Bottleneck')
            terms = {'L_Align': 0.0, 'L_Bottleneck': loss.item()}
        terms['total'] = loss.item()
        params = {name: p for name, p in model.named_parameters() if p.requires_grad}
        nk.backward(loss)
        nk.adam_step(params, state)
        return terms

    return ivret.rivae.run_epochs(model, dataset, schedule, rng, step, state, start_epoch,
                                  history, loss_keys=COSSIM_KEYS)


# RBi-VAE

class TcEstimate(object):
    """total-correlation estimate of one batch

    ``tc`` is differentiable wrt the latent sample (and hence the model);
    ``discriminator_loss`` is the discriminator's cross entropy on the same
    batch, recorded for logging.
    """

    def __init__(self, tc, discriminator_loss):
        self.tc = tc
        self.discriminator_loss = float(discriminator_loss)

    @property
    def tc_value(self):
        return self.tc.item()


def _gaussian_net(dim_in, dim_out, hidden, hidden_layers, slope):
    return ivret.nets.Mlp([dim_in] + [hidden] * hidden_layers + [2 * dim_out], 'leaky_relu', slope)


class RbiVae(ivret.nets.Module):
    """single-modality Gaussian encoders (m_i, s_i) and decoders (mu_i, sigma_i)

    ``hidden_layers=0`` gives the linear Gaussian variant.
    """
    kind = 'rbivae'
    _children = ('enc1', 'enc2', 'dec1', 'dec2', 'discriminator', 'e1', 'e2', 'log_c')

    def __init__(self, e1, e2, z_dim, hidden=10, hidden_layers=1, slope=0.2, gamma=10.0,
                 disc_hidden=300, disc_layers=6, c_init=0.01, frozen_embedders=False):
        if e1.out_dim != e2.out_dim:
            raise nk.DimensionError('embedders disagree on dim(V): {} vs {}'.format(
                e1.out_dim, e2.out_dim))
        if disc_layers < 1:
            raise ValueError('the discriminator needs at least one layer')
        dim_v = e1.out_dim
        self.e1 = e1
        self.e2 = e2
        self.z_dim = z_dim
        self.dim_v = dim_v
        self.gamma = float(gamma)
        self.frozen_embedders = frozen_embedders
        self.enc1 = _gaussian_net(dim_v, z_dim, hidden, hidden_layers, slope)
        self.enc2 = _gaussian_net(dim_v, z_dim, hidden, hidden_layers, slope)
        self.dec1 = _gaussian_net(z_dim, dim_v, hidden, hidden_layers, slope)
        self.dec2 = _gaussian_net(z_dim, dim_v, hidden, hidden_layers, slope)
        self.discriminator = ivret.nets.Mlp(
            [z_dim] + [disc_hidden] * (disc_layers - 1) + [2], 'leaky_relu', slope)
        self.log_c = nk.Tensor(math.log(c_init), requires_grad=True)
        self.version = 0

    @property
    def reg_c(self):
        return nk.exp(self.log_c)

    def latent_nets(self):
        return (self.enc1, self.enc2, self.dec1, self.dec2)

    def init(self, rng):
        nets = self.latent_nets() + (self.discriminator, self.e1, self.e2)
        for i, net in enumerate(nets):
            ivret.nets.init_params(rng.derive(i), net)
        return self

    def embed_query(self, x1):
        return ivret.nets.embed(self.e1, x1)

    def embed_item(self, x2):
        return ivret.nets.embed(self.e2, x2)

    def expert(self, which, v):
        net = self.enc1 if which == 1 else self.enc2
        return ivret.rivae.split_heads(net(nk.as_tensor(v)), self.z_dim)

    def decode(self, which, z):
        net = self.dec1 if which == 1 else self.dec2
        return ivret.rivae.split_heads(net(nk.as_tensor(z)), self.dim_v)

    def query_latent(self, v1):
        """Q(z | v1): the query expert combined with the prior"""
        return poe_posterior([self.expert(1, v1)])

    def latent_scale(self, v1):
        return self.query_latent(v1).std

    def score_items(self, z, v2_db):
        """``log P2(v2_j | z_i)`` under the heteroscedastic item decoder"""
        dec = self.decode(2, z)
        mean, log_var = dec.mean.data, dec.log_var.data
        inv = np.exp(-log_var)
        quad = ((v2_db * v2_db).dot(inv.T).T - 2.0 * (mean * inv).dot(v2_db.T)
                + np.sum(mean * mean * inv, axis=1)[:, None])
        return -0.5 * (quad + np.sum(log_var, axis=1)[:, None] + self.dim_v * LOG_2PI)


def poe_posterior(experts, prior=True):
    """precision-weighted product of diagonal Gaussian experts

    With ``prior`` the standard normal expert joins the product: the
    precisions add and the mean is the precision-weighted average.
    """
    if not experts:
        raise nk.ContractError('poe_posterior needs at least one expert')
    shape = experts[0].mean.shape
    for g in experts:
        if g.mean.shape != shape:
            raise nk.DimensionError('poe_posterior: expert shapes {} and {}'.format(
                shape, g.mean.shape))
    precisions = [nk.exp(-g.log_var) for g in experts]
    weighted = [g.mean * t for g, t in zip(experts, precisions)]
    total = precisions[0]
    num = weighted[0]
    for t, w in zip(precisions[1:], weighted[1:]):
        total = total + t
        num = num + w
    if prior:
        # N(0, I): unit precision, no contribution to the numerator
        total = total + 1.0
    return DiagGaussian(num / total, -nk.log(total))


def _elbo_terms(model, v1, v2, rng):
    v1, v2 = nk.as_tensor(v1), nk.as_tensor(v2)
    if v1.shape[0] != v2.shape[0]:
        raise nk.DimensionError('rbivae_elbo: batch sizes {} and {}'.format(v1.shape, v2.shape))
    q = poe_posterior([model.expert(1, v1), model.expert(2, v2)])
    z = q.sample(rng)
    prior = ivret.rivae.standard_normal(*q.mean.shape)
    recon = (ivret.rivae.gaussian_log_prob(model.decode(1, z), v1)
             + ivret.rivae.gaussian_log_prob(model.decode(2, z), v2))
    per_row = ivret.rivae.kl_diag(q, prior) - recon
    return ivret.rivae.check_finite(nk.mean(per_row), 'RBi-VAE ELBO'), z


def rbivae_elbo(model, v1, v2, rng):
    """negative ELBO with the POE posterior and one reparameterised sample"""
    return _elbo_terms(model, v1, v2, rng)[0]


def permute_dims(z, rng):
    """shuffle every latent dim independently across the batch"""
    z = np.asarray(z)
    out = np.empty_like(z)
    for j in range(z.shape[1]):
        out[:, j] = z[rng.permutation(z.shape[0]), j]
    return out


def discriminator_loss(model, z, rng):
    """cross entropy of the discriminator: joint samples are class 0, permuted class 1"""
    z = np.asarray(z)
    joint = model.discriminator(nk.Tensor(z))
    permuted = model.discriminator(nk.Tensor(permute_dims(z, rng)))
    return nk.scale(nk.mean(nk.softplus(joint[:, 1] - joint[:, 0]))
                    + nk.mean(nk.softplus(permuted[:, 0] - permuted[:, 1])), 0.5)


def tc_loss(model, z_batch, rng):
    """density-ratio estimate of the total correlation of ``z_batch``

    The discriminator's logit 0 stands for joint samples, logit 1 for
    dimension-permuted ones, so ``TC = mean(l0 - l1)`` on the joint batch.
    """
    z = nk.as_tensor(z_batch)
    if z.ndim != 2 or z.shape[0] < 2:
        raise nk.ContractError('tc_loss needs a batch of at least 2, got shape {}'.format(z.shape))
    logits = model.discriminator(z)
    tc = ivret.rivae.check_finite(nk.mean(logits[:, 0] - logits[:, 1]), 'TC')
    return TcEstimate(tc, discriminator_loss(model, z.data, rng).item())


def discriminator_accuracy(model, z, rng):
    """fraction of joint and permuted samples the discriminator labels correctly"""
    z = np.asarray(z)
    joint = model.discriminator(nk.Tensor(z)).data
    permuted = model.discriminator(nk.Tensor(permute_dims(z, rng))).data
    hits = np.sum(joint[:, 0] > joint[:, 1]) + np.sum(permuted[:, 1] > permuted[:, 0])
    return hits / (2.0 * z.shape[0])


def discriminator_step(model, z, rng, state):
    """one Adam step of the discriminator on detached latent samples"""
    model.discriminator.set_requires_grad(True)
    params = model.discriminator.param_dict('discriminator.')
    loss = discriminator_loss(model, z, rng)
    nk.backward(loss)
    nk.adam_step(params, state)
    model.discriminator.set_requires_grad(False)
    return loss.item()


def rbivae_retrieval_loss(model, v1, v2, v2_mismatch, rng):
    """hinge on ``log P2(v2'|z) - log P2(v2|z)`` with ``z ~ Q(z|v1)``"""
    v1, v2, v2_mismatch = nk.as_tensor(v1), nk.as_tensor(v2), nk.as_tensor(v2_mismatch)
    if v1.shape[0] < 2:
        raise nk.ContractError('retrieval loss needs a batch of at least 2 for mismatches')
    z = model.query_latent(v1).sample(rng)
    dec = model.decode(2, z)
    gap = ivret.rivae.gaussian_log_prob(dec, v2_mismatch) - ivret.rivae.gaussian_log_prob(dec, v2)
    return ivret.rivae.check_finite(nk.mean(nk.hinge(gap + 1.0)), 'L_Retr')


def rbivae_joint_loss(model, batch, weights, rng, stage=2):
    """``-ELBO + gamma * TC + lambda_retr * L_Retr + lambda_reg * L_Reg``

    Same gradient routing as the IVAE objective: the ELBO and TC see
    detached embeddings.
    """
    x1, x2 = batch
    v1 = model.embed_query(x1)
    v2 = model.embed_item(x2)
    if stage == 1 or model.frozen_embedders:
        v1, v2 = v1.detach(), v2.detach()

    elbo, z = _elbo_terms(model, v1.detach(), v2.detach(), rng.derive(0))
    estimate = tc_loss(model, z, rng.derive(4))
    total = elbo + nk.scale(estimate.tc, model.gamma)
    terms = {'L_ELBO': elbo.item(), 'TC': estimate.tc_value,
             'L_Disc': estimate.discriminator_loss, 'L_Retr': 0.0, 'L_Reg': 0.0}

    if weights.lambda_retr > 0:
        perm = ivret.rivae.mismatch_indices(rng.derive(1), v2.shape[0])
        l_retr = rbivae_retrieval_loss(model, v1, v2, v2[perm], rng.derive(2))
        total = total + nk.scale(l_retr, weights.lambda_retr)
        terms['L_Retr'] = l_retr.item()

    if weights.lambda_reg > 0:
        l_reg = ivret.rivae.embedder_reg(model.e2, x2, model.reg_c, rng.derive(3),
                                         weights.noise_magnitude)
        total = total + nk.scale(l_reg, weights.lambda_reg)
        terms['L_Reg'] = l_reg.item()

    ivret.rivae.check_finite(total, 'RBi-VAE objective')
    terms['total'] = total.item()
    return total, terms, z.data


def rbivae_train(model, dataset, schedule, rng, weights=None, state=None, disc_state=None,
                 start_epoch=0, history=None):
    """alternate model and discriminator updates on every minibatch

    The discriminator keeps its own Adam state, following the model's
    learning rate.
    """
    weights = weights or ivret.rivae.LossWeights()
    if model.frozen_embedders:
        weights = ivret.rivae.LossWeights(0.0, 0.0, weights.noise_magnitude)
    disc_state = disc_state or nk.AdamState(schedule.learning_rate)

    def step(model, batch, step_rng, stage, state):
        model.discriminator.set_requires_grad(False)
        params = ivret.rivae.trainable(model, stage, weights)
        total, terms, z = rbivae_joint_loss(model, batch, weights, step_rng, stage)
        nk.backward(total)
        nk.adam_step(params, state)
        disc_state.learning_rate = state.learning_rate
        discriminator_step(model, z, step_rng.derive(5), disc_state)
        return terms

    result = ivret.rivae.run_epochs(model, dataset, schedule, rng, step, state, start_epoch,
                                    history, loss_keys=RBIVAE_KEYS)
    result.disc_state = disc_state
    return result


def make_bivae_on_v(e1, e2, z_dim, **kwargs):
    """RBi-VAE with frozen embedders and no retrieval or regulariser terms"""
    kwargs['frozen_embedders'] = True
    model = RbiVae(e1, e2, z_dim, **kwargs)
    model.kind = 'bivae_on_v'
    return model
