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

"""Retrieval IVAE: a conditional-prior latent variable model on the embedding space.

The query embedding ``v1`` conditions the latent prior ``P(z|v1)``; the item
embedding ``v2`` is explained by a homoscedastic decoder ``P(v2|z)``.  No
network ever synthesises ambient data: items are scored in the embedding
space and the item embedder is regularised to respond to small input
perturbations by a constant amount.

Training minimises ``L_LB + lambda_retr * L_Retr + lambda_reg * L_Reg`` where
``L_LB`` only reaches the IVAE networks, ``L_Retr`` reaches the IVAE networks
and both embedders and ``L_Reg`` reaches ``e2`` and the target response ``c``.
"""
from __future__ import absolute_import, division, print_function, with_statement

import logging
import math

import numpy as np

import ivret.event
import ivret.nets
import ivret.numkit as nk


LOG = logging.getLogger(__name__)
LOG_2PI = math.log(2.0 * math.pi)
LOSS_KEYS = ('L_LB', 'L_Retr', 'L_Reg', 'total')

#: fired after every epoch with ``epoch``, ``stage``, ``row``, ``model``,
#: ``state`` (the optimizer state) keyword arguments
EPOCH_END = ivret.event.Event('train.epoch_end')
#: fired with ``epoch``, ``last_good_epoch``, ``model`` and ``error`` before a
#: :class:`DivergenceError` leaves the training loop
DIVERGED = ivret.event.Event('train.diverged')


class DivergenceError(ArithmeticError):
    def __init__(self, message, epoch=None, last_good_epoch=None):
        super(DivergenceError, self).__init__(message)
        self.epoch = epoch
        self.last_good_epoch = last_good_epoch


def check_finite(tensor, what):
    if not np.all(np.isfinite(tensor.data)):
        raise DivergenceError('non-finite values in {}'.format(what))
    return tensor


class DiagGaussian(object):
    """per-row Gaussian with diagonal covariance, ``log_var`` unconstrained"""

    def __init__(self, mean, log_var):
        mean, log_var = nk.as_tensor(mean), nk.as_tensor(log_var)
        if mean.shape != log_var.shape:
            raise nk.DimensionError('DiagGaussian: mean {} and log_var {} differ'.format(
                mean.shape, log_var.shape))
        self.mean = mean
        self.log_var = log_var

    @property
    def variance(self):
        return np.exp(self.log_var.data)

    @property
    def std(self):
        return np.exp(0.5 * self.log_var.data)

    def sample(self, rng):
        """reparameterised draw ``mean + exp(log_var / 2) * eps``"""
        eps = nk.Tensor(rng.normal(self.mean.shape))
        return self.mean + nk.exp(nk.scale(self.log_var, 0.5)) * eps


def split_heads(out, z_dim):
    return DiagGaussian(out[:, :z_dim], out[:, z_dim:])


def kl_diag(q, p):
    """closed-form KL(q || p) per row, summed over dims"""
    if q.mean.shape != p.mean.shape:
        raise nk.DimensionError('kl_diag: shapes {} and {}'.format(q.mean.shape, p.mean.shape))
    diff = q.mean - p.mean
    ratio = nk.exp(q.log_var - p.log_var)
    term = ratio + nk.square(diff) / nk.exp(p.log_var) - 1.0 - (q.log_var - p.log_var)
    return nk.scale(nk.sum(term, axis=-1), 0.5)


def gaussian_log_prob(g, x):
    """log N(x; mean, diag(exp(log_var))) per row"""
    x = nk.as_tensor(x)
    if x.shape != g.mean.shape:
        raise nk.DimensionError('gaussian_log_prob: x {} vs mean {}'.format(x.shape, g.mean.shape))
    sq = nk.square(x - g.mean) / nk.exp(g.log_var)
    term = nk.scale(g.log_var + sq, -0.5) - 0.5 * LOG_2PI
    return nk.sum(term, axis=-1)


def standard_normal(batch, dim):
    return DiagGaussian(np.zeros((batch, dim)), np.zeros((batch, dim)))


class LossWeights(object):
    def __init__(self, lambda_retr=1.0, lambda_reg=0.1, noise_magnitude=1e-3):
        for name, value in (('lambda_retr', lambda_retr), ('lambda_reg', lambda_reg)):
            if not (np.isfinite(value) and value >= 0):
                raise ValueError('{} must be finite and non-negative, got {}'.format(name, value))
        if not (np.isfinite(noise_magnitude) and noise_magnitude > 0):
            raise ValueError('noise_magnitude must be positive, got {}'.format(noise_magnitude))
        self.lambda_retr = float(lambda_retr)
        self.lambda_reg = float(lambda_reg)
        self.noise_magnitude = float(noise_magnitude)

    def __repr__(self):
        return 'LossWeights(lambda_retr={}, lambda_reg={}, noise_magnitude={})'.format(
            self.lambda_retr, self.lambda_reg, self.noise_magnitude)


class Schedule(object):
    """two-stage Adam schedule

    :param int joint_start: first epoch in which the embedders are trained
    :param list decay_epochs: epochs at which the learning rate is multiplied
        by ``decay_factor``
    """

    def __init__(self, batch_size=64, epochs=2000, learning_rate=0.005,
                 decay_epochs=(200, 1000), decay_factor=0.5, joint_start=100):
        if batch_size < 2:
            raise ValueError('batch size must be at least 2 (mismatch sampling)')
        self.batch_size = int(batch_size)
        self.epochs = int(epochs)
        self.learning_rate = float(learning_rate)
        self.decay_epochs = tuple(int(e) for e in decay_epochs)
        self.decay_factor = float(decay_factor)
        self.joint_start = int(joint_start)

    def lr_at(self, epoch):
        drops = len([e for e in self.decay_epochs if e <= epoch])
        return self.learning_rate * self.decay_factor ** drops

    def stage_at(self, epoch):
        return 1 if epoch < self.joint_start else 2


class RivaeModel(ivret.nets.Module):
    """prior net (lambda), decoder f (theta), posterior net (phi), embedders, c"""
    kind = 'rivae'
    _children = ('prior_net', 'decoder_net', 'posterior_net', 'e1', 'e2', 'log_c')

    def __init__(self, e1, e2, z_dim, hidden=(10, 10), slope=0.2, eta=1e-3,
                 c_init=0.01, retrieval_latent='posterior'):
        if e1.out_dim != e2.out_dim:
            raise nk.DimensionError('embedders disagree on dim(V): {} vs {}'.format(
                e1.out_dim, e2.out_dim))
        if eta <= 0 or c_init <= 0:
            raise ValueError('eta and c must be positive')
        if retrieval_latent not in ('posterior', 'prior'):
            raise ValueError('retrieval_latent must be "posterior" or "prior"')
        dim_v = e1.out_dim
        hidden = list(hidden)
        self.e1 = e1
        self.e2 = e2
        self.z_dim = z_dim
        self.dim_v = dim_v
        self.eta = float(eta)
        self.retrieval_latent = retrieval_latent
        self.prior_net = ivret.nets.Mlp([dim_v] + hidden + [2 * z_dim], 'leaky_relu', slope)
        self.decoder_net = ivret.nets.Mlp([z_dim] + hidden + [dim_v], 'leaky_relu', slope)
        self.posterior_net = ivret.nets.Mlp([2 * dim_v] + hidden + [2 * z_dim], 'leaky_relu', slope)
        self.log_c = nk.Tensor(math.log(c_init), requires_grad=True)
        self.version = 0

    @property
    def reg_c(self):
        return nk.exp(self.log_c)

    def latent_nets(self):
        return (self.prior_net, self.decoder_net, self.posterior_net)

    def init(self, rng):
        for i, net in enumerate(self.latent_nets() + (self.e1, self.e2)):
            ivret.nets.init_params(rng.derive(i), net)
        return self

    # retrieval interface

    def embed_query(self, x1):
        return ivret.nets.embed(self.e1, x1)

    def embed_item(self, x2):
        return ivret.nets.embed(self.e2, x2)

    def query_latent(self, v1):
        return encode_prior(self, v1)

    def latent_scale(self, v1):
        """per-row std used to size latent traversals"""
        return self.query_latent(v1).std

    def score_items(self, z, v2_db):
        """``log P(v2_j | z_i)`` for every query row i and database row j"""
        f = self.decoder_net(nk.as_tensor(z)).data
        sq = (np.sum(f * f, axis=1)[:, None] + np.sum(v2_db * v2_db, axis=1)[None, :]
              - 2.0 * f.dot(v2_db.T))
        sq = np.maximum(sq, 0.0)
        var = self.eta ** 2
        return -0.5 * sq / var - 0.5 * self.dim_v * (LOG_2PI + math.log(var))


def encode_prior(model, v1):
    """P(z | v1)"""
    return split_heads(check_finite(model.prior_net(nk.as_tensor(v1)), 'prior'), model.z_dim)


def decode(model, z):
    """P(v2 | z) = N(f(z), eta^2 I)"""
    mean = model.decoder_net(nk.as_tensor(z))
    return DiagGaussian(mean, np.full(mean.shape, 2.0 * math.log(model.eta)))


def encode_posterior(model, v1, v2):
    """Q(z | v1, v2) from the concatenated embeddings"""
    v1, v2 = nk.as_tensor(v1), nk.as_tensor(v2)
    if v1.shape[0] != v2.shape[0]:
        raise nk.DimensionError('encode_posterior: batch sizes {} and {}'.format(v1.shape, v2.shape))
    out = check_finite(model.posterior_net(nk.concat([v1, v2])), 'posterior')
    return split_heads(out, model.z_dim)


def elbo_loss(model, v1, v2, rng, reduce=True):
    """negative evidence lower bound of log P(v2 | v1), one reparameterised sample"""
    q = encode_posterior(model, v1, v2)
    p = encode_prior(model, v1)
    z = q.sample(rng)
    per_row = kl_diag(q, p) - gaussian_log_prob(decode(model, z), v2)
    check_finite(per_row, 'L_LB')
    return nk.mean(per_row) if reduce else per_row


def mismatch_indices(rng, batch):
    """a derangement of ``range(batch)``: every row paired with another row"""
    if batch < 2:
        raise nk.ContractError('mismatch sampling needs a batch of at least 2, got {}'.format(batch))
    shift = rng.integers(1, batch)
    return (np.arange(batch) + shift) % batch


def retrieval_loss(model, v1, v2, v2_mismatch, rng, latent=None):
    """hinge ``(1 + log P(v2'|z) - log P(v2|z))_+`` averaged over the batch

    ``latent`` selects the distribution ``z`` is drawn from: ``posterior``
    (Q(z|v1,v2), the training default) or ``prior`` (P(z|v1)).
    """
    v1, v2, v2_mismatch = nk.as_tensor(v1), nk.as_tensor(v2), nk.as_tensor(v2_mismatch)
    if v1.shape[0] < 2:
        raise nk.ContractError('retrieval_loss needs a batch of at least 2 for mismatches')
    if not (v1.shape[0] == v2.shape[0] == v2_mismatch.shape[0]):
        raise nk.DimensionError('retrieval_loss: batches {} {} {}'.format(
            v1.shape, v2.shape, v2_mismatch.shape))
    latent = latent or model.retrieval_latent
    if latent == 'prior':
        z = encode_prior(model, v1).sample(rng)
    else:
        z = encode_posterior(model, v1, v2).sample(rng)
    dec = decode(model, z)
    gap = gaussian_log_prob(dec, v2_mismatch) - gaussian_log_prob(dec, v2)
    loss = nk.mean(nk.hinge(gap + 1.0))
    return check_finite(loss, 'L_Retr')


def perturbation(rng, shape, magnitude):
    """isotropic Gaussian directions scaled to norm ``magnitude`` per row"""
    eps = rng.normal(shape)
    norms = np.sqrt(np.sum(eps * eps, axis=1, keepdims=True))
    return eps * (magnitude / np.maximum(norms, 1e-300))


def embedder_reg(e2, x2, reg_c, rng, noise_magnitude):
    """mean of ``(||e2(x2) - e2(x2 + eps)|| - c)^2`` with ``||eps|| = noise_magnitude``"""
    if noise_magnitude <= 0:
        raise nk.ContractError('noise magnitude must be positive')
    x2 = np.asarray(nk.as_tensor(x2).data)
    eps = perturbation(rng, x2.shape, noise_magnitude)
    response = nk.norm(ivret.nets.embed(e2, x2) - ivret.nets.embed(e2, x2 + eps))
    return nk.mean(nk.square(response - reg_c))


def embedder_response(e2, x2, rng, noise_magnitude):
    """``||e2(x2) - e2(x2 + eps)||`` per row, without gradients"""
    x2 = np.asarray(x2, dtype=np.float64)
    eps = perturbation(rng, x2.shape, noise_magnitude)
    a = ivret.nets.embed(e2, x2).data
    b = ivret.nets.embed(e2, x2 + eps).data
    return np.sqrt(np.sum((a - b) ** 2, axis=1))


def joint_loss(model, batch, weights, rng, stage=2):
    """``L_LB + lambda_retr * L_Retr + lambda_reg * L_Reg`` and its terms

    ``L_LB`` sees detached embeddings, so only the IVAE networks learn from it.
    In stage 1 the embeddings are detached everywhere.

    :param tuple batch: ``(x1, x2)`` float arrays
    :return: ``(total, {'L_LB': .., 'L_Retr': .., 'L_Reg': .., 'total': ..})``
    """
    x1, x2 = batch
    v1 = model.embed_query(x1)
    v2 = model.embed_item(x2)
    if stage == 1:
        v1, v2 = v1.detach(), v2.detach()

    l_lb = elbo_loss(model, v1.detach(), v2.detach(), rng.derive(0))
    total = l_lb
    terms = {'L_LB': l_lb.item(), 'L_Retr': 0.0, 'L_Reg': 0.0}

    if weights.lambda_retr > 0:
        perm = mismatch_indices(rng.derive(1), v2.shape[0])
        l_retr = retrieval_loss(model, v1, v2, v2[perm], rng.derive(2))
        total = total + nk.scale(l_retr, weights.lambda_retr)
        terms['L_Retr'] = l_retr.item()

    if weights.lambda_reg > 0:
        l_reg = embedder_reg(model.e2, x2, model.reg_c, rng.derive(3), weights.noise_magnitude)
        total = total + nk.scale(l_reg, weights.lambda_reg)
        terms['L_Reg'] = l_reg.item()

    check_finite(total, 'joint objective')
    terms['total'] = total.item()
    return total, terms


def trainable(model, stage, weights):
    """freeze/unfreeze parameter groups following the gradient routing of the objective"""
    for net in model.latent_nets():
        net.set_requires_grad(True)
    joint = stage == 2 and not getattr(model, 'frozen_embedders', False)
    model.e1.set_requires_grad(joint and weights.lambda_retr > 0)
    model.e2.set_requires_grad(joint and (weights.lambda_retr > 0 or weights.lambda_reg > 0))
    model.log_c.requires_grad = weights.lambda_reg > 0
    model.log_c.grad = None
    return {name: p for name, p in model.named_parameters() if p.requires_grad}


def minibatches(order, batch_size):
    """consecutive slices of ``order``; a trailing batch smaller than 2 is dropped"""
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def check_params(model, epoch):
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p.data)):
            raise DivergenceError('parameter {} is not finite'.format(name), epoch)


class TrainResult(object):
    def __init__(self, model, history, state, epoch):
        self.model = model
        self.history = history
        self.state = state
        self.epoch = epoch


def _mean_row(epoch, stage, lr, rows, keys):
    out = {'epoch': epoch, 'stage': stage, 'lr': lr}
    for key in keys:
        out[key] = float(np.mean([r[key] for r in rows])) if rows else 0.0
    return out


def run_epochs(model, dataset, schedule, rng, step_fn, state=None, start_epoch=0,
               history=None, loss_keys=LOSS_KEYS):
    """the minibatch loop shared by every model in ivret

    ``step_fn(model, batch, rng, stage, state)`` performs one optimisation step
    and returns the term dict for logging.  Each epoch draws from
    ``rng.derive(epoch)`` so a run resumed at any epoch boundary replays the
    same stream.  On divergence the parameters of the last completed epoch are
    restored before :class:`DivergenceError` is raised.
    """
    state = state or nk.AdamState(schedule.learning_rate)
    history = list(history or [])
    n = len(dataset)
    last_good = start_epoch - 1
    for epoch in range(start_epoch, schedule.epochs):
        stage = schedule.stage_at(epoch)
        state.learning_rate = schedule.lr_at(epoch)
        epoch_rng = rng.derive(epoch)
        snapshot = model.state_arrays()
        rows = []
        try:
            order = epoch_rng.derive(0).permutation(n)
            for step, idx in enumerate(minibatches(order, schedule.batch_size)):
                batch = dataset.batch(idx)
                rows.append(step_fn(model, batch, epoch_rng.derive(1, step), stage, state))
                model.version += 1
            check_params(model, epoch)
        except DivergenceError as e:
            model.load_arrays(snapshot)
            model.version += 1
            LOG.error('diverged in epoch %d (%s); restored parameters of epoch %d',
                      epoch, e, last_good)
            DIVERGED(epoch=epoch, last_good_epoch=last_good, model=model, error=e)
            raise DivergenceError(str(e), epoch, last_good)
        row = _mean_row(epoch, stage, state.learning_rate, rows, loss_keys)
        history.append(row)
        last_good = epoch
        LOG.info('epoch %d stage %d lr %g: %s', epoch, stage, state.learning_rate,
                 ' '.join('{} {:.6g}'.format(k, row[k]) for k in loss_keys))
        EPOCH_END(epoch=epoch, stage=stage, row=row, model=model, state=state)
    return TrainResult(model, history, state, schedule.epochs)


def train(model, dataset, schedule, rng, weights=None, state=None, start_epoch=0, history=None):
    """two-stage Adam training: IVAE networks alone, then everything jointly"""
    weights = weights or LossWeights()

    def step(model, batch, step_rng, stage, state):
        params = trainable(model, stage, weights)
        total, terms = joint_loss(model, batch, weights, step_rng, stage)
        nk.backward(total)
        nk.adam_step(params, state)
        return terms

    return run_epochs(model, dataset, schedule, rng, step, state, start_epoch, history)
