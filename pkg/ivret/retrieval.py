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

"""Cross-modal retrieval and its R@K / Med-R evaluation

A query ``x1`` is embedded, a latent ``z`` is drawn from the model's query
distribution and every database item is scored by the model's item score
(``log P(e2(x2) | z)`` for the latent variable models, a cosine for
Cos-Sim-LVM).  Ranks are 1-based; ties go to the lower database index.
"""
from __future__ import absolute_import, division, print_function, with_statement

import csv
import json
import logging

import numpy as np

import ivret.numkit as nk


LOG = logging.getLogger(__name__)
RECALL_AT = (1, 5, 10)
MODES = ('sample', 'mean')


class SearchDb(object):
    """precomputed item embeddings for a set of dataset rows

    The embeddings are tied to the model ``version`` they were computed
    with; scoring against a newer model raises :class:`ContractError`.
    """

    def __init__(self, indices, embeddings, version):
        self.indices = np.asarray(indices)
        self.embeddings = embeddings
        self.version = version

    def __len__(self):
        return len(self.indices)

    @property
    def size(self):
        return len(self.indices)

    def check(self, model):
        if model.version != self.version:
            raise nk.ContractError(
                'search db embeddings are stale (model version {}, db version {})'.format(
                    model.version, self.version))


def embed_rows(model, dataset, which, indices, chunk=1024):
    out = []
    embed = model.embed_query if which == 1 else model.embed_item
    for start in range(0, len(indices), chunk):
        out.append(embed(dataset.rows(which, indices[start:start + chunk])).data)
    if not out:
        return np.zeros((0, model.dim_v))
    return np.vstack(out)


def build_db(model, dataset, indices=None):
    if indices is None:
        indices = np.arange(len(dataset))
    indices = np.asarray(indices)
    return SearchDb(indices, embed_rows(model, dataset, 2, indices), model.version)


def draw_latent(model, v1, rng, mode='sample'):
    """one ``z`` per query row: a sample, or the mean of the query distribution"""
    if mode not in MODES:
        raise ValueError('unknown retrieval mode "{}"'.format(mode))
    dist = model.query_latent(v1)
    if mode == 'mean' or getattr(model, 'deterministic', False):
        return dist.mean.data.copy()
    return dist.sample(rng).data


def score_query(model, x1, db, rng, mode='sample'):
    """scores of every db item for each query row: ``[queries, db size]``"""
    db.check(model)
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    v1 = model.embed_query(x1)
    return model.score_items(draw_latent(model, v1, rng, mode), db.embeddings)


def true_ranks(scores, true_index):
    """1-based rank of ``true_index[i]`` in row ``i`` of ``scores``

    ``1 + #(strictly better) + #(equal at a lower index)``
    """
    scores = np.asarray(scores)
    true_index = np.asarray(true_index)
    rows = np.arange(len(scores))
    target = scores[rows, true_index][:, None]
    better = np.sum(scores > target, axis=1)
    cols = np.arange(scores.shape[1])[None, :]
    tied_before = np.sum((scores == target) & (cols < true_index[:, None]), axis=1)
    return 1 + better + tied_before


def recall_at(ranks, k):
    return float(np.mean(np.asarray(ranks) <= k))


class RetrievalReport(object):
    """R@K and Med-R averaged over ``trials`` random search sets"""

    def __init__(self, r_at, med_r, ranks, trials, db_size, mode='sample', per_trial=None):
        self.r_at = r_at
        self.med_r = med_r
        self.ranks = ranks
        self.trials = trials
        self.db_size = db_size
        self.mode = mode
        self.per_trial = per_trial or []

    def as_dict(self):
        out = dict(('R@{}'.format(k), self.r_at[k]) for k in sorted(self.r_at))
        out.update({'Med-R': self.med_r, 'trials': self.trials, 'db_size': self.db_size,
                    'mode': self.mode, 'per_trial': self.per_trial})
        return out

    def __repr__(self):
        return '<RetrievalReport {}>'.format(' '.join(
            '{}={:.4g}'.format(k, v) for k, v in self.as_dict().items()
            if isinstance(v, float)))


def evaluate(model, test_set, db_size=1000, trials=10, rng=None, mode='sample', scorer=None):
    """repeated random search sets; every db item is also a query

    :param scorer: optional ``scorer(indices, trial_rng) -> [n, n]`` replacing
        the model's scores (used for oracle checks)
    """
    if db_size > len(test_set):
        raise nk.ContractError('db size {} exceeds the {} test samples'.format(
            db_size, len(test_set)))
    if db_size < 1 or trials < 1:
        raise ValueError('db size and trials must be positive')
    rng = rng or nk.Rng(0)
    per_trial = []
    all_ranks = []
    for trial in range(trials):
        trial_rng = rng.derive(trial)
        idx = np.sort(trial_rng.derive(0).choice(len(test_set), db_size))
        if scorer is None:
            db = build_db(model, test_set, idx)
            scores = score_query(model, test_set.rows(1, idx), db, trial_rng.derive(1), mode)
        else:
            scores = np.asarray(scorer(idx, trial_rng.derive(1)))
        ranks = true_ranks(scores, np.arange(db_size))
        row = dict([('R@{}'.format(k), recall_at(ranks, k)) for k in RECALL_AT])
        row['Med-R'] = float(np.median(ranks))
        row['trial'] = trial
        per_trial.append(row)
        all_ranks.append([int(r) for r in ranks])
        LOG.debug('trial %d: %s', trial, row)

    r_at = dict((k, float(np.mean([t['R@{}'.format(k)] for t in per_trial]))) for k in RECALL_AT)
    med_r = float(np.mean([t['Med-R'] for t in per_trial]))
    report = RetrievalReport(r_at, med_r, all_ranks, trials, db_size, mode, per_trial)
    LOG.info('retrieval over %d trials of %d items: %r', trials, db_size, report)
    return report


# report files

def write_json(path, report, config=None):
    data = report.as_dict()
    if config is not None:
        data['config'] = config
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def _comment_header(f, config_text):
    for line in (config_text or '').splitlines():
        f.write('# {}\n'.format(line))


def write_csv(path, report, config_text=None):
    with open(path, 'w') as f:
        _comment_header(f, config_text)
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['R@1', 'R@5', 'R@10', 'Med-R'])
        writer.writerow(['{:.4f}'.format(report.r_at[k]) for k in RECALL_AT]
                        + ['{:.2f}'.format(report.med_r)])


def write_ranks(path, report):
    """per-query rank dump: one ``trial,query,rank`` row per query"""
    with open(path, 'w') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['trial', 'query', 'rank'])
        for trial, ranks in enumerate(report.ranks):
            for query, rank in enumerate(ranks):
                writer.writerow([trial, query, rank])
