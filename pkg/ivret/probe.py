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

"""What do the latent dims control?

A reference query fixes ``z_ref``, the mean of its query distribution.  One
dim at a time is swept over ``z_ref +- k * std`` while the others stay put,
and the best-scoring database item is retrieved at every point.  The
retrieved items' ground-truth labels then give

* a latent x factor table of absolute Pearson correlations, summarised by
  disentanglement D, completeness C and informativeness I, or
* for digit labels, a latent x digit-pair table of transitions between
  consecutive retrieved classes, summarised by overlap and coverage.
"""
from __future__ import absolute_import, division, print_function, with_statement

import csv
import itertools
import logging

import numpy as np
import scipy.stats

import ivret.numkit as nk
import ivret.retrieval


LOG = logging.getLogger(__name__)
DIGIT_PAIRS = list(itertools.combinations(range(10), 2))
PAIR_COLUMN = dict((pair, i) for i, pair in enumerate(DIGIT_PAIRS))


class UnsupportedDatasetError(nk.ContractError):
    pass


class TraversalSpec(object):
    def __init__(self, n_points=100, k=10.0, n_refs=20):
        if n_points < 2:
            raise nk.ContractError('a traversal needs at least 2 points, got {}'.format(n_points))
        self.n_points = int(n_points)
        self.k = float(k)
        self.n_refs = int(n_refs)

    def grid(self, center, scale):
        return np.linspace(center - self.k * scale, center + self.k * scale, self.n_points)


class Traversal(object):
    """one reference query swept along every latent dim

    :ivar values: ``[z_dim, n_points]`` latent value of the swept dim
    :ivar items: ``[z_dim, n_points]`` dataset row retrieved at that value
    """

    def __init__(self, values, items, z_ref=None, ref=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.items = np.asarray(items)
        self.z_ref = z_ref
        self.ref = ref

    @property
    def dims(self):
        return self.values.shape[0]


def traverse_and_retrieve(model, v1_ref, scale, spec, db):
    """sweep each dim of ``z_ref`` and retrieve the top db item per point

    :param v1_ref: the reference query's embedding, one row
    :param scale: per-dim traversal std for this reference
    """
    db.check(model)
    z_ref = model.query_latent(np.atleast_2d(v1_ref)).mean.data[0]
    values = np.empty((len(z_ref), spec.n_points))
    items = np.empty((len(z_ref), spec.n_points), dtype=np.int64)
    for j in range(len(z_ref)):
        z = np.tile(z_ref, (spec.n_points, 1))
        values[j] = z[:, j] = spec.grid(z_ref[j], scale[j])
        # np.argmax resolves ties to the lowest index
        best = np.argmax(model.score_items(z, db.embeddings), axis=1)
        items[j] = db.indices[best]
    return Traversal(values, items, z_ref)


def traverse(model, dataset, refs, spec, db):
    """traversals for the dataset rows ``refs``

    The traversal std comes from the model's query distribution; point
    encoders derive it from the spread over all references.
    """
    refs = np.asarray(refs)
    v1 = ivret.retrieval.embed_rows(model, dataset, 1, refs)
    scales = model.latent_scale(v1)
    out = []
    for i, ref in enumerate(refs):
        t = traverse_and_retrieve(model, v1[i], scales[i], spec, db)
        t.ref = int(ref)
        out.append(t)
    return out


def _abs_pearson(a, b):
    """``|corr(a, b)|``; 0 when either sequence is constant"""
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    r = scipy.stats.pearsonr(a, b)[0]
    if not np.isfinite(r):
        return 0.0
    return float(min(abs(r), 1.0))


class CorrelationTable(object):
    def __init__(self, c, factor_names=None):
        self.c = np.asarray(c, dtype=np.float64)
        self.factor_names = list(factor_names or range(self.c.shape[1]))

    @property
    def shape(self):
        return self.c.shape


def correlation_table(traversals, factors, columns=None, factor_names=None):
    """``c[j, k]``: mean over references of ``|corr(z_j sweep, f_k of retrieved items)|``

    :param factors: ``[N, K_all]`` ground-truth factors of the dataset rows
    :param columns: factor columns to use (default all)
    """
    factors = np.asarray(factors, dtype=np.float64)
    if factors.ndim != 2 or factors.shape[1] == 0:
        raise UnsupportedDatasetError('the dataset carries no factor labels')
    if columns is None:
        columns = list(range(factors.shape[1]))
    if not traversals:
        raise nk.ContractError('correlation_table needs at least one traversal')
    dims = traversals[0].dims
    c = np.zeros((dims, len(columns)))
    for t in traversals:
        if t.values.shape[1] < 2:
            raise nk.ContractError('correlations need at least 2 traversal points')
        for j in range(dims):
            retrieved = factors[t.items[j]]
            for col, k in enumerate(columns):
                c[j, col] += _abs_pearson(t.values[j], retrieved[:, k])
    c /= len(traversals)
    if factor_names is not None:
        factor_names = [factor_names[k] for k in columns]
    return CorrelationTable(c, factor_names)


class DciScores(object):
    def __init__(self, disentanglement, completeness, informativeness, alpha):
        self.disentanglement = disentanglement
        self.completeness = completeness
        self.informativeness = informativeness
        self.alpha = alpha

    def as_dict(self):
        return {'D': self.disentanglement, 'C': self.completeness,
                'I': self.informativeness, 'alpha': self.alpha}


def _normalized_entropy(p, axis):
    """entropy of the distributions along ``axis``, in units of log(size)"""
    n = p.shape[axis]
    if n < 2:
        return np.zeros(p.shape[1 - axis])
    return scipy.stats.entropy(p, base=n, axis=axis)


def _softmax(x, axis):
    x = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(x)
    return e / np.sum(e, axis=axis, keepdims=True)


def dci(table, alpha=10.0):
    """D, C, I of a correlation table, sharpened with ``exp(alpha * c)``

    ``p[j, k]`` normalises each latent's row over the K factors, the
    column-wise ``q[j, k]`` each factor's column over the d latents.
    """
    c = table.c if isinstance(table, CorrelationTable) else np.asarray(table, dtype=np.float64)
    if c.ndim != 2 or c.size == 0:
        raise nk.DimensionError('dci needs a non-empty d x K table, got {}'.format(c.shape))
    if not np.all(np.isfinite(c)):
        raise nk.ContractError('correlation table has non-finite entries')
    row_entropy = _normalized_entropy(_softmax(alpha * c, axis=1), axis=1)
    col_entropy = _normalized_entropy(_softmax(alpha * c, axis=0), axis=0)
    return DciScores(float(1.0 - np.mean(row_entropy)),
                     float(1.0 - np.mean(col_entropy)),
                     float(np.mean(np.max(c, axis=0))),
                     float(alpha))


def dominant_factors(table):
    """name of the factor each latent dim correlates with most"""
    return [table.factor_names[k] for k in np.argmax(table.c, axis=1)]


# digit transitions

def transitions_from_sequence(digits):
    """columns of the unordered digit pairs seen as consecutive class changes"""
    cols = set()
    digits = [int(d) for d in digits]
    for a, b in zip(digits[:-1], digits[1:]):
        if a != b:
            cols.add(PAIR_COLUMN[(min(a, b), max(a, b))])
    return sorted(cols)


class TransitionTable(object):
    def __init__(self, t):
        self.t = np.asarray(t, dtype=np.float64)
        if self.t.ndim != 2 or self.t.shape[1] != len(DIGIT_PAIRS):
            raise nk.DimensionError('a transition table has {} columns, got shape {}'.format(
                len(DIGIT_PAIRS), self.t.shape))


def transition_table(traversals, labels):
    """per-dim transition indicators averaged over the reference queries

    :param labels: digit label of every dataset row
    """
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise UnsupportedDatasetError('the dataset carries no digit labels')
    if not traversals:
        raise nk.ContractError('transition_table needs at least one traversal')
    t = np.zeros((traversals[0].dims, len(DIGIT_PAIRS)))
    for tr in traversals:
        for j in range(tr.dims):
            t[j, transitions_from_sequence(labels[tr.items[j]])] += 1.0
    return TransitionTable(t / len(traversals))


class OverlapCoverage(object):
    def __init__(self, overlap, coverage):
        self.overlap = overlap
        self.coverage = coverage

    @property
    def difference(self):
        """coverage minus overlap: high when dims are diverse and together complete"""
        return self.coverage - self.overlap

    def as_dict(self):
        return {'overlap': self.overlap, 'coverage': self.coverage,
                'coverage_minus_overlap': self.difference}


def overlap_coverage(table):
    t = table.t if isinstance(table, TransitionTable) else TransitionTable(table).t
    sums = t.sum(axis=1)
    rows = t[sums > 0] / sums[sums > 0][:, None]
    if len(rows) == 0:
        raise nk.ContractError('every row of the transition table is zero')
    n_cols = t.shape[1]
    pairs = [(i, j) for i in range(len(rows)) for j in range(len(rows)) if i != j]
    if pairs:
        overlap = float(np.mean([np.sum(np.minimum(rows[i], rows[j])) / n_cols
                                 for i, j in pairs]))
    else:
        overlap = 0.0
    coverage = float(scipy.stats.entropy(rows.mean(axis=0), base=n_cols))
    return OverlapCoverage(overlap, coverage)


# whole-probe driver used by the command line

def pick_references(dataset, n_refs, rng):
    return np.sort(rng.choice(len(dataset), min(n_refs, len(dataset))))


def probe(model, dataset, spec, rng, db_size=None, columns=None, alpha=10.0, digits=False):
    """traverse ``spec.n_refs`` random references against a random search set

    :return: ``(report, table, traversals)`` where ``report`` is a plain dict
    """
    if not dataset.has_labels:
        raise UnsupportedDatasetError('dataset {} has no labels to probe'.format(dataset.name))
    db_size = min(db_size or len(dataset), len(dataset))
    db_idx = np.sort(rng.derive(0).choice(len(dataset), db_size))
    db = ivret.retrieval.build_db(model, dataset, db_idx)
    refs = pick_references(dataset, spec.n_refs, rng.derive(1))
    traversals = traverse(model, dataset, refs, spec, db)
    report = {'n_refs': len(refs), 'n_points': spec.n_points, 'k': spec.k, 'db_size': db_size}
    if digits:
        table = transition_table(traversals, dataset.factors[:, 0])
        report.update(overlap_coverage(table).as_dict())
    else:
        table = correlation_table(traversals, dataset.factors, columns, dataset.factor_names)
        report.update(dci(table, alpha).as_dict())
        report['dominant_factor'] = dominant_factors(table)
        report['factor_columns'] = list(table.factor_names)
    LOG.info('probe of %s: %s', dataset.name, dict(
        (k, v) for k, v in report.items() if isinstance(v, float)))
    return report, table, traversals


def write_table(path, matrix, col_labels, config_text=None):
    with open(path, 'w') as f:
        for line in (config_text or '').splitlines():
            f.write('# {}\n'.format(line))
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['dim'] + [str(c) for c in col_labels])
        for j, row in enumerate(matrix):
            writer.writerow([j] + ['{:.6f}'.format(v) for v in row])


def pair_labels():
    return ['{}-{}'.format(a, b) for a, b in DIGIT_PAIRS]


def write_traversals(path, traversals):
    """plot-ready dump: ``ref,dim,point,value,item`` per retrieved item"""
    with open(path, 'w') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['ref', 'dim', 'point', 'value', 'item'])
        for t in traversals:
            for j in range(t.dims):
                for p in range(t.values.shape[1]):
                    writer.writerow([t.ref, j, p, repr(float(t.values[j, p])), int(t.items[j, p])])
