from __future__ import absolute_import, division, print_function, with_statement

import json

import numpy as np
import pytest

import ivret.numkit as nk
import ivret.retrieval

from .common import tiny_rivae, tiny_cossim, tiny_synth


def test_true_ranks_break_ties_by_index():
    scores = np.array([[1.0, 1.0, 0.0],
                       [0.0, 2.0, 3.0]])
    np.testing.assert_array_equal(ivret.retrieval.true_ranks(scores, [0, 0]), [1, 3])
    np.testing.assert_array_equal(ivret.retrieval.true_ranks(scores, [1, 2]), [2, 1])


def test_recall_at():
    ranks = np.array([1, 2, 6, 11])
    assert ivret.retrieval.recall_at(ranks, 1) == 0.25
    assert ivret.retrieval.recall_at(ranks, 5) == 0.5
    assert ivret.retrieval.recall_at(ranks, 10) == 0.75


def test_oracle_scorer_is_perfect():
    data = tiny_synth(50)
    report = ivret.retrieval.evaluate(None, data, db_size=20, trials=3, rng=nk.Rng(0),
                                      scorer=lambda idx, rng: np.eye(len(idx)))
    assert report.r_at == {1: 1.0, 5: 1.0, 10: 1.0}
    assert report.med_r == 1.0
    assert len(report.per_trial) == 3


def test_adversarial_scorer_ranks_last():
    data = tiny_synth(50)
    report = ivret.retrieval.evaluate(None, data, db_size=20, trials=2, rng=nk.Rng(0),
                                      scorer=lambda idx, rng: -np.eye(len(idx)))
    assert report.r_at[10] == 0.0
    assert report.med_r == 20.0


def test_random_scorer_is_at_chance():
    data = tiny_synth(1000)
    report = ivret.retrieval.evaluate(None, data, db_size=1000, trials=10, rng=nk.Rng(0),
                                      scorer=lambda idx, rng: rng.normal((len(idx), len(idx))))
    assert report.r_at[10] == pytest.approx(0.01, abs=0.005)
    assert 400 < report.med_r < 600


def test_db_larger_than_test_set():
    with pytest.raises(nk.ContractError):
        ivret.retrieval.evaluate(None, tiny_synth(10), db_size=11)


def test_stale_search_db():
    model = tiny_rivae()
    data = tiny_synth(10)
    db = ivret.retrieval.build_db(model, data)
    assert db.embeddings.shape == (10, model.dim_v)
    ivret.retrieval.score_query(model, data.rows(1, [0]), db, nk.Rng(0))
    model.version += 1
    with pytest.raises(nk.ContractError):
        ivret.retrieval.score_query(model, data.rows(1, [0]), db, nk.Rng(0))


def test_draw_latent_modes():
    model = tiny_rivae()
    v1 = model.embed_query(tiny_synth(4).rows(1, np.arange(4)))
    mean = ivret.retrieval.draw_latent(model, v1, nk.Rng(0), 'mean')
    np.testing.assert_array_equal(mean, model.query_latent(v1).mean.data)
    sample = ivret.retrieval.draw_latent(model, v1, nk.Rng(0), 'sample')
    assert not np.array_equal(sample, mean)
    with pytest.raises(ValueError):
        ivret.retrieval.draw_latent(model, v1, nk.Rng(0), 'mode')
    cossim = tiny_cossim()
    np.testing.assert_array_equal(ivret.retrieval.draw_latent(cossim, v1, nk.Rng(0), 'sample'),
                                  cossim.query_latent(v1).mean.data)


def test_evaluate_model_is_reproducible():
    model = tiny_rivae()
    data = tiny_synth(40)
    a = ivret.retrieval.evaluate(model, data, db_size=30, trials=2, rng=nk.Rng(3))
    b = ivret.retrieval.evaluate(model, data, db_size=30, trials=2, rng=nk.Rng(3))
    assert a.as_dict() == b.as_dict()
    assert all(1 <= r <= 30 for ranks in a.ranks for r in ranks)
    assert 0.0 <= a.r_at[1] <= a.r_at[5] <= a.r_at[10] <= 1.0


def test_report_files(tmp_path):
    data = tiny_synth(50)
    report = ivret.retrieval.evaluate(None, data, db_size=20, trials=2, rng=nk.Rng(0),
                                      scorer=lambda idx, rng: np.eye(len(idx)))
    ivret.retrieval.write_json(str(tmp_path / 'report.json'), report, {'run': {'seed': 0}})
    with open(str(tmp_path / 'report.json')) as f:
        data = json.load(f)
    assert data['R@1'] == 1.0 and data['Med-R'] == 1.0
    assert data['config'] == {'run': {'seed': 0}}

    ivret.retrieval.write_csv(str(tmp_path / 'report.csv'), report, 'run:\n  seed: 0\n')
    with open(str(tmp_path / 'report.csv')) as f:
        lines = f.read().splitlines()
    assert lines[:2] == ['# run:', '#   seed: 0']
    assert lines[2] == 'R@1,R@5,R@10,Med-R'
    assert lines[3] == '1.0000,1.0000,1.0000,1.00'

    ivret.retrieval.write_ranks(str(tmp_path / 'ranks.csv'), report)
    with open(str(tmp_path / 'ranks.csv')) as f:
        lines = f.read().splitlines()
    assert len(lines) == 1 + 2 * 20
    assert lines[1] == '0,0,1'
