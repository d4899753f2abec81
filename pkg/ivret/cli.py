# Copyright 2014 Florian Ludwig
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

# PYTHON_ARGCOMPLETE_OK

"""ivret command line tool

generate -> train -> eval / probe, plus the regularizer ablation.
Every artifact of a run lands below --out-dir:

  data/<dataset>-{train,test}.ivd
  runs/<dataset>-<model>[-noreg]/checkpoint-*.ivc, losses.csv, config.yml, ...
"""
from __future__ import absolute_import, division, print_function, with_statement

import sys
import os
import argparse
import collections
import csv
import json
import logging
import logging.config

import yaml
import argcomplete
import tornado.httpclient

import ivret.baselines
import ivret.cfg
import ivret.container
import ivret.datagen
import ivret.nets
import ivret.numkit as nk
import ivret.probe
import ivret.retrieval
import ivret.rivae
import ivret.template


CONFIG_FORMATTER = '%(asctime)s %(name)s[%(levelname)s] %(message)s'
ARG_PARSER = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawTextHelpFormatter)
SUB_PARSER = ARG_PARSER.add_subparsers(help='Command help')
LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

# Rng.derive keys of the independent streams of a run
DATA_STREAM, INIT_STREAM, TRAIN_STREAM, EVAL_STREAM, PROBE_STREAM = range(5)
LOSS_COLUMNS = {
    'rivae': ivret.rivae.LOSS_KEYS,
    'cossim_lvm': ivret.baselines.COSSIM_KEYS,
    'rbivae': ivret.baselines.RBIVAE_KEYS,
    'bivae_on_v': ivret.baselines.RBIVAE_KEYS,
}
MNIST_URL_FILES = [name for pair in ivret.datagen.MNIST_FILES.values() for name in pair]
META_KEYS = ('kind', 'dataset', 'epoch', 'history')
ADAM_KEYS = ('learning_rate', 'beta1', 'beta2', 'epsilon', 'step_count')


def command(func):
    """Decorator for CLI exposed functions"""
    name = func.__name__.rstrip('_')
    func.parser = SUB_PARSER.add_parser(name, help=func.__doc__)
    func.parser.set_defaults(func=func)
    return func


# configuration and paths

def make_config(args):
    rc = ivret.cfg.load(args.dataset, getattr(args, 'model', None) or 'rivae',
                        getattr(args, 'config', None))
    rc.set('run', 'seed', args.seed)
    rc.set('run', 'out_dir', args.out_dir)
    rc.set('datagen', 'idx_dir', getattr(args, 'idx_dir', None))
    rc.set('train', 'epochs', getattr(args, 'epochs', None))
    if getattr(args, 'no_reg', False):
        rc.set('train', 'lambda_reg', 0.0)
    rc.set('retrieval', 'db_size', getattr(args, 'db_size', None))
    rc.set('retrieval', 'trials', getattr(args, 'trials', None))
    return rc.validate()


def out_dir(rc):
    return rc.get('run', 'out_dir', 'ivret-out')


def data_path(rc, split):
    return os.path.join(out_dir(rc), 'data', '{}-{}.ivd'.format(rc.dataset, split))


def run_dir(rc, no_reg=None):
    if no_reg is None:
        no_reg = rc.get('train', 'lambda_reg') == 0
    name = '{}-{}{}'.format(rc.dataset, rc.model, '-noreg' if no_reg else '')
    return os.path.join(out_dir(rc), 'runs', name)


def _makedirs(path):
    if not os.path.isdir(path):
        os.makedirs(path)
    return path


def load_split(rc, split):
    path = data_path(rc, split)
    if not os.path.exists(path):
        raise nk.ContractError('dataset file {} missing, run "ivret generate --dataset {}" first'.format(
            path, rc.dataset))
    return ivret.datagen.load(path)


# models and checkpoints

def build_model(rc, rng):
    dim_v, z_dim = rc.dims
    nets_cfg = rc.section('nets')
    e1 = ivret.nets.make_embedder(rc.dataset, dim_v, nets_cfg)
    e2 = ivret.nets.make_embedder(rc.dataset, dim_v, nets_cfg)
    b = rc.section('baselines')
    if rc.model == 'rivae':
        r = rc.section('rivae')
        model = ivret.rivae.RivaeModel(e1, e2, z_dim, hidden=r.get('hidden', (10, 10)),
                                       slope=r.get('slope', 0.2), eta=r.get('eta', 1e-3),
                                       c_init=r.get('c_init', 0.01),
                                       retrieval_latent=r.get('retrieval_latent', 'posterior'))
    elif rc.model == 'cossim_lvm':
        model = ivret.baselines.CosSimLvm(e1, e2, z_dim, hidden=b.get('hidden', (10, 10)),
                                          slope=b.get('slope', 0.2), margin=b.get('margin', 0.3))
    else:
        kwargs = dict((k, b[k]) for k in ('hidden', 'hidden_layers', 'slope', 'gamma',
                                          'disc_hidden', 'disc_layers', 'c_init') if k in b)
        if rc.model == 'bivae_on_v':
            model = ivret.baselines.make_bivae_on_v(e1, e2, z_dim, **kwargs)
        else:
            model = ivret.baselines.RbiVae(e1, e2, z_dim, **kwargs)
    return model.init(rng)


def _adam_entries(prefix, state):
    entries = collections.OrderedDict()
    for name in sorted(state.first_moment):
        entries['{}.m/{}'.format(prefix, name)] = state.first_moment[name]
        entries['{}.v/{}'.format(prefix, name)] = state.second_moment[name]
    return entries


def _require_keys(meta, keys, what, path=None):
    missing = [k for k in keys if not isinstance(meta, dict) or k not in meta]
    if missing:
        raise ivret.container.FormatError('checkpoint {} lacks {}'.format(what, ', '.join(missing)),
                                          path=path)


def _adam_meta(state):
    return {'step_count': state.step_count, 'learning_rate': state.learning_rate,
            'beta1': state.beta1, 'beta2': state.beta2, 'epsilon': state.epsilon}


def save_model(path, model, rc, epoch, history, state=None, disc_state=None):
    meta = {'kind': model.kind, 'dataset': rc.dataset, 'epoch': epoch,
            'rng': {'seed': rc.seed, 'stream': TRAIN_STREAM}, 'history': history}
    entries = collections.OrderedDict([('config', rc.snapshot())])
    for name, p in model.named_parameters():
        entries['param/' + name] = p.data
    if state is not None:
        meta['adam'] = _adam_meta(state)
        entries.update(_adam_entries('adam', state))
    if disc_state is not None:
        meta['disc_adam'] = _adam_meta(disc_state)
        entries.update(_adam_entries('disc_adam', disc_state))
    entries['meta'] = yaml.safe_dump(meta, default_flow_style=False, sort_keys=True)
    ivret.container.save_checkpoint(path, entries)
    return path


def _restore_adam(entries, prefix, meta, path=None):
    if meta is None:
        return None
    _require_keys(meta, ADAM_KEYS, prefix, path)
    state = nk.AdamState(meta['learning_rate'], meta['beta1'], meta['beta2'], meta['epsilon'])
    state.step_count = meta['step_count']
    m_key, v_key = prefix + '.m/', prefix + '.v/'
    for key, value in entries.items():
        if key.startswith(m_key):
            state.first_moment[key[len(m_key):]] = value
        elif key.startswith(v_key):
            state.second_moment[key[len(v_key):]] = value
    return state


class Restored(object):
    def __init__(self, model, rc, meta, state, disc_state):
        self.model = model
        self.rc = rc
        self.meta = meta
        self.state = state
        self.disc_state = disc_state


def params_of(entries):
    return dict((k[len('param/'):], v) for k, v in entries.items() if k.startswith('param/'))


def load_model(path):
    entries = ivret.container.load_checkpoint(path)
    if 'config' not in entries or 'meta' not in entries:
        raise ivret.container.FormatError('checkpoint lacks config or meta entries', path=path)
    rc = ivret.cfg.RunConfig.from_snapshot(entries['config'])
    meta = yaml.safe_load(entries['meta'])
    _require_keys(meta, META_KEYS, 'meta', path)
    model = build_model(rc, nk.Rng(rc.seed).derive(INIT_STREAM))
    model.load_arrays(params_of(entries))
    return Restored(model, rc, meta,
                    _restore_adam(entries, 'adam', meta.get('adam'), path),
                    _restore_adam(entries, 'disc_adam', meta.get('disc_adam'), path))


def init_embedders(model, path):
    """warm start ``e1``/``e2`` from a Cos-Sim-LVM checkpoint"""
    params = params_of(ivret.container.load_checkpoint(path))
    model.e1.load_arrays(params, 'e1.')
    model.e2.load_arrays(params, 'e2.')
    LOG.info('initialised embedders from %s', path)


def fit(model, rc, dataset, rng, state, disc_state, start_epoch=0, history=None):
    schedule = rc.schedule()
    if rc.model == 'rivae':
        return ivret.rivae.train(model, dataset, schedule, rng, rc.weights(), state,
                                 start_epoch, history)
    if rc.model == 'cossim_lvm':
        return ivret.baselines.cossim_train(
            model, dataset, schedule, rng, rc.get('baselines', 'embedder_fraction', 0.5),
            state, start_epoch, history)
    return ivret.baselines.rbivae_train(model, dataset, schedule, rng, rc.weights(), state,
                                        disc_state, start_epoch, history)


class LossLog(object):
    """appends one csv row per finished epoch"""

    def __init__(self, path, columns, config_text, history=()):
        self.path = path
        self.columns = ['epoch', 'stage', 'lr'] + list(columns)
        with open(path, 'w') as f:
            for line in config_text.splitlines():
                f.write('# {}\n'.format(line))
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(self.columns)
            for row in history:
                writer.writerow(self._cells(row))

    def _cells(self, row):
        return [repr(row[c]) if isinstance(row[c], float) else row[c] for c in self.columns]

    def __call__(self, epoch, stage, row, model, state):
        with open(self.path, 'a') as f:
            csv.writer(f, lineterminator='\n').writerow(self._cells(row))


def run_training(rc, resume=None, init_from=None):
    """train ``rc.model`` on the training split; returns ``(model, run dir)``"""
    train_set = load_split(rc, 'train')
    directory = _makedirs(run_dir(rc))
    snapshot = rc.snapshot()
    with open(os.path.join(directory, 'config.yml'), 'w') as f:
        f.write(snapshot)

    base = nk.Rng(rc.seed)
    start_epoch, history = 0, []
    state = disc_state = None
    if resume:
        restored = load_model(resume)
        if restored.meta['dataset'] != rc.dataset or restored.meta['kind'] != rc.model:
            raise nk.ContractError('checkpoint {} holds a {} model of {}, not {} of {}'.format(
                resume, restored.meta['kind'], restored.meta['dataset'], rc.model, rc.dataset))
        model, state, disc_state = restored.model, restored.state, restored.disc_state
        start_epoch, history = restored.meta['epoch'], restored.meta['history']
        LOG.info('resuming %s at epoch %d', resume, start_epoch)
    else:
        model = build_model(rc, base.derive(INIT_STREAM))
        if init_from:
            init_embedders(model, init_from)
    schedule = rc.schedule()
    state = state or nk.AdamState(schedule.learning_rate)
    if rc.model in ('rbivae', 'bivae_on_v'):
        disc_state = disc_state or nk.AdamState(schedule.learning_rate)

    loss_log = LossLog(os.path.join(directory, 'losses.csv'), LOSS_COLUMNS[rc.model],
                       snapshot, history)
    progress = list(history)

    def on_epoch(epoch, stage, row, model, state):
        progress.append(row)
        if epoch + 1 in schedule.decay_epochs and epoch + 1 < schedule.epochs:
            save_model(os.path.join(directory, 'checkpoint-e{:04d}.ivc'.format(epoch + 1)),
                       model, rc, epoch + 1, progress, state, disc_state)

    def on_diverged(epoch, last_good_epoch, model, error):
        path = os.path.join(directory, 'checkpoint-lastgood.ivc')
        save_model(path, model, rc, last_good_epoch + 1, progress, state, disc_state)
        print('training diverged in epoch {}: {}; last good checkpoint: {}'.format(
            epoch, error, path), file=sys.stderr)

    with ivret.rivae.EPOCH_END.listening(loss_log), \
            ivret.rivae.EPOCH_END.listening(on_epoch), \
            ivret.rivae.DIVERGED.listening(on_diverged):
        result = fit(model, rc, train_set, base.derive(TRAIN_STREAM), state, disc_state,
                     start_epoch, history)
    final = save_model(os.path.join(directory, 'checkpoint-final.ivc'), model, rc,
                       result.epoch, result.history, result.state, disc_state)
    print('trained {} on {}: {}'.format(rc.model, rc.dataset, final))
    return model, directory


def run_eval(rc, model, directory, dump_ranks=False):
    test_set = load_split(rc, 'test')
    report = ivret.retrieval.evaluate(
        model, test_set, db_size=rc.get('retrieval', 'db_size', 1000),
        trials=rc.get('retrieval', 'trials', 10), rng=nk.Rng(rc.seed).derive(EVAL_STREAM),
        mode=rc.get('retrieval', 'mode', 'sample'))
    ivret.retrieval.write_json(os.path.join(directory, 'report.json'), report, rc.as_dict())
    ivret.retrieval.write_csv(os.path.join(directory, 'report.csv'), report, rc.snapshot())
    if dump_ranks:
        ivret.retrieval.write_ranks(os.path.join(directory, 'ranks.csv'), report)
    return report


def _checkpoint_for(rc, args):
    path = args.checkpoint or os.path.join(run_dir(rc), 'checkpoint-final.ivc')
    restored = load_model(path)
    if restored.meta['dataset'] != rc.dataset:
        raise nk.ContractError('checkpoint {} was trained on {}, not {}'.format(
            path, restored.meta['dataset'], rc.dataset))
    return restored, os.path.dirname(os.path.abspath(path))


# commands

@command
def generate(args):
    """Generate (or ingest) a dataset"""
    rc = make_config(args)
    data = rc.section('datagen')
    rng = nk.Rng(rc.seed).derive(DATA_STREAM)
    if rc.dataset == 'synth':
        spec = ivret.datagen.SynthSpec(**dict((k, data[k]) for k in (
            'shared_dim', 'private_dim', 'ambient_dim', 'hidden', 'n_train', 'n_test') if k in data))
        splits = [ivret.datagen.synth_generate(spec, rng, s) for s in ('train', 'test')]
    elif rc.dataset == 'sprites':
        spec = ivret.datagen.SpritesSpec(**dict((k, data[k]) for k in (
            'image_size', 'n_x', 'n_y', 'half_widths', 'aspect', 'position_range', 'n_test')
            if k in data))
        full = ivret.datagen.sprites_generate(spec)
        splits = list(ivret.datagen.split(full, spec.n_test, rng))
    else:
        if not data.get('idx_dir'):
            raise ivret.cfg.ConfigError('split_mnist needs --idx-dir (or datagen.idx_dir)')
        spec = ivret.datagen.SplitMnistSpec(data['idx_dir'], data.get('split_column', 14))
        splits = [ivret.datagen.split_mnist_load(spec, s) for s in ('train', 'test')]

    _makedirs(os.path.join(out_dir(rc), 'data'))
    for dataset in splits:
        path = data_path(rc, dataset.split)
        ivret.datagen.save(dataset, path)
        print('{}: {} pairs, x1 {}, x2 {}, {} factors, seed {}'.format(
            path, len(dataset), dataset.x1.shape[1:], dataset.x2.shape[1:],
            dataset.factors.shape[1], rc.seed))


@command
def train(args):
    """Train a model with the two-stage schedule"""
    rc = make_config(args)
    run_training(rc, resume=args.checkpoint, init_from=args.init_embedders)


@command
def eval_(args):
    """Evaluate retrieval over repeated random search sets"""
    rc = make_config(args)
    restored, directory = _checkpoint_for(rc, args)
    report = run_eval(rc, restored.model, directory, args.dump_ranks)
    print(ivret.template.render('retrieval.txt', dataset=rc.dataset,
                                model=restored.meta['kind'], report=report), end='')


@command
def probe(args):
    """Latent traversal with disentanglement or digit-transition metrics"""
    rc = make_config(args)
    restored, directory = _checkpoint_for(rc, args)
    test_set = load_split(rc, 'test')
    p = rc.section('probe')
    spec = ivret.probe.TraversalSpec(p.get('n_points', 100), p.get('k', 10.0), p.get('n_refs', 20))
    digits = rc.dataset == 'split_mnist'
    report, table, traversals = ivret.probe.probe(
        restored.model, test_set, spec, nk.Rng(rc.seed).derive(PROBE_STREAM),
        db_size=p.get('db_size'), columns=p.get('factor_columns'),
        alpha=p.get('alpha', 10.0), digits=digits)
    snapshot = rc.snapshot()
    if digits:
        ivret.probe.write_table(os.path.join(directory, 'transitions.csv'), table.t,
                                ivret.probe.pair_labels(), snapshot)
    else:
        ivret.probe.write_table(os.path.join(directory, 'correlation.csv'), table.c,
                                table.factor_names, snapshot)
    ivret.probe.write_traversals(os.path.join(directory, 'traversals.csv'), traversals)
    with open(os.path.join(directory, 'probe.json'), 'w') as f:
        json.dump(dict(report, config=rc.as_dict()), f, indent=2, sort_keys=True)
        f.write('\n')
    print(ivret.template.render('probe.txt', dataset=rc.dataset,
                                model=restored.meta['kind'], report=report), end='')


@command
def ablate(args):
    """Train and evaluate with and without the embedder regularizer"""
    rc = make_config(args)
    if not rc.get('train', 'lambda_reg'):
        raise ivret.cfg.ConfigError('ablate needs a positive train.lambda_reg to compare against 0')
    rows = []
    for label, lambda_reg in (('Yes', rc.get('train', 'lambda_reg')), ('No', 0.0)):
        run_rc = ivret.cfg.RunConfig.from_snapshot(rc.snapshot())
        run_rc.set('train', 'lambda_reg', lambda_reg)
        model, directory = run_training(run_rc)
        rows.append((label, run_eval(run_rc, model, directory)))
    table = dict((label, report.as_dict()) for label, report in rows)
    directory = _makedirs(os.path.join(out_dir(rc), 'runs'))
    name = '{}-{}-ablation'.format(rc.dataset, rc.model)
    with open(os.path.join(directory, name + '.json'), 'w') as f:
        json.dump({'Reg': table, 'config': rc.as_dict()}, f, indent=2, sort_keys=True)
        f.write('\n')
    with open(os.path.join(directory, name + '.csv'), 'w') as f:
        for line in rc.snapshot().splitlines():
            f.write('# {}\n'.format(line))
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['Reg', 'R@1', 'R@5', 'R@10', 'Med-R'])
        for label, report in rows:
            writer.writerow([label] + ['{:.4f}'.format(report.r_at[k]) for k in (1, 5, 10)]
                            + ['{:.2f}'.format(report.med_r)])
    print(ivret.template.render('ablation.txt', dataset=rc.dataset, model=rc.model,
                                rows=rows), end='')


@command
def fetch(args):
    """Download the four MNIST IDX files from a user supplied base URL"""
    _makedirs(args.idx_dir)
    client = tornado.httpclient.HTTPClient()
    try:
        for name in MNIST_URL_FILES:
            url = '{}/{}.gz'.format(args.url.rstrip('/'), name)
            LOG.info('fetching %s', url)
            response = client.fetch(url)
            path = os.path.join(args.idx_dir, name + '.gz')
            with open(path, 'wb') as f:
                f.write(response.body)
            print('{}: {} bytes'.format(path, len(response.body)))
    finally:
        client.close()


def _add_run_arguments(parser, model=True):
    parser.add_argument('-c', '--config', action='append',
                        help='Additional config to load (repeatable)')
    parser.add_argument('--dataset', required=True, choices=ivret.cfg.DATASETS)
    if model:
        parser.add_argument('--model', default='rivae', choices=ivret.cfg.MODELS)
    parser.add_argument('--seed', type=int, help='Seed of every random stream of the run')
    parser.add_argument('--out-dir', help='Root directory of data and run artifacts')


_add_run_arguments(generate.parser, model=False)
generate.parser.add_argument('--idx-dir', help='Directory holding the MNIST IDX files')

_add_run_arguments(train.parser)
train.parser.add_argument('--epochs', type=int, help='Override the number of epochs')
train.parser.add_argument('--no-reg', action='store_true',
                          help='Disable the embedder regularizer (lambda_reg = 0)')
train.parser.add_argument('--checkpoint', help='Resume from this checkpoint')
train.parser.add_argument('--init-embedders',
                          help='Initialise e1/e2 from a Cos-Sim-LVM checkpoint')

for _cmd in (eval_, probe):
    _add_run_arguments(_cmd.parser)
    _cmd.parser.add_argument('--checkpoint', help='Checkpoint to load (default: final of the run)')
    _cmd.parser.add_argument('--no-reg', action='store_true',
                             help='Use the run trained without the regularizer')
    _cmd.parser.add_argument('--db-size', type=int, help='Items per random search set')
    _cmd.parser.add_argument('--trials', type=int, help='Number of random search sets')
eval_.parser.add_argument('--dump-ranks', action='store_true',
                          help='Write the per-query ranks to ranks.csv')

_add_run_arguments(ablate.parser)
ablate.parser.add_argument('--epochs', type=int, help='Override the number of epochs')
ablate.parser.add_argument('--db-size', type=int, help='Items per random search set')
ablate.parser.add_argument('--trials', type=int, help='Number of random search sets')

fetch.parser.add_argument('--url', required=True, help='Base URL of the IDX .gz files')
fetch.parser.add_argument('--idx-dir', required=True, help='Target directory')


def _add_config_defauts(config):
    config.setdefault('version', 1)
    config.setdefault('disable_existing_loggers', False)
    config.setdefault('formatters', {
        'standard': {
            'format': CONFIG_FORMATTER
        },
    })


def configure_logging_from_env():
    """
LOG_CONFIG Example:

handlers:
  file:
    class: logging.FileHandler
    filename: ivret.log
    formatter: standard

loggers:
  '':
    level: DEBUG
    handlers: ['file']
    """

    if 'LOG_CONFIG' in os.environ:
        print('using configuration from LOG_CONFIG', file=sys.stderr)
        log_config = yaml.safe_load(os.environ['LOG_CONFIG'])
        _add_config_defauts(log_config)
        logging.config.dictConfig(log_config)
    else:
        log_level = os.environ.get('LOG_LEVEL', 'INFO')
        log_level = getattr(logging, log_level)
        logging.basicConfig(level=log_level, format=CONFIG_FORMATTER)


def run(argv=None):
    """parse ``argv`` and run the command; returns the exit code"""
    argcomplete.autocomplete(ARG_PARSER)
    args = ARG_PARSER.parse_args(argv)
    if not hasattr(args, 'func'):
        ARG_PARSER.print_help()
        return EXIT_CONFIG
    try:
        args.func(args)
    except ivret.cfg.ConfigError as e:
        LOG.error('configuration error: %s', e)
        return EXIT_CONFIG
    except ivret.rivae.DivergenceError as e:
        LOG.error('training diverged in epoch %s (last good epoch %s): %s',
                  e.epoch, e.last_good_epoch, e)
        return EXIT_DIVERGED
    except (ValueError, OSError) as e:
        LOG.error('%s: %s', type(e).__name__, e)
        LOG.debug('details', exc_info=True)
        return EXIT_DATA
    return EXIT_OK


def main():
    """Entry point of ivret cli"""
    configure_logging_from_env()
    return run()
