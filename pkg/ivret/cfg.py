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

"""Load yaml based configuration

Config files map categories to flat ``{key: value}`` mappings.  A category
``train.sprites`` refines ``train`` for the Sprites dataset, a category
``baselines.rbivae`` refines ``baselines`` for that model.  :func:`load`
folds the refinements of every file into its plain categories before the
files are merged, so later files win over earlier ones.
"""
from __future__ import absolute_import, division, print_function, with_statement

import copy
import os
import logging

import yaml

import ivret.rivae


LOG = logging.getLogger(__name__)
DATASETS = ('synth', 'sprites', 'split_mnist')
MODELS = ('rivae', 'rbivae', 'bivae_on_v', 'cossim_lvm')
# configuration a model inherits from another model before its own
MODEL_BASES = {'bivae_on_v': 'rbivae'}
FORMAT_MESSAGE = 'Config files must be in format {category: {key: value, ...}, ...}'


class ConfigError(ValueError):
    pass


def read_file(paths):
    """read config from path or list of paths

    :param str|list[str] paths: path or list of paths
    :return dict: loaded and merged config
    """

    if isinstance(paths, str):
        paths = [paths]

    re = {}
    for path in paths:
        with open(path) as f:
            cfg = yaml.safe_load(f)
        merge(re, cfg or {})

    return re


def merge(re, cfg):
    if not isinstance(cfg, dict):
        raise ConfigError(FORMAT_MESSAGE)
    for category, category_data in cfg.items():
        if isinstance(category_data, dict):
            re.setdefault(category, {})
            for key, value in category_data.items():
                re[category][key] = value
        else:
            raise ConfigError(FORMAT_MESSAGE)


def get_config_paths(module_name='ivret'):
    cfg_name = module_name + '.yml'
    paths = [
        os.path.join(os.path.dirname(os.path.abspath(__file__)), cfg_name),
        '/etc/' + cfg_name,
        os.path.expanduser('~/.') + cfg_name
    ]
    if 'VIRTUAL_ENV' in os.environ:
        paths.append(os.environ['VIRTUAL_ENV'] + '/etc/' + cfg_name)
    return paths


def read_configs(module_name='ivret', extra_configs=None):
    """read every config file found on the search path

    :return list[dict]: one config per file, in search path order
    """
    layers = []
    paths = get_config_paths(module_name)
    if extra_configs:
        if not isinstance(extra_configs, list):
            extra_configs = [extra_configs]
        for path in extra_configs:
            if not os.path.exists(path):
                raise ConfigError('config file {} does not exist'.format(path))
        paths.extend(extra_configs)

    for path in paths:
        if os.path.exists(path):
            LOG.info('reading config: ' + path)
            try:
                layers.append(read_file(path))
            except yaml.YAMLError as e:
                raise ConfigError('{} is not valid YAML: {}'.format(path, e))
    return layers


def resolve(raw, dataset, model):
    """fold ``<category>.<dataset>`` and ``<category>.<model>`` into ``<category>``"""
    refinements = [dataset] + ([MODEL_BASES[model]] if model in MODEL_BASES else []) + [model]
    plain = [c for c in raw if '.' not in c]
    refined = set(c.split('.', 1)[0] for c in raw if '.' in c)
    out = {}
    for category in sorted(set(plain) | refined):
        section = dict(raw.get(category, {}))
        for suffix in refinements:
            section.update(raw.get('{}.{}'.format(category, suffix), {}))
        out[category] = section
    return out


class RunConfig(object):
    """the resolved configuration of one run

    :param dict raw: merged config files, dotted categories included
    """

    def __init__(self, raw, dataset, model='rivae'):
        if dataset not in DATASETS:
            raise ConfigError('unknown dataset "{}" (one of {})'.format(dataset, ', '.join(DATASETS)))
        if model not in MODELS:
            raise ConfigError('unknown model "{}" (one of {})'.format(model, ', '.join(MODELS)))
        self.dataset = dataset
        self.model = model
        self.data = resolve(raw, dataset, model)

    def section(self, name):
        return self.data.setdefault(name, {})

    def get(self, category, key, default=None):
        return self.data.get(category, {}).get(key, default)

    def set(self, category, key, value):
        """command line override; ``None`` leaves the configured value"""
        if value is not None:
            self.section(category)[key] = value

    def _require(self, category, key):
        value = self.get(category, key)
        if value is None:
            raise ConfigError('missing setting {}.{}'.format(category, key))
        return value

    @property
    def seed(self):
        return int(self.get('run', 'seed', 0))

    @property
    def dims(self):
        """``(dim_v, z_dim)``"""
        dim_v, z_dim = self._require('dims', 'dim_v'), self._require('dims', 'z_dim')
        if dim_v < 1 or z_dim < 1:
            raise ConfigError('dims must be positive, got dim_v={} z_dim={}'.format(dim_v, z_dim))
        return int(dim_v), int(z_dim)

    def schedule(self):
        t = self.section('train')
        try:
            schedule = ivret.rivae.Schedule(
                batch_size=self._require('train', 'batch_size'),
                epochs=self._require('train', 'epochs'),
                learning_rate=self._require('train', 'learning_rate'),
                decay_epochs=t.get('decay_epochs', ()),
                decay_factor=t.get('decay_factor', 0.5),
                joint_start=self._require('train', 'joint_start'))
        except (TypeError, ValueError) as e:
            raise ConfigError('invalid train settings: {}'.format(e))
        if schedule.epochs < 1 or schedule.learning_rate <= 0:
            raise ConfigError('epochs and learning_rate must be positive')
        return schedule

    def weights(self):
        try:
            return ivret.rivae.LossWeights(
                lambda_retr=self.get('train', 'lambda_retr', 1.0),
                lambda_reg=self.get('train', 'lambda_reg', 0.1),
                noise_magnitude=self.get('train', 'noise_magnitude', 1e-3))
        except (TypeError, ValueError) as e:
            raise ConfigError('invalid loss weights: {}'.format(e))

    def validate(self):
        self.dims
        self.schedule()
        self.weights()
        eta = self.get('rivae', 'eta', 1e-3)
        if not eta > 0:
            raise ConfigError('rivae.eta must be positive, got {}'.format(eta))
        if self.get('retrieval', 'mode', 'sample') not in ('sample', 'mean'):
            raise ConfigError('retrieval.mode must be "sample" or "mean"')
        return self

    def as_dict(self):
        out = copy.deepcopy(self.data)
        out['run'] = dict(out.get('run', {}), dataset=self.dataset, model=self.model)
        return out

    def snapshot(self):
        """the effective configuration as YAML text"""
        return yaml.safe_dump(self.as_dict(), default_flow_style=False, sort_keys=True)

    @classmethod
    def from_snapshot(cls, text):
        data = yaml.safe_load(text)
        if not isinstance(data, dict):
            raise ConfigError('config snapshot is not a mapping')
        run = data.get('run', {})
        return cls(data, run.get('dataset'), run.get('model', 'rivae'))


def load(dataset, model='rivae', extra_configs=None):
    """the configuration of one run

    Refinements are folded in per file before the files are merged, so a plain
    ``train`` category of a later file beats ``train.sprites`` of an earlier one.
    """
    re = {}
    for raw in read_configs('ivret', extra_configs):
        merge(re, resolve(raw, dataset, model))
    return RunConfig(re, dataset, model)
