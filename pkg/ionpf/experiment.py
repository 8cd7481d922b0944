"""
Experiment files.

An experiment is one human-editable YAML file with a section per component
config plus the output directory and the seed:

.. code:: yaml

    model:
        horizon: 50
    filter:
        num_particles: 32
        num_theta: 128
    policy:
        kind: gru
    trainer:
        iterations: 25
    eval:
        rollouts: 16
    out: ./runs/pendulum
    seed: 0

Missing sections and keys take their defaults. Unknown keys are errors that
name the offending ``section.key``, and YAML syntax errors report their line.

Example:
    >>> from ionpf.experiment import *  # NOQA
    >>> exp = ExperimentConfig.from_dict({'model': {'T': 5}, 'seed': 3})
    >>> assert exp.model.horizon == 5 and exp.seed == 3
    >>> import pytest
    >>> with pytest.raises(ConfigError) as info:
    >>>     ExperimentConfig.from_dict({'filter': {'num_partcles': 4}})
    >>> assert 'filter.num_partcles' in str(info.value)
"""
import scriptconfig as scfg
import ubelt as ub
import yaml

from ionpf.evaluation import EvalConfig
from ionpf.exceptions import ConfigError
from ionpf.io_npf import RunConfig
from ionpf.model import PendulumConfig, PendulumModel
from ionpf.policy import PolicyArchConfig, coerce_policy
from ionpf.trainer import TrainerConfig

SECTIONS = {
    'model': PendulumConfig,
    'filter': RunConfig,
    'policy': PolicyArchConfig,
    'trainer': TrainerConfig,
    'eval': EvalConfig,
}
TOP_LEVEL = ['out', 'seed']


def key_map(config_cls):
    """ Maps canonical keys and aliases of a DataConfig class to canonical keys """
    mapping = {}
    for key, value in config_cls.__default__.items():
        mapping[key] = key
        alias = getattr(value, 'alias', None)
        if alias:
            for name in ([alias] if isinstance(alias, str) else alias):
                mapping[name] = key
    return mapping


def build_section(name, data):
    """
    Build one section config, naming ``section.key`` in errors. String
    values are cast with the type of the declared value, so ``1e-3`` (which
    YAML reads as text) becomes a float.
    """
    config_cls = SECTIONS[name]
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError('section {!r} must be a mapping, got {}'.format(name, type(data).__name__))
    mapping = key_map(config_cls)
    unknown = sorted(set(data) - set(mapping))
    if unknown:
        paths = ', '.join('{}.{}'.format(name, key) for key in unknown)
        raise ConfigError('unknown config key(s): {}'.format(paths))
    kwargs = {}
    try:
        for key, value in data.items():
            template = config_cls.__default__[mapping[key]]
            if isinstance(template, scfg.Value) and isinstance(value, str) and template.type is not None:
                value = template.cast(value)
            kwargs[mapping[key]] = value
        return config_cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as ex:
        raise ConfigError('invalid section {!r}: {}'.format(name, ex))


class ExperimentConfig(ub.NiceRepr):
    """
    All settings of one experiment.

    Attributes:
        model (PendulumConfig):
        filter (RunConfig):
        policy (PolicyArchConfig):
        trainer (TrainerConfig):
        eval (EvalConfig):
        out (str): output directory
        seed (int): master seed
    """

    def __init__(self, model=None, filter=None, policy=None, trainer=None, eval=None,
                 out='.', seed=0):
        self.model = model if model is not None else PendulumConfig()
        self.filter = filter if filter is not None else RunConfig()
        self.policy = policy if policy is not None else PolicyArchConfig()
        self.trainer = trainer if trainer is not None else TrainerConfig()
        self.eval = eval if eval is not None else EvalConfig()
        self.out = out
        self.seed = int(seed)

    def __nice__(self):
        return 'out={}, seed={}'.format(self.out, self.seed)

    @classmethod
    def from_dict(cls, data):
        data = {} if data is None else data
        if not isinstance(data, dict):
            raise ConfigError('an experiment file must contain a mapping at the top level')
        unknown = sorted(set(data) - set(SECTIONS) - set(TOP_LEVEL))
        if unknown:
            raise ConfigError('unknown top-level config key(s): {}'.format(', '.join(unknown)))
        sections = {name: build_section(name, data.get(name)) for name in SECTIONS}
        seed = data.get('seed', 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError('seed must be an integer, got {!r}'.format(seed))
        return cls(out=data.get('out', '.'), seed=seed, **sections)

    @classmethod
    def load(cls, fpath):
        """
        Raises:
            FileNotFoundError: if the file does not exist
            ConfigError: on YAML syntax errors or invalid values
        """
        fpath = ub.Path(fpath)
        if not fpath.exists():
            raise FileNotFoundError('config file {} does not exist'.format(fpath))
        text = fpath.read_text()
        try:
            data = yaml.load(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as ex:
            mark = getattr(ex, 'problem_mark', None)
            where = '' if mark is None else ' at line {}, column {}'.format(mark.line + 1, mark.column + 1)
            raise ConfigError('cannot parse {}{}: {}'.format(fpath, where, getattr(ex, 'problem', ex)))
        return cls.from_dict(data)

    def to_dict(self):
        data = {name: dict(getattr(self, name).to_dict()) for name in SECTIONS}
        data['out'] = str(self.out)
        data['seed'] = self.seed
        return data

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def dump(self, fpath):
        fpath = ub.Path(fpath)
        fpath.parent.ensuredir()
        fpath.write_text(self.dumps())
        return fpath

    def build_model(self):
        return PendulumModel(self.model)

    def build_policy(self):
        return coerce_policy(self.policy)
