"""
ionpf
=====

Sequential Bayesian experimental design with an inside-out nested particle
filter.

The engine alternates between choosing a design with a learned stochastic
policy and updating beliefs about the parameters of a dynamical system. Each
outer particle is one history of states and designs; each carries its own
particle cloud over the parameters, so the outer weights use the marginal
transition density and need no closed-form posterior.

Main pieces:

    * :mod:`ionpf.model` - the stochastic pendulum and its conjugate oracle
    * :mod:`ionpf.policy` - recurrent, linear and random design policies
    * :mod:`ionpf.theta_filter` - the inner parameter filters
    * :mod:`ionpf.io_npf` - the nested filter over histories
    * :mod:`ionpf.smoother` - backward sampling over a frozen history
    * :mod:`ionpf.trainer` - policy amortization by Markovian score climbing
    * :mod:`ionpf.evaluation` - EIG, sPCE, realized information gain, runtime
    * :mod:`ionpf.cli` - the ``ionpf`` command line

Example:
    >>> import ionpf
    >>> model = ionpf.PendulumModel(horizon=3)
    >>> policy = ionpf.coerce_policy(kind='random')
    >>> params = policy.init_params()
    >>> cfg = ionpf.RunConfig(num_particles=4, num_theta=8)
    >>> history = ionpf.run_filter(model, policy, params, cfg, ionpf.RngStream(0))
    >>> assert len(history.frames) == 4
"""

__autogen__ = """
Ignore:
    mkinit ~/code/ionpf/ionpf/__init__.py --nomods --relative --diff
    mkinit ~/code/ionpf/ionpf/__init__.py --nomods --relative -w
"""

__version__ = '0.1.0'

__submodules__ = {
    'core': ['RngStream', 'LogWeights'],
    'exceptions': None,
    'model': ['PendulumConfig', 'PendulumModel', 'GaussianBelief'],
    'policy': ['PolicyArchConfig', 'coerce_policy', 'save_policy', 'load_policy'],
    'io_npf': ['RunConfig', 'NestedFilter', 'run_filter', 'load_history'],
    'smoother': ['backward_sample', 'degeneracy_report'],
    'trainer': ['TrainerConfig', 'train'],
    'evaluation': ['EvalConfig', 'evaluate', 'runtime_benchmark'],
    'experiment': ['ExperimentConfig'],
}

from .core import (RngStream, LogWeights,)
from .exceptions import (IonpfError, ConfigError, ArchitectureMismatchError,
                         DataError, CheckpointError, SnapshotVersionError,
                         NumericalError, DegenerateWeightsError,
                         DegenerateCloudError, FilterCollapseError,
                         NonFiniteGradientError,)
from .model import (PendulumConfig, PendulumModel, GaussianBelief,)
from .policy import (PolicyArchConfig, coerce_policy, save_policy, load_policy,)
from .io_npf import (RunConfig, NestedFilter, run_filter, load_history,)
from .smoother import (backward_sample, degeneracy_report,)
from .trainer import (TrainerConfig, train,)
from .evaluation import (EvalConfig, evaluate, runtime_benchmark,)
from .experiment import (ExperimentConfig,)

__all__ = ['ArchitectureMismatchError', 'CheckpointError', 'ConfigError',
           'DataError', 'DegenerateCloudError', 'DegenerateWeightsError',
           'EvalConfig', 'ExperimentConfig', 'FilterCollapseError',
           'GaussianBelief', 'IonpfError', 'LogWeights', 'NestedFilter',
           'NonFiniteGradientError', 'NumericalError', 'PendulumConfig',
           'PendulumModel', 'PolicyArchConfig', 'RngStream', 'RunConfig',
           'SnapshotVersionError', 'TrainerConfig', 'backward_sample',
           'coerce_policy', 'degeneracy_report', 'evaluate', 'load_history',
           'load_policy', 'run_filter', 'runtime_benchmark', 'save_policy',
           'train']
