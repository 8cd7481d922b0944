"""
The ``ionpf`` command line.

Four commands share one experiment file (see :mod:`ionpf.experiment`):

    * ``train`` - amortize a policy by score climbing, write the checkpoint,
      the training log and a snapshot of a final filter run
    * ``eval`` - EIG, sPCE and realized information gain of a checkpoint or
      of the random policy
    * ``bench`` - runtime of one amortization iteration per strategy and
      horizon
    * ``diagnose`` - path degeneracy of a saved filter history, with and
      without backward sampling

Every command returns 0 on success, 2 on input errors, 3 on data errors and
4 on numeric failures.

CommandLine:
    ionpf train --config=configs/pendulum.yaml --out=runs/pendulum
    ionpf eval --config=configs/pendulum.yaml --checkpoint=runs/pendulum/policy.json
    ionpf eval --strategy=random --out=runs/random
    ionpf bench --config=configs/pendulum.yaml --threads=4
    ionpf diagnose runs/pendulum/history.npz

Example:
    >>> from ionpf.cli import *  # NOQA
    >>> import ubelt as ub
    >>> dpath = ub.Path.appdir('ionpf', 'tests', 'doctest', 'cli').ensuredir()
    >>> ret = DiagnoseCLI.main(cmdline=0, snapshot=dpath / 'does-not-exist.npz', verbose=0)
    >>> assert ret == 2
"""
import functools
import sys

import scriptconfig as scfg
import ubelt as ub

from ionpf import __version__
from ionpf.core import RngStream
from ionpf.evaluation import BENCH_STRATEGIES, EvalConfig, evaluate, runtime_benchmark
from ionpf.exceptions import ConfigError, IonpfError
from ionpf.experiment import ExperimentConfig
from ionpf.io_npf import RunConfig, load_history, run_filter
from ionpf.policy import coerce_policy, load_policy, save_policy
from ionpf.smoother import backward_sample_many, degeneracy_report
from ionpf.trainer import TrainerConfig, train
from ionpf.util_records import write_csv, write_json

CLI_STRATEGIES = ['npf', 'npf-bs', 'ibis', 'exact', 'random']


def report_errors(func):
    """
    Turn ionpf errors and missing files into an error message and the exit
    code of the error.
    """
    @functools.wraps(func)
    def _wrapper(*args, **kwargs):
        try:
            ret = func(*args, **kwargs)
        except (IonpfError, FileNotFoundError) as ex:
            print('ERROR: {}'.format(ex), file=sys.stderr)
            for note in getattr(ex, '__notes__', []):
                print('    {}'.format(note), file=sys.stderr)
            return getattr(ex, 'exit_code', 2)
        return 0 if ret is None else ret
    return _wrapper


class CommonOptions(scfg.DataConfig):
    seed = scfg.Value(None, type=int, help='master seed, overrides the seed of the experiment file')
    threads = scfg.Value(None, type=int, help='worker threads, results do not depend on this')
    out = scfg.Value(None, help='output directory, overrides the one of the experiment file')
    verbose = scfg.Value(1, type=int, help='verbosity')


class ExperimentOptions(CommonOptions):
    config = scfg.Value(None, help='path to a YAML experiment file, defaults are used when omitted')
    strategy = scfg.Value(None, type=str, choices=CLI_STRATEGIES, help=ub.paragraph(
        '''
        overrides the theta strategy. ``npf-bs`` is the jitter strategy with
        backward sampling, ``random`` selects the untrained random policy.
        '''))


def load_experiment(config):
    """
    Read the experiment file of a command and apply its overrides.

    Returns:
        ExperimentConfig
    """
    if config.config is None:
        exp = ExperimentConfig()
    else:
        exp = ExperimentConfig.load(config.config)
    if config.seed is not None:
        exp.seed = int(config.seed)
    if config.out is not None:
        exp.out = config.out
    if config.threads is not None:
        if config.threads < 1:
            raise ConfigError('--threads must be at least 1, got {}'.format(config.threads))
        exp.filter = RunConfig(**(ub.udict(exp.filter.to_dict()) | {'threads': config.threads}))
    return exp


def strategy_settings(exp, strategy=None):
    """
    Filter and trainer settings of a command line strategy.

    Returns:
        Tuple[RunConfig, TrainerConfig]
    """
    run_cfg, tcfg = exp.filter, exp.trainer
    if strategy is None:
        return run_cfg, tcfg
    if strategy == 'random':
        raise ConfigError('the random policy has no filter strategy')
    theta_strategy = 'npf' if strategy.startswith('npf') else strategy
    run_cfg = RunConfig(**(ub.udict(run_cfg.to_dict()) | {'strategy': theta_strategy}))
    tcfg = TrainerConfig(**(ub.udict(tcfg.to_dict()) | {
        'backward_sampling': strategy == 'npf-bs'}))
    return run_cfg, tcfg


class TrainCLI(ExperimentOptions):
    """
    Amortize a design policy by Markovian score climbing.

    Writes ``policy.json``, ``train_log.csv``, ``train_timing.csv``,
    ``history.npz`` and the resolved ``experiment.yaml`` to the output
    directory.
    """
    __command__ = 'train'

    @classmethod
    def main(cls, cmdline=1, **kwargs):
        """
        Example:
            >>> from ionpf.cli import *  # NOQA
            >>> dpath = ub.Path.appdir('ionpf', 'tests', 'doctest', 'cli_train').ensuredir()
            >>> fpath = dpath / 'config.yaml'
            >>> _ = fpath.write_text(ub.codeblock(
            >>>     '''
            >>>     model: {horizon: 3}
            >>>     filter: {num_particles: 4, num_theta: 8}
            >>>     policy: {kind: linear}
            >>>     trainer: {iterations: 2}
            >>>     '''))
            >>> ret = TrainCLI.main(cmdline=0, config=fpath, out=dpath, verbose=0)
            >>> assert ret == 0
            >>> assert (dpath / 'policy.json').exists()
        """
        return _train_main(cls, cmdline, kwargs)


@report_errors
def _train_main(cls, cmdline, kwargs):
    config = cls.cli(cmdline=cmdline, data=kwargs, special_options=False)
    if config.verbose > 1:
        print('config = ' + ub.urepr(dict(config), nl=1))
    exp = load_experiment(config)
    run_cfg, tcfg = strategy_settings(exp, config.strategy)
    model = exp.build_model()
    policy = exp.build_policy()
    rng = RngStream(exp.seed)
    params = policy.init_params(rng.child(0))
    params, log = train(model, policy, params, run_cfg, tcfg, rng.child(1), verbose=config.verbose)

    dpath = ub.Path(exp.out).ensuredir()
    exp.dump(dpath / 'experiment.yaml')
    save_policy(dpath / 'policy.json', policy, params)
    log.dump(dpath / 'train_log.csv', dpath / 'train_timing.csv')
    history = run_filter(model, policy, params, run_cfg, rng.child(2), verbose=config.verbose)
    history.dump(dpath / 'history.npz')

    if log.rows:
        proxy = log.rows[-1]['eig_proxy']
    else:
        proxy = float(history.frames[-1].cum_reward.mean())
    print('final eig_proxy = {:.6f}'.format(proxy))
    if config.verbose:
        print('wrote results to {}'.format(dpath))
    return 0


class EvalCLI(ExperimentOptions):
    """
    Evaluate a trained policy checkpoint, or the random policy.

    Writes ``report.json`` and ``realized_ig.csv`` to the output directory.
    """
    __command__ = 'eval'
    checkpoint = scfg.Value(None, help='policy checkpoint written by the train command')

    @classmethod
    def main(cls, cmdline=1, **kwargs):
        return _eval_main(cls, cmdline, kwargs)


@report_errors
def _eval_main(cls, cmdline, kwargs):
    config = cls.cli(cmdline=cmdline, data=kwargs, special_options=False)
    exp = load_experiment(config)
    if config.strategy == 'random':
        policy = coerce_policy(kind='random')
        params = policy.init_params()
    else:
        if config.checkpoint is None:
            raise ConfigError('eval needs --checkpoint unless --strategy=random')
        # Only an explicit experiment file pins the architecture.
        arch = None if config.config is None else exp.policy
        policy, params = load_policy(config.checkpoint, arch=arch)
    eval_cfg = exp.eval
    if config.strategy not in {None, 'random'}:
        eig_strategy = 'npf' if config.strategy.startswith('npf') else config.strategy
        eval_cfg = EvalConfig(**(ub.udict(eval_cfg.to_dict()) | {'eig_strategy': eig_strategy}))
    model = exp.build_model()
    rng = RngStream(exp.seed)
    report = evaluate(model, policy, params, eval_cfg, rng, threads=exp.filter.threads,
                      verbose=config.verbose)
    report.meta['seed'] = exp.seed
    report.meta['eig_strategy'] = eval_cfg.eig_strategy
    report.meta['checkpoint'] = None if config.checkpoint is None else str(config.checkpoint)
    dpath = ub.Path(exp.out).ensuredir()
    report.dump(dpath)
    print('eig  = {:.4f} +- {:.4f}'.format(report.eig.mean, report.eig.std))
    print('spce = {:.4f} +- {:.4f}'.format(report.spce.mean, report.spce.std))
    print('realized_ig[T] = {:.4f}'.format(report.realized_ig.mean[-1]))
    return 0


class BenchCLI(ExperimentOptions):
    """
    Time one amortization iteration for every strategy and horizon of the
    ``eval`` section. Writes ``bench.csv`` and ``bench_exponents.csv``.
    """
    __command__ = 'bench'

    @classmethod
    def main(cls, cmdline=1, **kwargs):
        return _bench_main(cls, cmdline, kwargs)


@report_errors
def _bench_main(cls, cmdline, kwargs):
    config = cls.cli(cmdline=cmdline, data=kwargs, special_options=False)
    exp = load_experiment(config)
    if config.strategy is None:
        strategies = list(exp.eval.bench_strategies)
    elif config.strategy in BENCH_STRATEGIES:
        strategies = [config.strategy]
    else:
        raise ConfigError('cannot benchmark strategy {!r}'.format(config.strategy))
    policy = exp.build_policy()
    rng = RngStream(exp.seed)
    params = policy.init_params(rng.child(0))
    report = runtime_benchmark(exp.model, exp.filter, policy, params, rng.child(1),
                               horizons=exp.eval.horizons, strategies=strategies,
                               repeats=exp.eval.bench_repeats, verbose=config.verbose)
    dpath = report.dump(exp.out)
    print('exponents = ' + ub.urepr(report.exponents(), nl=1, precision=3))
    if config.verbose:
        print('wrote results to {}'.format(dpath))
    return 0


class DiagnoseCLI(CommonOptions):
    """
    Compare the path diversity of genealogy tracing with backward sampling on
    a saved filter history.

    Writes ``degeneracy.csv`` and ``backward_acceptance.json``.
    """
    __command__ = 'diagnose'
    snapshot = scfg.Value(None, position=1, help='history snapshot written by the train command')
    num_paths = scfg.Value(None, type=int, help='backward passes, defaults to the number of particles')

    @classmethod
    def main(cls, cmdline=1, **kwargs):
        return _diagnose_main(cls, cmdline, kwargs)


@report_errors
def _diagnose_main(cls, cmdline, kwargs):
    config = cls.cli(cmdline=cmdline, data=kwargs, special_options=False)
    if config.snapshot is None:
        raise ConfigError('diagnose needs a history snapshot')
    snapshot = ub.Path(config.snapshot)
    history = load_history(snapshot)
    seed = 0 if config.seed is None else config.seed
    threads = 1 if config.threads is None else config.threads
    if threads < 1:
        raise ConfigError('--threads must be at least 1, got {}'.format(threads))
    num = history.num_particles if config.num_paths is None else config.num_paths
    paths = backward_sample_many(history, RngStream(seed), num=num, threads=threads)
    report = degeneracy_report(history, paths)

    dpath = ub.Path(snapshot.parent if config.out is None else config.out).ensuredir()
    write_csv(dpath / 'degeneracy.csv', report.rows(),
              columns=['t', 'genealogy_unique', 'backward_unique'])
    num_proposals = sum(p.num_proposals for p in paths)
    num_accepted = sum(p.num_accepted for p in paths)
    summary = {
        'snapshot': str(snapshot),
        'seed': seed,
        'num_paths': num,
        'num_proposals': num_proposals,
        'num_accepted': num_accepted,
        'acceptance_rate': num_accepted / num_proposals if num_proposals else float('nan'),
        'genealogy_unique_t0': int(report.genealogy_unique[0]),
        'backward_unique_t0': int(report.backward_unique[0]),
    }
    write_json(dpath / 'backward_acceptance.json', summary)
    if config.verbose:
        print('summary = ' + ub.urepr(summary, nl=1, precision=4))
    return 0


class IonpfModalCLI(scfg.ModalCLI):
    """
    Sequential experimental design with the inside-out nested particle filter.
    """
    __version__ = __version__
    train = TrainCLI
    eval = EvalCLI
    bench = BenchCLI
    diagnose = DiagnoseCLI


def main(argv=None):
    return IonpfModalCLI.main(argv=argv)
