"""
Policy amortization by Markovian score climbing.

Every iteration runs one conditional sweep of the nested filter with the
current reference path pinned to slot 0, draws a new reference from the
sweep (backward sampling or genealogy tracing), estimates the score
``grad_phi log p_phi(z_{0:T})`` and takes a plain gradient ascent step.

With ``rao_blackwell`` the score averages the per-path scores of one path
per final particle, weighted by the final weights, instead of using the
single new reference.

Example:
    >>> from ionpf.trainer import *  # NOQA
    >>> from ionpf.io_npf import RunConfig
    >>> from ionpf.model import PendulumModel
    >>> from ionpf.policy import coerce_policy
    >>> from ionpf.core import RngStream
    >>> model = PendulumModel(horizon=3)
    >>> policy = coerce_policy(kind='linear')
    >>> params = policy.init_params(RngStream(0))
    >>> run_cfg = RunConfig(num_particles=4, num_theta=8)
    >>> tcfg = TrainerConfig(iterations=2)
    >>> final, log = train(model, policy, params, run_cfg, tcfg, RngStream(1))
    >>> assert len(log.rows) == 2
"""
import numpy as np
import scriptconfig as scfg
import ubelt as ub

from ionpf.exceptions import ConfigError, NonFiniteGradientError, add_exception_note
from ionpf.io_npf import NestedFilter, RunConfig, genealogy_trajectory
from ionpf.smoother import backward_sample, backward_sample_many
from ionpf.util_records import write_csv

LOG_COLUMNS = ['iteration', 'eig_proxy', 'log_evidence', 'grad_norm', 'acceptance_rate', 'step_size']
TIMING_COLUMNS = ['iteration', 'wall_time']


class TrainerConfig(scfg.DataConfig):
    """
    Markovian score climbing settings.
    """
    iterations = scfg.Value(25, type=int, help='number of score climbing iterations')
    learning_rate = scfg.Value(1e-3, type=float, alias=['lr'], help='gradient ascent step size')
    decay = scfg.Value(False, isflag=True, help='use the step size learning_rate / k at iteration k')
    rao_blackwell = scfg.Value(True, isflag=True, help='average the score over one path per final particle')
    backward_sampling = scfg.Value(True, isflag=True, help='refresh paths by backward sampling instead of genealogy tracing')

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError('trainer.iterations must be nonnegative, got {}'.format(self.iterations))
        if not self.learning_rate >= 0:
            raise ConfigError('trainer.learning_rate must be nonnegative, got {}'.format(self.learning_rate))

    def step_size(self, k):
        """ Step size of iteration ``k >= 1`` """
        if self.decay:
            return self.learning_rate / k
        return self.learning_rate


class TrainState(ub.NiceRepr):
    """
    Attributes:
        params (PolicyParams): current parameters
        reference (Trajectory): current reference path
        iteration (int): completed iterations
    """

    def __init__(self, params, reference, iteration=0):
        self.params = params
        self.reference = reference
        self.iteration = iteration

    def __nice__(self):
        return 'iteration={}'.format(self.iteration)


class TrainLog(ub.NiceRepr):
    """
    One row per iteration.
    """

    def __init__(self, rows=None):
        self.rows = list(rows or [])

    def __nice__(self):
        return 'rows={}'.format(len(self.rows))

    def append(self, row):
        self.rows.append(row)

    def column(self, key):
        return np.array([row[key] for row in self.rows])

    def dump(self, fpath, timing_fpath=None):
        """
        Write the log as CSV. Wall times go to a separate file so the log
        itself is a deterministic function of the config and seed.
        """
        write_csv(fpath, self.rows, columns=LOG_COLUMNS)
        if timing_fpath is not None:
            write_csv(timing_fpath, self.rows, columns=TIMING_COLUMNS)
        return fpath


def check_trainer_config(run_cfg, tcfg):
    if tcfg.backward_sampling:
        if run_cfg.strategy != 'npf':
            raise ConfigError(
                'backward sampling needs the npf theta strategy, got {!r}'.format(run_cfg.strategy))
        if run_cfg.clamp_low is not None or run_cfg.clamp_high is not None:
            raise ConfigError('backward sampling does not support a clamped jitter kernel')


def initial_reference(model, policy, params, run_cfg, rng):
    """
    One untempered single-particle rollout under the given policy.

    Returns:
        Trajectory
    """
    rollout_cfg = RunConfig(**(ub.udict(run_cfg.to_dict()) | {
        'num_particles': 1, 'tempering': 0.0, 'threads': 1}))
    history = NestedFilter(model, policy, rollout_cfg).run(params, rng)
    return genealogy_trajectory(history, 0)


def csmc_step(state, nested, tcfg, rng):
    """
    One conditional sweep with the reference pinned to slot 0.

    Returns:
        Tuple[FilterHistory, Trajectory]: the sweep and the new reference
    """
    history = nested.run(state.params, rng.child(0), reference=state.reference)
    if tcfg.backward_sampling:
        reference = backward_sample(history, rng.child(1))
    else:
        reference = genealogy_trajectory(history, rng=rng.child(1))
    return history, reference


def rao_blackwell_paths(history, tcfg, rng, threads=1):
    """ One path per final particle """
    num = history.num_particles
    if tcfg.backward_sampling:
        return backward_sample_many(history, rng, final_indices=np.arange(num), threads=threads)
    return [genealogy_trajectory(history, n) for n in range(num)]


def score_estimate(history, params, tcfg, reference, rng, threads=1):
    """
    Score of the policy at ``params`` estimated from one sweep.

    Returns:
        Tuple[ndarray, float]: the score and the mean MH acceptance rate of
        the backward passes (nan when none were run)
    """
    policy = history.policy
    rates = []
    if tcfg.rao_blackwell:
        paths = rao_blackwell_paths(history, tcfg, rng, threads=threads)
        weights = history.final_weights().normalized()
        xs = np.stack([p.xs for p in paths])
        xis = np.stack([p.xis for p in paths])
        score = policy.score(params, xs, xis, weights=weights)
        rates = [p.acceptance_rate for p in paths if getattr(p, 'num_proposals', 0)]
    else:
        score = policy.score(params, reference.xs, reference.xis)
        if getattr(reference, 'num_proposals', 0):
            rates = [reference.acceptance_rate]
    rate = float(np.mean(rates)) if rates else float('nan')
    return np.asarray(score, dtype=float), rate


def msc_iterate(state, nested, tcfg, rng):
    """
    One iteration of Markovian score climbing.

    Returns:
        Tuple[TrainState, dict]: new state and the log row

    Raises:
        NonFiniteGradientError: if the score has NaN or inf entries
    """
    k = state.iteration + 1
    with ub.Timer() as timer:
        history, reference = csmc_step(state, nested, tcfg, rng)
        score, rate = score_estimate(history, state.params, tcfg, reference, rng.child(2),
                                     threads=nested.cfg.threads)
        if not np.all(np.isfinite(score)):
            ex = NonFiniteGradientError('policy score is not finite at iteration {}'.format(k))
            raise add_exception_note(ex, {
                'iteration': k,
                'num_nan': int(np.isnan(score).sum()),
                'num_inf': int(np.isinf(score).sum()),
                'log_evidence': history.log_evidence,
            })
        step_size = tcfg.step_size(k)
        params = state.params.ascent(score, step_size)
    row = {
        'iteration': k,
        'eig_proxy': float(np.mean(history.frames[-1].cum_reward)),
        'log_evidence': history.log_evidence,
        'grad_norm': float(np.linalg.norm(score)),
        'acceptance_rate': rate,
        'step_size': step_size,
        'wall_time': timer.elapsed,
    }
    return TrainState(params, reference, k), row


def train(model, policy, params, run_cfg, tcfg, rng, verbose=0, callback=None):
    """
    Run a fixed number of score climbing iterations.

    Args:
        model (StateSpaceModel): environment
        policy (Policy): design policy
        params (PolicyParams): initial parameters
        run_cfg (RunConfig): filter settings
        tcfg (TrainerConfig): trainer settings
        rng (RngStream): random stream
        verbose (int): verbosity
        callback (callable | None): called with ``(state, row)`` after
            every iteration

    Returns:
        Tuple[PolicyParams, TrainLog]
    """
    check_trainer_config(run_cfg, tcfg)
    log = TrainLog()
    if tcfg.iterations == 0:
        return params, log
    nested = NestedFilter(model, policy, run_cfg)
    reference = initial_reference(model, policy, params, run_cfg, rng.child(0))
    state = TrainState(params, reference)
    prog = ub.ProgIter(range(tcfg.iterations), desc='train', verbose=verbose)
    for _ in prog:
        state, row = msc_iterate(state, nested, tcfg, rng.child(1, state.iteration))
        log.append(row)
        prog.set_extra('eig_proxy={:.3f} |grad|={:.3g}'.format(row['eig_proxy'], row['grad_norm']))
        if callback is not None:
            callback(state, row)
    return state.params, log
