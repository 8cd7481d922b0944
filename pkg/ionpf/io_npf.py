"""
The inside-out nested particle filter.

The outer filter targets the tempered path measure

.. code::

    Gamma_T(z_{0:T}) propto prod_t p^M(z_t | z_{0:t-1}) g_t(z_{0:t})
    g_t = exp(eta * r_t - lambda * (xi_{t-1} - xi_{t-2}) ** 2)
    r_t = -log p^M(x_t | z_{0:t-1}, xi_{t-1})

where ``p^M`` is the transition averaged over the particle's own theta
belief. One step of the filter is

1. resample the outer particles multinomially,
2. draw a design from the policy and a next state from ``p^M`` by picking
   one theta of the ancestor's belief uniformly,
3. weight by the log-potential computed with the ancestor's belief,
4. advance each belief with the configured theta strategy,
5. advance the policy states.

Steps 2 and 4 are independent across particles and run in a job pool, every
particle drawing from its own child stream, so results do not depend on the
number of threads.

Example:
    >>> from ionpf.io_npf import *  # NOQA
    >>> from ionpf.model import PendulumModel
    >>> from ionpf.policy import coerce_policy
    >>> from ionpf.core import RngStream
    >>> model = PendulumModel(horizon=5)
    >>> policy = coerce_policy(kind='linear')
    >>> params = policy.init_params(RngStream(0))
    >>> cfg = RunConfig(num_particles=8, num_theta=16)
    >>> history = run_filter(model, policy, params, cfg, RngStream(1))
    >>> assert history.horizon == 5 and history.num_particles == 8
    >>> assert np.isfinite(history.log_evidence)
    >>> traj = genealogy_trajectory(history, 0)
    >>> assert traj.xs.shape == (6, 2)
"""
import json
import numpy as np
import scriptconfig as scfg
import ubelt as ub

from ionpf.core import LogWeights, log_mean_exp, multinomial_resample
from ionpf.exceptions import (ConfigError, DataError, DegenerateCloudError,
                              FilterCollapseError, SnapshotVersionError,
                              add_exception_note)
from ionpf.model import AugmentedState, GaussianBelief, PendulumModel, stack_augmented
from ionpf.policy import PolicyParams, PolicyState, coerce_policy
from ionpf.theta_filter import (THETA_STRATEGIES, JitterConfig, ThetaCloud,
                                coerce_strategy)
from ionpf.util_records import jsonable

SNAPSHOT_FORMAT = 'ionpf-history'
SNAPSHOT_VERSION = 1


class RunConfig(scfg.DataConfig):
    """
    Settings of one run of the nested filter.
    """
    num_particles = scfg.Value(32, type=int, alias=['N'], help='number of outer particles')
    num_theta = scfg.Value(128, type=int, alias=['M'], help='number of theta particles per outer particle')
    tempering = scfg.Value(1.0, type=float, alias=['eta'], help='reward tempering eta')
    slew_penalty = scfg.Value(0.1, type=float, alias=['lam'], help='slew-rate penalty lambda on consecutive designs')
    strategy = scfg.Value('npf', type=str, choices=THETA_STRATEGIES, help='theta strategy')
    ibis_moves = scfg.Value(3, type=int, help='RWMH moves per step of the ibis strategy')
    jitter_scale = scfg.Value(None, help='per-dimension jitter base scale s, defaults to half the prior std')
    clamp_low = scfg.Value(None, help='optional lower bound of the theta box')
    clamp_high = scfg.Value(None, help='optional upper bound of the theta box')
    threads = scfg.Value(1, type=int, help='worker threads for the per-particle work')

    def __post_init__(self):
        if self.num_particles < 1:
            raise ConfigError('filter.num_particles must be at least 1, got {}'.format(self.num_particles))
        if self.num_theta < 1:
            raise ConfigError('filter.num_theta must be at least 1, got {}'.format(self.num_theta))
        if not self.tempering >= 0:
            raise ConfigError('filter.tempering must be nonnegative, got {}'.format(self.tempering))
        if not self.slew_penalty >= 0:
            raise ConfigError('filter.slew_penalty must be nonnegative, got {}'.format(self.slew_penalty))
        if self.strategy not in THETA_STRATEGIES:
            raise ConfigError('filter.strategy must be one of {}, got {!r}'.format(THETA_STRATEGIES, self.strategy))
        if self.threads < 1:
            raise ConfigError('filter.threads must be at least 1, got {}'.format(self.threads))

    def jitter_config(self):
        return JitterConfig(num_theta=self.num_theta, base_scale=self.jitter_scale,
                            clamp_low=self.clamp_low, clamp_high=self.clamp_high,
                            ibis_moves=self.ibis_moves)


class OuterParticle(ub.NiceRepr):
    """
    One outer particle: augmented state, theta belief, ancestor and policy state.
    """

    def __init__(self, z, belief, ancestor, policy_state):
        self.z = z
        self.belief = belief
        self.ancestor = ancestor
        self.policy_state = policy_state

    def __nice__(self):
        return '{}, ancestor={}'.format(self.z.__nice__(), self.ancestor)


class FilterFrame(ub.NiceRepr):
    """
    The population of the outer filter at one time index.

    Attributes:
        t (int): time index
        xs (ndarray): states ``(N, S)``
        xi_prev (ndarray): designs that produced the states, zero at ``t = 0``
        beliefs (list): theta belief of every particle
        policy_state (PolicyState): batched policy states after consuming ``z_t``
        log_weights (ndarray): log-potentials ``log g_t``
        ancestors (ndarray): indices into the previous frame
        log_marginals (ndarray): ``log p^M(x_t | ...)``
        cum_reward (ndarray): accumulated reward along each genealogy
        design_logpdf (ndarray): log-density of ``xi_prev`` under the policy
        paths (None | Tuple[ndarray, ndarray]): full state and design paths,
            only kept when the theta strategy reprocesses whole histories
        stats (dict): step diagnostics
    """

    def __init__(self, t, xs, xi_prev, beliefs, policy_state, log_weights,
                 ancestors, log_marginals=None, cum_reward=None,
                 design_logpdf=None, paths=None, stats=None):
        num = len(xs)
        self.t = t
        self.xs = np.asarray(xs, dtype=float)
        self.xi_prev = np.asarray(xi_prev, dtype=float)
        self.beliefs = list(beliefs)
        self.policy_state = policy_state
        self.log_weights = np.asarray(log_weights, dtype=float)
        self.ancestors = np.asarray(ancestors, dtype=int)
        self.log_marginals = np.zeros(num) if log_marginals is None else np.asarray(log_marginals, dtype=float)
        self.cum_reward = np.zeros(num) if cum_reward is None else np.asarray(cum_reward, dtype=float)
        self.design_logpdf = np.zeros(num) if design_logpdf is None else np.asarray(design_logpdf, dtype=float)
        self.paths = paths
        self.stats = {} if stats is None else stats

    def __nice__(self):
        return 't={}, N={}'.format(self.t, len(self))

    def __len__(self):
        return len(self.xs)

    def weights(self):
        return LogWeights(self.log_weights)

    def zs(self):
        """ Policy inputs ``[x_t, xi_{t-1}]`` of shape ``(N, S + 1)`` """
        return np.concatenate([self.xs, self.xi_prev[:, None]], axis=1)

    def particle(self, n):
        xi_prev = None if self.t == 0 else self.xi_prev[n]
        return OuterParticle(AugmentedState(self.xs[n], xi_prev), self.beliefs[n],
                             int(self.ancestors[n]), self.policy_state.take([n]))


class Trajectory(ub.NiceRepr):
    """
    One path ``z_{0:T}`` extracted from a filter history.

    Attributes:
        xs (ndarray): states ``(T + 1, S)``
        xis (ndarray): designs ``(T,)``
        indices (ndarray | None): particle index at each time
        beliefs (list | None): theta belief at each time
    """

    def __init__(self, xs, xis, indices=None, beliefs=None):
        self.xs = np.asarray(xs, dtype=float)
        self.xis = np.asarray(xis, dtype=float).reshape(-1)
        self.indices = None if indices is None else np.asarray(indices, dtype=int)
        self.beliefs = beliefs
        if len(self.xs) != len(self.xis) + 1:
            raise ValueError('a trajectory needs one more state than designs')

    def __nice__(self):
        return 'T={}'.format(self.horizon)

    @property
    def horizon(self):
        return len(self.xis)

    def zs(self):
        return stack_augmented(self.xs, self.xis)


def marginal_transition_logpdf(particle, xi, x_next, strategy):
    """
    ``log p^M(x_next | z_{0:t}, xi)``: the transition averaged over the
    particle's theta belief (closed form for the exact strategy).

    Example:
        >>> from ionpf.io_npf import *  # NOQA
        >>> from ionpf.theta_filter import coerce_strategy, ThetaCloud
        >>> from ionpf.model import PendulumModel, AugmentedState
        >>> model = PendulumModel()
        >>> strategy = coerce_strategy('npf', model)
        >>> theta = model.prior.mean
        >>> particle = OuterParticle(AugmentedState(model.x0), ThetaCloud([theta]), 0, None)
        >>> x1 = np.array([0.0, 0.1])
        >>> got = marginal_transition_logpdf(particle, 0.5, x1, strategy)
        >>> assert np.isclose(got, model.transition_logpdf(x1, model.x0, 0.5, theta))
    """
    return strategy.marginal_logpdf(particle.belief, particle.z.x, xi, x_next)


def potential_log(log_marginal, xi, xi_prev, cfg):
    """
    Log-potential ``eta * (-log p^M) - lambda * (xi - xi_prev) ** 2``.

    Args:
        log_marginal (float | ndarray): marginal transition log-density
        xi (float | ndarray): the new design
        xi_prev (None | float | ndarray): the previous design, None when
            there is none (no penalty)
        cfg (RunConfig): tempering and penalty

    Returns:
        float | ndarray: ``-inf`` where the marginal is ``-inf``

    Example:
        >>> from ionpf.io_npf import potential_log, RunConfig
        >>> assert potential_log(-1.5, 0.2, 0.2, RunConfig(tempering=1.0)) == 1.5
        >>> assert potential_log(-1.5, 0.2, None, RunConfig(tempering=0, slew_penalty=0)) == 0
    """
    log_marginal = np.asarray(log_marginal, dtype=float)
    finite = np.isfinite(log_marginal)
    reward = np.where(finite, -log_marginal, 0.0)
    logg = cfg.tempering * reward
    if xi_prev is not None and cfg.slew_penalty > 0:
        logg = logg - cfg.slew_penalty * (np.asarray(xi) - np.asarray(xi_prev)) ** 2
    logg = np.where(finite, logg, -np.inf)
    return float(logg) if logg.ndim == 0 else logg


class NestedFilter(ub.NiceRepr):
    """
    The outer filter bound to a model, a policy and a theta strategy.

    Args:
        model (StateSpaceModel): the environment
        policy (Policy): the design policy
        cfg (RunConfig): run settings
    """

    def __init__(self, model, policy, cfg=None):
        if cfg is None:
            cfg = RunConfig()
        self.model = model
        self.policy = policy
        self.cfg = cfg
        self.strategy = coerce_strategy(cfg.strategy, model, cfg.jitter_config())

    def __nice__(self):
        return 'N={}, M={}, strategy={}'.format(
            self.cfg.num_particles, self.cfg.num_theta, self.strategy.name)

    def _pool(self):
        threads = int(self.cfg.threads)
        mode = 'thread' if threads > 1 else 'serial'
        return ub.JobPool(mode=mode, max_workers=threads)

    def initial_frame(self, params, rng, reference=None):
        """
        Frame at ``t = 0``: every particle at ``x_0`` with a fresh prior belief.
        """
        num = self.cfg.num_particles
        xs = np.tile(self.model.x0, (num, 1))
        beliefs = [self.strategy.init(rng.child(1, n)) for n in range(num)]
        state = self.policy.step(params, self.policy.initial_state(num), np.concatenate(
            [xs, np.zeros((num, 1))], axis=1))
        paths = None
        if self.strategy.needs_path:
            paths = (xs[:, None, :].copy(), np.zeros((num, 0)))
        return FilterFrame(0, xs, np.zeros(num), beliefs, state, np.zeros(num),
                           np.arange(num), paths=paths)

    def _propagate(self, belief, x, xi, path, rng):
        """
        Per-particle work of one step.

        Returns:
            Tuple[ndarray, float, object, dict]: next state, marginal
            log-density, advanced belief and stats
        """
        theta = self.strategy.sample_theta(belief, rng.child(1))
        x_next = self.model.sample_transition(x, xi, theta, rng.child(2))
        return self._advance(belief, x, xi, x_next, path, rng)

    def _advance(self, belief, x, xi, x_next, path, rng):
        log_marginal = self.strategy.marginal_logpdf(belief, x, xi, x_next)
        if path is None:
            path_xs, path_xis = np.stack([x, x_next]), np.array([xi])
        else:
            path_xs = np.concatenate([path[0], x_next[None]], axis=0)
            path_xis = np.append(path[1], xi)
        try:
            new_belief, stats = self.strategy.advance(belief, path_xs, path_xis, rng.child(3))
        except DegenerateCloudError:
            new_belief, stats = belief, {'degenerate': True}
            log_marginal = -np.inf
        return x_next, log_marginal, new_belief, stats

    def step(self, frame, params, rng, reference=None):
        """
        Advance the population by one time step.

        Args:
            frame (FilterFrame): the population at time ``t``
            params (PolicyParams): policy parameters
            rng (RngStream): stream of this step
            reference (Trajectory | None): path pinned to slot 0

        Returns:
            FilterFrame: the population at time ``t + 1``

        Raises:
            FilterCollapseError: if every new weight is ``-inf``
        """
        num = len(frame)
        t = frame.t + 1
        ess = LogWeights(frame.log_weights).ess()
        ancestors = multinomial_resample(frame.log_weights, num, rng.child(0))
        if reference is not None:
            ancestors[0] = 0
        state = frame.policy_state.take(ancestors)
        particle_rngs = [rng.child(1, n) for n in range(num)]
        xis, design_logpdf = self.policy.sample(
            params, state, [r.child(0) for r in particle_rngs])
        xis = xis[:, 0]
        if reference is not None:
            xis[0] = reference.xis[t - 1]
            design_logpdf[0] = self.policy.logpdf(params, state.take([0]), [xis[0]])[0]

        pool = self._pool()
        jobs = []
        for n in range(num):
            a = ancestors[n]
            path = None
            if frame.paths is not None:
                path = (frame.paths[0][a], frame.paths[1][a])
            if reference is not None and n == 0:
                jobs.append(pool.submit(self._advance, frame.beliefs[a], frame.xs[a], xis[n],
                                        reference.xs[t], path, particle_rngs[n]))
            else:
                jobs.append(pool.submit(self._propagate, frame.beliefs[a], frame.xs[a], xis[n],
                                        path, particle_rngs[n]))
        results = [job.result() for job in jobs]
        xs = np.stack([r[0] for r in results])
        log_marginals = np.array([r[1] for r in results])
        beliefs = [r[2] for r in results]
        step_stats = [r[3] for r in results]

        xi_prev = frame.xi_prev[ancestors] if frame.t >= 1 else None
        log_weights = potential_log(log_marginals, xis, xi_prev, self.cfg)
        log_weights = np.atleast_1d(log_weights)
        rewards = np.where(np.isfinite(log_marginals), -log_marginals, 0.0)
        cum_reward = frame.cum_reward[ancestors] + rewards

        stats = {
            'ess': ess,
            'unique_ancestors': len(np.unique(ancestors)),
            'degenerate_clouds': sum(bool(s.get('degenerate', False)) for s in step_stats),
        }
        rates = [s['acceptance_rate'] for s in step_stats if 'acceptance_rate' in s]
        if rates:
            stats['acceptance_rate'] = float(np.mean(rates))
        if np.all(log_weights == -np.inf):
            ex = FilterCollapseError('all {} outer weights are -inf at t={}'.format(num, t))
            raise add_exception_note(ex, ub.udict(stats) | {'t': t, 'strategy': self.strategy.name})

        policy_state = self.policy.step(params, state, np.concatenate([xs, xis[:, None]], axis=1))
        paths = None
        if frame.paths is not None:
            paths = (np.concatenate([frame.paths[0][ancestors], xs[:, None]], axis=1),
                     np.concatenate([frame.paths[1][ancestors], xis[:, None]], axis=1))
        return FilterFrame(t, xs, xis, beliefs, policy_state, log_weights, ancestors,
                           log_marginals=log_marginals, cum_reward=cum_reward,
                           design_logpdf=design_logpdf, paths=paths, stats=stats)

    def run(self, params, rng, reference=None, horizon=None, verbose=0):
        """
        Run all ``T`` steps.

        Returns:
            FilterHistory
        """
        horizon = self.model.horizon if horizon is None else horizon
        if reference is not None and reference.horizon < horizon:
            raise ValueError('reference trajectory is shorter than the horizon')
        frame = self.initial_frame(params, rng.child(0), reference=reference)
        frames = [frame]
        log_evidence = 0.0
        increments = []
        for t in ub.ProgIter(range(1, horizon + 1), desc='filter', verbose=verbose):
            frame = self.step(frame, params, rng.child(t), reference=reference)
            inc = float(log_mean_exp(frame.log_weights))
            increments.append(inc)
            log_evidence += inc
            frames[-1].paths = None
            frames.append(frame)
        frame.paths = None
        return FilterHistory(frames, self, params, log_evidence=log_evidence,
                             log_evidence_increments=increments)


def npf_step(frame, params, nested, rng, reference=None):
    """
    One step of the nested filter, see :func:`NestedFilter.step`.
    """
    return nested.step(frame, params, rng, reference=reference)


def run_filter(model, policy, params, cfg, rng, reference=None, verbose=0):
    """
    Run the nested filter for the model horizon.

    Args:
        model (StateSpaceModel): environment
        policy (Policy): design policy
        params (PolicyParams): policy parameters
        cfg (RunConfig): run settings
        rng (RngStream): random stream
        reference (Trajectory | None): conditional path pinned to slot 0
        verbose (int): verbosity

    Returns:
        FilterHistory
    """
    nested = NestedFilter(model, policy, cfg)
    return nested.run(params, rng, reference=reference, verbose=verbose)


class FilterHistory(ub.NiceRepr):
    """
    Every frame generated by one run of the nested filter.

    Attributes:
        frames (List[FilterFrame]): frames ``0 .. T``
        nested (NestedFilter): the filter that produced the frames
        params (PolicyParams): the policy parameters used
        log_evidence (float): log normalizing constant estimate
    """

    def __init__(self, frames, nested, params, log_evidence=0.0, log_evidence_increments=None):
        self.frames = frames
        self.nested = nested
        self.params = params
        self.log_evidence = float(log_evidence)
        self.log_evidence_increments = list(log_evidence_increments or [])

    def __nice__(self):
        return 'T={}, N={}, log_evidence={:.3f}'.format(
            self.horizon, self.num_particles, self.log_evidence)

    @property
    def model(self):
        return self.nested.model

    @property
    def policy(self):
        return self.nested.policy

    @property
    def strategy(self):
        return self.nested.strategy

    @property
    def cfg(self):
        return self.nested.cfg

    @property
    def horizon(self):
        return len(self.frames) - 1

    @property
    def num_particles(self):
        return len(self.frames[0])

    def final_weights(self):
        return LogWeights(self.frames[-1].log_weights)

    def stacked(self, attr):
        """ Stack a per-frame array attribute along a new leading time axis """
        return np.stack([getattr(f, attr) for f in self.frames])

    def trajectory(self, indices):
        """ The path through the given particle index at each time """
        indices = np.asarray(indices, dtype=int)
        xs = np.stack([f.xs[i] for f, i in zip(self.frames, indices)])
        xis = np.array([f.xi_prev[i] for f, i in zip(self.frames[1:], indices[1:])])
        beliefs = [f.beliefs[i] for f, i in zip(self.frames, indices)]
        return Trajectory(xs, xis, indices=indices, beliefs=beliefs)

    def degeneracy(self):
        """ Number of distinct time-zero ancestors of the final population """
        current = np.arange(self.num_particles)
        for frame in reversed(self.frames[1:]):
            current = frame.ancestors[current]
        return len(np.unique(current))

    def dump(self, fpath):
        """ Write a compressed binary snapshot, see :func:`load_history` """
        return save_history(fpath, self)


def genealogy_trajectory(history, n=None, rng=None):
    """
    Trace the ancestors of final particle ``n`` back to time zero.

    Args:
        history (FilterHistory): complete history
        n (int | None): final particle index, drawn from the final weights
            with ``rng`` when None
        rng (RngStream | None): used when ``n`` is None

    Returns:
        Trajectory
    """
    if n is None:
        if rng is None:
            raise ValueError('need a random stream to draw the final index')
        n = int(multinomial_resample(history.final_weights(), 1, rng)[0])
    indices = np.empty(history.horizon + 1, dtype=int)
    indices[-1] = n
    for t in range(history.horizon, 0, -1):
        indices[t - 1] = history.frames[t].ancestors[indices[t]]
    return history.trajectory(indices)


def save_history(fpath, history):
    """
    Save a filter history as a ``.npz`` archive.

    The archive stores stacked per-frame arrays plus a JSON header with the
    configs and the policy parameters, which makes it enough for offline
    smoothing.
    """
    nested = history.nested
    header = {
        'format': SNAPSHOT_FORMAT,
        'version': SNAPSHOT_VERSION,
        'model': 'pendulum',
        'model_config': jsonable(nested.model.config.to_dict()),
        'run_config': jsonable(nested.cfg.to_dict()),
        'policy_arch': jsonable(nested.policy.arch.to_dict()),
        'log_evidence': history.log_evidence,
        'log_evidence_increments': history.log_evidence_increments,
        'stats': [jsonable(f.stats) for f in history.frames],
    }
    arrays = {
        'header': np.array(json.dumps(header)),
        'params': history.params.flat,
    }
    for key in ['xs', 'xi_prev', 'log_weights', 'ancestors', 'log_marginals',
                'cum_reward', 'design_logpdf']:
        arrays[key] = history.stacked(key)
    num_layers = len(history.frames[0].policy_state.hidden)
    for i in range(num_layers):
        arrays[f'policy_hidden{i}'] = np.stack([f.policy_state.hidden[i] for f in history.frames])
    if nested.strategy.name == 'exact':
        arrays['belief_mean'] = np.stack([[b.mean for b in f.beliefs] for f in history.frames])
        arrays['belief_cov'] = np.stack([[b.cov for b in f.beliefs] for f in history.frames])
    else:
        frames = history.frames
        arrays['theta_particles'] = np.stack([[b.particles for b in f.beliefs] for f in frames])
        num_theta = arrays['theta_particles'].shape[2]
        empty_w = np.zeros(num_theta)
        empty_a = np.full(num_theta, -1)
        arrays['theta_source_log_weights'] = np.stack([
            [empty_w if b.source_log_weights is None else b.source_log_weights for b in f.beliefs]
            for f in frames])
        arrays['theta_ancestors'] = np.stack([
            [empty_a if b.ancestors is None else b.ancestors for b in f.beliefs] for f in frames])
    fpath = ub.Path(fpath)
    fpath.parent.ensuredir()
    with open(fpath, 'wb') as file:
        np.savez_compressed(file, **arrays)
    return fpath


def load_history(fpath):
    """
    Read a snapshot written by :func:`save_history`.

    Raises:
        FileNotFoundError: if the snapshot is missing
        SnapshotVersionError: if the snapshot version is not supported
        DataError: if the snapshot is unreadable

    Example:
        >>> from ionpf.io_npf import *  # NOQA
        >>> from ionpf.policy import coerce_policy
        >>> from ionpf.core import RngStream
        >>> model = PendulumModel(horizon=3)
        >>> policy = coerce_policy(kind='linear')
        >>> params = policy.init_params(RngStream(0))
        >>> cfg = RunConfig(num_particles=4, num_theta=8)
        >>> history = run_filter(model, policy, params, cfg, RngStream(1))
        >>> dpath = ub.Path.appdir('ionpf', 'tests', 'doctest').ensuredir()
        >>> fpath = history.dump(dpath / 'history.npz')
        >>> loaded = load_history(fpath)
        >>> assert np.array_equal(loaded.stacked('xs'), history.stacked('xs'))
        >>> assert loaded.log_evidence == history.log_evidence
    """
    fpath = ub.Path(fpath)
    if not fpath.exists():
        raise FileNotFoundError('snapshot {} does not exist'.format(fpath))
    try:
        with np.load(fpath, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
        header = json.loads(str(arrays['header']))
    except (OSError, ValueError, KeyError) as ex:
        raise DataError('unreadable snapshot {}: {}'.format(fpath, ex))
    if header.get('format') != SNAPSHOT_FORMAT:
        raise DataError('{} is not an ionpf filter snapshot'.format(fpath))
    if header.get('version') != SNAPSHOT_VERSION:
        raise SnapshotVersionError('snapshot version {!r} is not supported (expected {})'.format(
            header.get('version'), SNAPSHOT_VERSION))
    try:
        model = PendulumModel(header['model_config'])
        cfg = RunConfig(**header['run_config'])
        policy = coerce_policy(header['policy_arch'])
        nested = NestedFilter(model, policy, cfg)
        params = PolicyParams(arrays['params'], kind=policy.kind)
        horizon = arrays['xs'].shape[0] - 1
        frames = []
        num_layers = sum(1 for key in arrays if key.startswith('policy_hidden'))
        for t in range(horizon + 1):
            num = arrays['xs'].shape[1]
            if nested.strategy.name == 'exact':
                beliefs = [GaussianBelief(m, c) for m, c in zip(arrays['belief_mean'][t], arrays['belief_cov'][t])]
            else:
                beliefs = []
                for n in range(num):
                    ancestors = arrays['theta_ancestors'][t][n]
                    source = arrays['theta_source_log_weights'][t][n]
                    if t == 0:
                        ancestors, source = None, None
                    beliefs.append(ThetaCloud(arrays['theta_particles'][t][n],
                                              ancestors=ancestors, source_log_weights=source))
            hidden = [arrays[f'policy_hidden{i}'][t] for i in range(num_layers)]
            frames.append(FilterFrame(
                t, arrays['xs'][t], arrays['xi_prev'][t], beliefs,
                PolicyState(hidden, num), arrays['log_weights'][t], arrays['ancestors'][t],
                log_marginals=arrays['log_marginals'][t], cum_reward=arrays['cum_reward'][t],
                design_logpdf=arrays['design_logpdf'][t], stats=header['stats'][t]))
    except (KeyError, ValueError, IndexError) as ex:
        raise DataError('corrupted snapshot {}: {}'.format(fpath, ex))
    return FilterHistory(frames, nested, params, log_evidence=header['log_evidence'],
                         log_evidence_increments=header['log_evidence_increments'])
