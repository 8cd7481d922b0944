"""
Policy evaluation.

* :func:`eig_estimate` - the expected accumulated reward
  ``E[sum_t -log p^M(x_t | z_{0:t-1}, xi_{t-1})]`` over rollouts of the
  marginal model, each rollout being an untempered single-particle run of
  the nested filter. The additive constant that turns this into the
  information gain is not subtracted.
* :func:`spce_estimate` - the sequential prior contrastive lower bound with
  ``L`` contrastive prior draws, capped at ``log(L + 1)``.
* :func:`realized_ig_curve` - the closed-form entropy drop of the conjugate
  posterior along rollouts against parameters drawn from the prior.
* :func:`runtime_benchmark` - median wall time of one amortization iteration
  per strategy over a grid of horizons, with fitted log-log exponents.

Example:
    >>> from ionpf.evaluation import *  # NOQA
    >>> from ionpf.model import PendulumModel
    >>> from ionpf.policy import coerce_policy
    >>> from ionpf.core import RngStream
    >>> model = PendulumModel(horizon=5)
    >>> policy = coerce_policy(kind='random')
    >>> params = policy.init_params()
    >>> curve = realized_ig_curve(model, policy, params, 8, RngStream(0))
    >>> assert curve.mean[0] == 0 and len(curve.mean) == 6
    >>> assert np.all(np.diff(curve.values, axis=1) >= -1e-12)
"""
import numpy as np
import scriptconfig as scfg
import ubelt as ub
from scipy.special import logsumexp

from ionpf.exceptions import ConfigError
from ionpf.io_npf import NestedFilter, RunConfig
from ionpf.model import PendulumModel
from ionpf.theta_filter import THETA_STRATEGIES
from ionpf.trainer import TrainerConfig, TrainState, initial_reference, msc_iterate
from ionpf.util_records import write_csv, write_json

BENCH_STRATEGIES = ['npf', 'npf-bs', 'ibis', 'exact']


class EvalConfig(scfg.DataConfig):
    """
    Evaluation settings.
    """
    rollouts = scfg.Value(16, type=int, help='rollouts for the EIG and sPCE estimates')
    num_theta = scfg.Value(1024, type=int, alias=['M'], help='theta particles of the EIG rollouts')
    contrastive = scfg.Value(100000, type=int, alias=['L'], help='contrastive prior samples of sPCE')
    replications = scfg.Value(1024, type=int, help='replications of the realized information gain curve')
    chunk_size = scfg.Value(8192, type=int, help='contrastive samples evaluated at once')
    eig_strategy = scfg.Value('npf', type=str, choices=THETA_STRATEGIES, help='theta strategy of the EIG rollouts')
    horizons = scfg.Value([25, 50], help='benchmark horizons')
    bench_strategies = scfg.Value(BENCH_STRATEGIES, help='benchmark strategies')
    bench_repeats = scfg.Value(3, type=int, help='timed repeats per benchmark cell')

    def __post_init__(self):
        for key in ['rollouts', 'num_theta', 'contrastive', 'replications', 'chunk_size', 'bench_repeats']:
            if self[key] < 1:
                raise ConfigError('eval.{} must be at least 1, got {}'.format(key, self[key]))
        unknown = set(self.bench_strategies) - set(BENCH_STRATEGIES)
        if unknown:
            raise ConfigError('unknown benchmark strategies {}'.format(sorted(unknown)))


class Estimate(ub.NiceRepr):
    """
    Mean and standard deviation of per-rollout values.
    """

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def __nice__(self):
        return '{:.3f} +- {:.3f}'.format(self.mean, self.std)

    @property
    def mean(self):
        return float(self.values.mean())

    @property
    def std(self):
        return float(self.values.std())

    @property
    def stderr(self):
        return self.std / np.sqrt(len(self.values))


class Curve(ub.NiceRepr):
    """
    Per-time mean and std of replicated curves.

    Attributes:
        values (ndarray): shape ``(R, T + 1)``
    """

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def __nice__(self):
        return 'R={}, final={:.3f}'.format(len(self.values), self.mean[-1])

    @property
    def mean(self):
        return self.values.mean(axis=0)

    @property
    def std(self):
        return self.values.std(axis=0)

    def rows(self):
        return [{'t': t, 'mean': m, 'std': s} for t, (m, s) in enumerate(zip(self.mean, self.std))]


def _pool(threads):
    return ub.JobPool(mode='thread' if threads > 1 else 'serial', max_workers=threads)


def simulate_rollouts(model, policy, params, thetas, rngs):
    """
    Roll out the policy against fixed parameters.

    Args:
        model (StateSpaceModel): environment
        policy (Policy): design policy
        params (PolicyParams): policy parameters
        thetas (ndarray): one parameter per rollout, shape ``(R, d)``
        rngs (List[RngStream]): one stream per rollout

    Returns:
        Tuple[ndarray, ndarray]: states ``(R, T + 1, S)`` and designs ``(R, T)``
    """
    thetas = np.atleast_2d(thetas)
    num = len(thetas)
    horizon = model.horizon
    xs = np.empty((num, horizon + 1, len(model.x0)))
    xis = np.empty((num, horizon))
    xs[:, 0] = model.x0
    state = policy.step(params, policy.initial_state(num),
                        np.concatenate([xs[:, 0], np.zeros((num, 1))], axis=1))
    for t in range(horizon):
        step_rngs = [r.child(t) for r in rngs]
        design, _ = policy.sample(params, state, [r.child(0) for r in step_rngs])
        xis[:, t] = design[:, 0]
        for i in range(num):
            xs[i, t + 1] = model.sample_transition(xs[i, t], xis[i, t], thetas[i], step_rngs[i].child(1))
        state = policy.step(params, state, np.concatenate([xs[:, t + 1], xis[:, t:t + 1]], axis=1))
    return xs, xis


def eig_estimate(model, policy, params, cfg, rng, strategy=None, jitter_scale=None, threads=1):
    """
    Expected accumulated reward of the policy.

    Args:
        model (StateSpaceModel): environment
        policy (Policy): design policy
        params (PolicyParams): policy parameters
        cfg (EvalConfig): number of rollouts and theta particles
        rng (RngStream): rollout ``i`` uses ``rng.child(i)``
        strategy (str | None): overrides ``cfg.eig_strategy``

    Returns:
        Estimate
    """
    strategy = cfg.eig_strategy if strategy is None else strategy
    run_cfg = RunConfig(num_particles=1, num_theta=cfg.num_theta, tempering=0.0,
                        slew_penalty=0.0, strategy=strategy, jitter_scale=jitter_scale)
    nested = NestedFilter(model, policy, run_cfg)
    pool = _pool(threads)
    jobs = [pool.submit(nested.run, params, rng.child(i)) for i in range(cfg.rollouts)]
    values = [job.result().frames[-1].cum_reward[0] for job in jobs]
    return Estimate(values)


def spce_values(model, xs, xis, theta0, contrastive, rng, chunk_size=8192):
    """
    sPCE of one rollout generated under ``theta0``.

    The contrastive draws are consecutive draws of ``rng.child(0)``, so the
    result does not depend on ``chunk_size`` beyond rounding.

    Returns:
        float: at most ``log(contrastive + 1)``
    """
    prior = model.prior_belief()
    log_lik0 = float(model.history_loglik(xs, xis, theta0[None])[0])
    parts = [log_lik0]
    stream = rng.child(0)
    remaining = contrastive
    while remaining > 0:
        size = min(chunk_size, remaining)
        thetas = prior.sample(stream, size)
        parts.append(logsumexp(model.history_loglik(xs, xis, thetas)))
        remaining -= size
    log_denom = logsumexp(parts) - np.log(contrastive + 1)
    return log_lik0 - log_denom


def spce_estimate(model, policy, params, cfg, rng, threads=1):
    """
    Sequential prior contrastive estimate over ``cfg.rollouts`` rollouts.

    Returns:
        Estimate
    """
    prior = model.prior_belief()
    thetas = prior.sample(rng.child(0), cfg.rollouts)
    rollout_rngs = [rng.child(1, i) for i in range(cfg.rollouts)]
    xs, xis = simulate_rollouts(model, policy, params, thetas, rollout_rngs)
    pool = _pool(threads)
    jobs = [pool.submit(spce_values, model, xs[i], xis[i], thetas[i], cfg.contrastive,
                        rng.child(2, i), cfg.chunk_size) for i in range(cfg.rollouts)]
    return Estimate([job.result() for job in jobs])


def realized_ig_curve(model, policy, params, replications, rng):
    """
    Closed-form information gain ``0.5 logdet S_0 - 0.5 logdet S_t`` of the
    conjugate posterior along rollouts against prior draws.

    Returns:
        Curve: ``replications`` curves of length ``T + 1``
    """
    if not model.is_conjugate:
        raise ConfigError('the realized information gain needs a conjugate model')
    prior = model.prior_belief()
    thetas = prior.sample(rng.child(0), replications)
    rollout_rngs = [rng.child(1, i) for i in range(replications)]
    xs, xis = simulate_rollouts(model, policy, params, thetas, rollout_rngs)
    values = np.zeros((replications, model.horizon + 1))
    base = prior.logdet()
    for i in range(replications):
        belief = prior
        for t in range(model.horizon):
            belief = model.conjugate_update(belief, xs[i, t], xis[i, t], xs[i, t + 1])
            values[i, t + 1] = 0.5 * (base - belief.logdet())
    return Curve(values)


class EvalReport(ub.NiceRepr):
    """
    Evaluation results of one policy.
    """

    def __init__(self, eig=None, spce=None, realized_ig=None, runtime=None, meta=None):
        self.eig = eig
        self.spce = spce
        self.realized_ig = realized_ig
        self.runtime = runtime or {}
        self.meta = meta or {}

    def __nice__(self):
        return 'eig={}, spce={}'.format(self.eig, self.spce)

    def to_dict(self):
        data = ub.udict(self.meta)
        if self.eig is not None:
            data |= {'eig_mean': self.eig.mean, 'eig_std': self.eig.std, 'eig_values': self.eig.values}
        if self.spce is not None:
            data |= {'spce_mean': self.spce.mean, 'spce_std': self.spce.std, 'spce_values': self.spce.values}
        if self.realized_ig is not None:
            data |= {'realized_ig_mean': self.realized_ig.mean, 'realized_ig_std': self.realized_ig.std}
        data['runtime'] = self.runtime
        return data

    def dump(self, dpath):
        """
        Write ``report.json`` and ``realized_ig.csv`` (columns t, mean, std).
        """
        dpath = ub.Path(dpath).ensuredir()
        paths = {'report': write_json(dpath / 'report.json', self.to_dict())}
        if self.realized_ig is not None:
            paths['curve'] = write_csv(dpath / 'realized_ig.csv', self.realized_ig.rows(),
                                       columns=['t', 'mean', 'std'])
        return paths


def evaluate(model, policy, params, cfg, rng, threads=1, verbose=0):
    """
    All estimates of :class:`EvalReport` with independent child streams.
    """
    steps = ub.ProgIter(['eig', 'spce', 'realized_ig'], desc='evaluate', verbose=verbose)
    results = {}
    for i, key in enumerate(steps):
        with ub.Timer() as timer:
            if key == 'eig':
                results[key] = eig_estimate(model, policy, params, cfg, rng.child(i), threads=threads)
            elif key == 'spce':
                results[key] = spce_estimate(model, policy, params, cfg, rng.child(i), threads=threads)
            else:
                results[key] = realized_ig_curve(model, policy, params, cfg.replications, rng.child(i))
        results[key + '_seconds'] = timer.elapsed
    runtime = {k: v for k, v in results.items() if k.endswith('_seconds')}
    meta = {'policy': policy.kind, 'horizon': model.horizon, 'rollouts': cfg.rollouts,
            'num_theta': cfg.num_theta, 'contrastive': cfg.contrastive,
            'replications': cfg.replications}
    return EvalReport(results['eig'], results['spce'], results['realized_ig'], runtime, meta)


class BenchReport(ub.NiceRepr):
    """
    Benchmark rows ``(strategy, horizon, median_seconds, repeats)`` and
    per-strategy log-log exponents of time against horizon.
    """

    def __init__(self, rows):
        self.rows = rows

    def __nice__(self):
        return 'rows={}'.format(len(self.rows))

    def exponents(self):
        out = {}
        for strategy, group in ub.group_items(self.rows, key=lambda r: r['strategy']).items():
            horizons = np.array([r['horizon'] for r in group], dtype=float)
            times = np.array([r['median_seconds'] for r in group], dtype=float)
            if len(np.unique(horizons)) < 2:
                out[strategy] = float('nan')
            else:
                out[strategy] = float(np.polyfit(np.log(horizons), np.log(times), 1)[0])
        return out

    def dump(self, dpath):
        dpath = ub.Path(dpath).ensuredir()
        write_csv(dpath / 'bench.csv', self.rows,
                  columns=['strategy', 'horizon', 'median_seconds', 'repeats'])
        rows = [{'strategy': k, 'exponent': v} for k, v in self.exponents().items()]
        write_csv(dpath / 'bench_exponents.csv', rows, columns=['strategy', 'exponent'])
        return dpath


def _bench_settings(strategy, run_cfg):
    theta_strategy = 'npf' if strategy.startswith('npf') else strategy
    bs = strategy == 'npf-bs'
    run = RunConfig(**(ub.udict(run_cfg.to_dict()) | {'strategy': theta_strategy}))
    tcfg = TrainerConfig(iterations=1, backward_sampling=bs, rao_blackwell=bs)
    return run, tcfg


def runtime_benchmark(model_cfg, run_cfg, policy, params, rng, horizons=(25, 50),
                      strategies=BENCH_STRATEGIES, repeats=3, verbose=0):
    """
    Median wall time of one amortization iteration per strategy and horizon.

    Strategies are ``npf`` (genealogy reference, single-path score),
    ``npf-bs`` (backward sampling with the Rao-Blackwellized score), ``ibis``
    and ``exact``.

    Returns:
        BenchReport
    """
    grid = [(s, int(h)) for s in strategies for h in horizons]
    rows = []
    for strategy, horizon in ub.ProgIter(grid, desc='bench', verbose=verbose):
        model = PendulumModel(model_cfg, horizon=horizon)
        run, tcfg = _bench_settings(strategy, run_cfg)
        nested = NestedFilter(model, policy, run)
        reference = initial_reference(model, policy, params, run, rng.child(0))
        state = TrainState(params, reference)
        times = []
        for r in range(repeats):
            with ub.Timer() as timer:
                msc_iterate(state, nested, tcfg, rng.child(1, r))
            times.append(timer.elapsed)
        rows.append({'strategy': strategy, 'horizon': horizon,
                     'median_seconds': float(np.median(times)), 'repeats': repeats})
    return BenchReport(rows)
