"""
Per-trajectory approximations of the parameter posterior ``p(theta | z_{0:t})``.

Every outer particle of the nested filter owns one belief about ``theta``.
Three strategies are available:

* ``npf`` - a cloud of ``M`` particles advanced by reweight, multinomial
  resample and an additive Gaussian jitter whose per-dimension standard
  deviation is ``s / sqrt(M)``. Constant cost per step.
* ``ibis`` - the same reweight and resample, followed by random-walk
  Metropolis-Hastings moves that target the exact posterior given the whole
  prefix. The cost of a step grows linearly with ``t``.
* ``exact`` - the closed-form Gaussian posterior of a conjugate model.

Example:
    >>> from ionpf.theta_filter import *  # NOQA
    >>> from ionpf.model import PendulumModel
    >>> from ionpf.core import RngStream
    >>> model = PendulumModel(horizon=3)
    >>> kernel = JitterConfig(num_theta=64).kernel(model.prior)
    >>> cloud = cloud_init(model.prior, 64, RngStream(0))
    >>> x1 = model.sample_transition(model.x0, 0.9, model.prior.mean, RngStream(1))
    >>> cloud = cloud_step_npf(cloud, model.x0, 0.9, x1, kernel, model, RngStream(2))
    >>> assert cloud.particles.shape == (64, 3)
    >>> assert np.allclose(cloud.log_weights.values, 0)
"""
import numpy as np
import scriptconfig as scfg
import ubelt as ub
from scipy.special import logsumexp

from ionpf.core import LogWeights, log_sum_exp, multinomial_resample
from ionpf.exceptions import ConfigError, DegenerateCloudError
from ionpf.model import GaussianBelief

LOG_2PI = np.log(2 * np.pi)

THETA_STRATEGIES = ['npf', 'ibis', 'exact']


def rwmh_scale(dim):
    """ Proposal covariance multiplier ``2.38 ** 2 / dim`` """
    return 2.38 ** 2 / dim


class JitterConfig(scfg.DataConfig):
    """
    Inner filter settings.
    """
    num_theta = scfg.Value(128, type=int, alias=['M'], help='number of theta particles per outer particle')
    base_scale = scfg.Value(None, help=(
        'per-dimension jitter scale s, the kernel std is s / sqrt(M). '
        'Defaults to prior_fraction times the prior std'))
    prior_fraction = scfg.Value(0.5, type=float, help='default jitter scale as a fraction of the prior std')
    clamp_low = scfg.Value(None, help='optional per-dimension lower bound for jittered particles')
    clamp_high = scfg.Value(None, help='optional per-dimension upper bound for jittered particles')
    ibis_moves = scfg.Value(3, type=int, help='RWMH moves per step of the ibis strategy')

    def __post_init__(self):
        if self.num_theta < 1:
            raise ConfigError('num_theta must be at least 1, got {}'.format(self.num_theta))
        if self.ibis_moves < 0:
            raise ConfigError('ibis_moves must be nonnegative, got {}'.format(self.ibis_moves))
        if self.base_scale is not None and np.any(np.asarray(self.base_scale, dtype=float) < 0):
            raise ConfigError('base_scale must be nonnegative, got {}'.format(self.base_scale))
        if not self.prior_fraction >= 0:
            raise ConfigError('prior_fraction must be nonnegative')

    def kernel(self, prior):
        """
        Resolve the jitter kernel for a given prior.

        Args:
            prior (GaussianBelief): used when ``base_scale`` is unset

        Returns:
            JitterKernel
        """
        if self.base_scale is None:
            scale = self.prior_fraction * np.sqrt(np.diag(prior.cov))
        else:
            scale = np.broadcast_to(np.asarray(self.base_scale, dtype=float), (prior.dim,))
        clamp = None
        if self.clamp_low is not None or self.clamp_high is not None:
            low = -np.inf if self.clamp_low is None else self.clamp_low
            high = np.inf if self.clamp_high is None else self.clamp_high
            clamp = (np.broadcast_to(np.asarray(low, dtype=float), (prior.dim,)),
                     np.broadcast_to(np.asarray(high, dtype=float), (prior.dim,)))
        return JitterKernel(scale, self.num_theta, clamp=clamp)


class JitterKernel(ub.NiceRepr):
    """
    Additive Gaussian jitter ``theta' = theta + Normal(0, diag(s ** 2 / M))``.

    Attributes:
        scale (ndarray): the per-dimension base scale ``s``
        num_theta (int): the cloud size ``M``
        std (ndarray): the actual kernel std ``s / sqrt(M)``
        clamp (None | Tuple[ndarray, ndarray]): optional box
    """

    def __init__(self, scale, num_theta, clamp=None):
        self.scale = np.array(scale, dtype=float)
        if np.any(self.scale < 0):
            raise ConfigError('jitter scale must be nonnegative')
        self.num_theta = int(num_theta)
        self.std = self.scale / np.sqrt(self.num_theta)
        self.clamp = clamp

    def __nice__(self):
        return 'M={}, std={}'.format(self.num_theta, np.round(self.std, 6).tolist())


def jitter_kernel(theta, kernel, rng):
    """
    Perturb parameters with the jitter kernel.

    Args:
        theta (ndarray): one parameter ``(d,)`` or a stack ``(K, d)``
        kernel (JitterKernel): the kernel
        rng (RngStream): random stream

    Returns:
        ndarray: same shape as ``theta``

    Example:
        >>> from ionpf.theta_filter import *  # NOQA
        >>> from ionpf.core import RngStream
        >>> theta = np.array([1.0, 2.0, 3.0])
        >>> kernel = JitterKernel(np.zeros(3), 10)
        >>> assert np.array_equal(jitter_kernel(theta, kernel, RngStream(0)), theta)
    """
    theta = np.asarray(theta, dtype=float)
    noise = rng.gen.standard_normal(theta.shape)
    out = theta + kernel.std * noise
    if kernel.clamp is not None:
        out = np.clip(out, kernel.clamp[0], kernel.clamp[1])
    return out


def jitter_logpdf(theta_next, theta_prev, kernel):
    """
    Pairwise log-densities ``log kappa(theta_next[m] | theta_prev[k])``.

    Dimensions with zero scale are point masses. The optional clamp box is
    not part of the density.

    Args:
        theta_next (ndarray): shape ``(M', d)``
        theta_prev (ndarray): shape ``(K, d)``
        kernel (JitterKernel): the kernel

    Returns:
        ndarray: shape ``(M', K)``
    """
    theta_next = np.atleast_2d(theta_next)
    theta_prev = np.atleast_2d(theta_prev)
    diff = theta_next[:, None, :] - theta_prev[None, :, :]
    std = kernel.std
    free = std > 0
    logp = np.zeros(diff.shape[:2])
    if np.any(free):
        z = diff[..., free] / std[free]
        logp += np.sum(-0.5 * z ** 2 - np.log(std[free]) - 0.5 * LOG_2PI, axis=-1)
    if not np.all(free):
        pinned = np.all(diff[..., ~free] == 0, axis=-1)
        logp = np.where(pinned, logp, -np.inf)
    return logp


class ThetaCloud(ub.NiceRepr):
    """
    A weighted particle approximation of the parameter posterior.

    Attributes:
        particles (ndarray): shape ``(M, d)``
        log_weights (LogWeights): current weights
        ancestors (ndarray | None): resampling indices of the last step
        source_log_weights (ndarray | None): the reweighted log-weights the
            last resampling step drew its indices from
    """

    def __init__(self, particles, log_weights=None, ancestors=None, source_log_weights=None):
        particles = np.atleast_2d(np.asarray(particles, dtype=float))
        if not np.all(np.isfinite(particles)):
            raise DegenerateCloudError('theta particles must be finite')
        if log_weights is None:
            log_weights = LogWeights.uniform(len(particles))
        elif not isinstance(log_weights, LogWeights):
            log_weights = LogWeights(log_weights)
        if len(log_weights) != len(particles):
            raise ValueError('need one weight per particle')
        self.particles = particles
        self.log_weights = log_weights
        self.ancestors = ancestors
        self.source_log_weights = source_log_weights

    def __nice__(self):
        return 'M={}, ess={:.1f}'.format(len(self), self.log_weights.ess())

    def __len__(self):
        return len(self.particles)

    def mean(self):
        return self.log_weights.normalized() @ self.particles

    def cov(self):
        probs = self.log_weights.normalized()
        centered = self.particles - probs @ self.particles
        return (centered * probs[:, None]).T @ centered

    def expectation(self, func):
        """ Weighted average of ``func`` evaluated row-wise on the particles """
        values = np.asarray(func(self.particles), dtype=float)
        return self.log_weights.normalized() @ values


def cloud_init(prior, num_theta, rng):
    """
    Draw ``M`` i.i.d. particles from the prior with uniform weights.

    Args:
        prior (GaussianBelief): parameter prior
        num_theta (int): cloud size, at least one
        rng (RngStream): random stream

    Returns:
        ThetaCloud
    """
    if num_theta < 1:
        raise ValueError('num_theta must be at least 1')
    particles = np.atleast_2d(prior.sample(rng, num_theta))
    return ThetaCloud(particles)


def cloud_reweight(cloud, x_prev, xi, x_next, model):
    """
    Set the weights to the transition log-density of each particle.

    The policy factor does not depend on ``theta``, so only the transition
    enters the weights.

    Raises:
        DegenerateCloudError: if no particle is compatible with the transition

    Example:
        >>> from ionpf.theta_filter import *  # NOQA
        >>> from ionpf.model import PendulumModel
        >>> model = PendulumModel()
        >>> cloud = ThetaCloud(np.tile(model.prior.mean, (3, 1)))
        >>> x1 = np.array([0.0, 0.05])
        >>> out = cloud_reweight(cloud, model.x0, 1.0, x1, model)
        >>> assert np.allclose(out.log_weights.normalized(), 1 / 3)
    """
    logw = np.asarray(model.transition_logpdf(x_next, x_prev, xi, cloud.particles), dtype=float)
    logw = np.where(np.isnan(logw), -np.inf, logw)
    if np.all(logw == -np.inf):
        raise DegenerateCloudError(
            'all {} theta particles have zero transition density'.format(len(cloud)))
    return ThetaCloud(cloud.particles, logw, ancestors=cloud.ancestors,
                      source_log_weights=cloud.source_log_weights)


def _resample(reweighted, rng):
    idxs = multinomial_resample(reweighted.log_weights, len(reweighted), rng)
    return idxs, reweighted.particles[idxs]


def cloud_step_npf(cloud, x_prev, xi, x_next, kernel, model, rng):
    """
    Reweight, resample (recording the indices) and jitter the survivors.

    Returns:
        ThetaCloud: uniform weights, ``ancestors`` set to the resampling
        indices and ``source_log_weights`` to the reweighted log-weights
    """
    reweighted = cloud_reweight(cloud, x_prev, xi, x_next, model)
    idxs, survivors = _resample(reweighted, rng.child(0))
    jittered = jitter_kernel(survivors, kernel, rng.child(1))
    return ThetaCloud(jittered, ancestors=idxs,
                      source_log_weights=reweighted.log_weights.values)


def rwmh_moves(particles, log_target, moves, cov, rng):
    """
    Random-walk Metropolis-Hastings applied independently to each particle.

    Args:
        particles (ndarray): shape ``(K, d)``
        log_target (callable): maps a ``(K, d)`` stack to ``(K,)`` log-densities
        moves (int): number of sweeps
        cov (ndarray): proposal covariance ``(d, d)``
        rng (RngStream): random stream

    Returns:
        Tuple[ndarray, float]: moved particles and the acceptance rate

    Example:
        >>> from ionpf.theta_filter import rwmh_moves
        >>> from ionpf.core import RngStream
        >>> import numpy as np
        >>> start = np.zeros((500, 1))
        >>> target = lambda th: -0.5 * th[:, 0] ** 2
        >>> out, rate = rwmh_moves(start, target, 50, np.eye(1) * 2.38 ** 2, RngStream(0))
        >>> assert 0.2 < rate < 0.7
        >>> assert abs(out.std() - 1) < 0.15
    """
    particles = np.array(particles, dtype=float)
    if moves == 0:
        return particles, 0.0
    dim = particles.shape[1]
    cov = np.asarray(cov, dtype=float).reshape(dim, dim)
    ridge = 1e-12 * max(1.0, np.trace(cov) / dim)
    chol = np.linalg.cholesky(cov + ridge * np.eye(dim))
    current = np.asarray(log_target(particles), dtype=float)
    accepted = 0
    for move in range(moves):
        gen = rng.child(move).gen
        proposal = particles + gen.standard_normal(particles.shape) @ chol.T
        prop_logp = np.asarray(log_target(proposal), dtype=float)
        log_u = np.log(gen.uniform(size=len(particles)))
        with np.errstate(invalid='ignore'):
            accept = log_u < prop_logp - current
        particles[accept] = proposal[accept]
        current[accept] = prop_logp[accept]
        accepted += int(accept.sum())
    return particles, accepted / (moves * len(particles))


def cloud_step_ibis(cloud, xs, xis, moves, model, rng):
    """
    Reweight with the newest transition, resample, and rejuvenate with
    ``moves`` RWMH sweeps targeting ``p(theta | z_{0:t})``.

    Args:
        cloud (ThetaCloud): cloud after the previous step
        xs (ndarray): the full state prefix ``x_{0:t}``
        xis (ndarray): the designs ``xi_{0:t-1}``
        moves (int): number of RWMH sweeps
        model (StateSpaceModel): the model
        rng (RngStream): random stream

    Returns:
        Tuple[ThetaCloud, float]: the new cloud and the acceptance rate
    """
    xs = np.asarray(xs, dtype=float)
    xis = np.asarray(xis, dtype=float)
    reweighted = cloud_reweight(cloud, xs[-2], xis[-1], xs[-1], model)
    idxs, survivors = _resample(reweighted, rng.child(0))
    rate = 0.0
    if moves > 0:
        centered = survivors - survivors.mean(axis=0)
        emp_cov = centered.T @ centered / len(survivors)
        cov = rwmh_scale(survivors.shape[1]) * emp_cov

        def log_target(thetas):
            return model.prior_logpdf(thetas) + model.history_loglik(xs, xis, thetas)

        survivors, rate = rwmh_moves(survivors, log_target, moves, cov, rng.child(1))
    new = ThetaCloud(survivors, ancestors=idxs,
                     source_log_weights=reweighted.log_weights.values)
    return new, rate


def cloud_transition_logpdf_rb(cloud_prev, cloud_next, kernel):
    """
    The theta transition with the resampling indices summed out:

    .. code::

        sum_m log sum_k W[k] kappa(theta_next[m] | theta_prev[k])

    Args:
        cloud_prev (ThetaCloud): particles before resampling, carrying the
            reweighted log-weights ``W``
        cloud_next (ThetaCloud): the jittered cloud
        kernel (JitterKernel): the jitter kernel

    Returns:
        float

    Example:
        >>> from ionpf.theta_filter import *  # NOQA
        >>> kernel = JitterKernel([1.0, 1.0, 1.0], 1)
        >>> prev = ThetaCloud([[0.0, 0.0, 0.0]])
        >>> nxt = ThetaCloud([[1.0, 0.0, 0.0]])
        >>> want = -0.5 - 1.5 * np.log(2 * np.pi)
        >>> assert np.isclose(cloud_transition_logpdf_rb(prev, nxt, kernel), want)
    """
    log_probs = cloud_prev.log_weights.log_normalized()
    pair = jitter_logpdf(cloud_next.particles, cloud_prev.particles, kernel)
    with np.errstate(divide='ignore'):
        per_particle = logsumexp(pair + log_probs[None, :], axis=1)
    return float(np.sum(per_particle))


def cloud_marginal_logpdf(cloud, x, xi, x_next, model):
    """
    Log of the cloud-averaged transition density
    ``log sum_m W[m] f(x_next | x, xi, theta[m])``.
    """
    logf = np.asarray(model.transition_logpdf(x_next, x, xi, cloud.particles), dtype=float)
    log_probs = cloud.log_weights.log_normalized()
    return log_sum_exp(log_probs + logf)


def run_inner_filter(model, xs, xis, kernel, rng, strategy='npf', moves=3):
    """
    Run the static-parameter particle filter on a fixed trajectory.

    Args:
        model (StateSpaceModel): model
        xs (ndarray): states ``(T + 1, S)``
        xis (ndarray): designs ``(T,)``
        kernel (JitterKernel): jitter kernel, its ``num_theta`` sets ``M``
        rng (RngStream): random stream
        strategy (str): ``npf`` or ``ibis``
        moves (int): RWMH sweeps per step of the ibis strategy

    Returns:
        List[ThetaCloud]: the clouds after consuming ``z_{0:t}`` for every t

    Example:
        >>> from ionpf.theta_filter import *  # NOQA
        >>> from ionpf.model import PendulumModel
        >>> from ionpf.core import RngStream
        >>> model = PendulumModel(horizon=4)
        >>> xs = [model.x0]
        >>> xis = [0.5, -0.5, 0.5, -0.5]
        >>> for t, xi in enumerate(xis):
        >>>     xs.append(model.sample_transition(xs[-1], xi, model.prior.mean, RngStream(0, t)))
        >>> kernel = JitterConfig(num_theta=32).kernel(model.prior)
        >>> clouds = run_inner_filter(model, np.array(xs), xis, kernel, RngStream(1))
        >>> assert len(clouds) == 5
    """
    xs = np.asarray(xs, dtype=float)
    xis = np.asarray(xis, dtype=float)
    cloud = cloud_init(model.prior_belief(), kernel.num_theta, rng.child(0))
    clouds = [cloud]
    for t in range(len(xis)):
        step_rng = rng.child(t + 1)
        if strategy == 'npf':
            cloud = cloud_step_npf(cloud, xs[t], xis[t], xs[t + 1], kernel, model, step_rng)
        elif strategy == 'ibis':
            cloud, _ = cloud_step_ibis(cloud, xs[:t + 2], xis[:t + 1], moves, model, step_rng)
        else:
            raise ConfigError('unknown inner filter strategy {!r}'.format(strategy))
        clouds.append(cloud)
    return clouds


class ThetaStrategy(ub.NiceRepr):
    """
    How an outer particle represents and advances its parameter belief.

    A belief is a :class:`ThetaCloud` for the particle strategies and a
    :class:`GaussianBelief` for the exact one.
    """
    name = None
    needs_path = False

    def __init__(self, model, kernel):
        self.model = model
        self.kernel = kernel

    def __nice__(self):
        return '{}, {}'.format(self.name, self.kernel)

    def init(self, rng):
        return cloud_init(self.model.prior_belief(), self.kernel.num_theta, rng)

    def marginal_logpdf(self, belief, x, xi, x_next):
        return cloud_marginal_logpdf(belief, x, xi, x_next, self.model)

    def sample_theta(self, belief, rng):
        """ A uniform pick from the cloud """
        idx = rng.gen.integers(len(belief))
        return belief.particles[idx]

    def advance(self, belief, xs, xis, rng):
        """
        Consume the newest transition of the path ``(xs, xis)``.

        Returns:
            Tuple[object, dict]: new belief and step statistics
        """
        raise NotImplementedError


class JitterStrategy(ThetaStrategy):
    name = 'npf'

    def advance(self, belief, xs, xis, rng):
        cloud = cloud_step_npf(belief, xs[-2], xis[-1], xs[-1], self.kernel, self.model, rng)
        return cloud, {}


class IbisStrategy(ThetaStrategy):
    name = 'ibis'
    needs_path = True

    def __init__(self, model, kernel, moves=3):
        super().__init__(model, kernel)
        self.moves = int(moves)

    def advance(self, belief, xs, xis, rng):
        cloud, rate = cloud_step_ibis(belief, xs, xis, self.moves, self.model, rng)
        return cloud, {'acceptance_rate': rate}


class ExactStrategy(ThetaStrategy):
    name = 'exact'

    def __init__(self, model, kernel=None):
        if not model.is_conjugate:
            raise ConfigError('the exact strategy needs a conjugate model')
        super().__init__(model, kernel)

    def init(self, rng):
        return self.model.prior_belief()

    def marginal_logpdf(self, belief, x, xi, x_next):
        return self.model.conjugate_marginal_loglik(belief, x, xi, x_next)

    def sample_theta(self, belief, rng):
        return belief.sample(rng)

    def advance(self, belief, xs, xis, rng):
        return self.model.conjugate_update(belief, xs[-2], xis[-1], xs[-1]), {}


def coerce_strategy(name, model, jitter_config=None):
    """
    Args:
        name (str): one of ``npf``, ``ibis``, ``exact``
        model (StateSpaceModel): the model
        jitter_config (JitterConfig | None): inner filter settings

    Returns:
        ThetaStrategy
    """
    if jitter_config is None:
        jitter_config = JitterConfig()
    kernel = jitter_config.kernel(model.prior_belief())
    if name == 'npf':
        return JitterStrategy(model, kernel)
    elif name == 'ibis':
        return IbisStrategy(model, kernel, moves=jitter_config.ibis_moves)
    elif name == 'exact':
        return ExactStrategy(model, kernel)
    raise ConfigError('unknown theta strategy {!r}, expected one of {}'.format(name, THETA_STRATEGIES))


def belief_mean(belief):
    """ Posterior mean of a cloud or Gaussian belief """
    if isinstance(belief, GaussianBelief):
        return belief.mean
    return belief.mean()
