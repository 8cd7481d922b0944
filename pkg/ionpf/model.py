"""
State-space model contract and the conditionally linear-Gaussian pendulum.

The pendulum state is ``x = [q, qdot]`` (angle in radians, angular velocity
in radians per second). The design ``xi`` in ``[-1, 1]`` is the applied
torque. The parameter vector is the transformed

.. code::

    theta = [3 g / (2 l), 3 d / (m l^2), 3 / (m l^2)]

so that the Euler-Maruyama step is linear in ``theta``:

.. code::

    q[t+1]    = q[t] + qdot[t] * dt
    qdot[t+1] = qdot[t] + h(x[t], xi[t]) @ theta * dt + diffusion * sqrt(dt) * eps
    h(x, xi)  = [-sin(q), -qdot, xi]

Only the velocity is noisy, so everything that can be learned about ``theta``
flows through the velocity increment. With a Gaussian prior this gives a
scalar-observation Bayesian linear regression with closed-form posteriors and
predictive densities (the conjugate oracle).

Example:
    >>> from ionpf.model import *  # NOQA
    >>> from ionpf.core import RngStream
    >>> model = PendulumModel()
    >>> rng = RngStream(0)
    >>> theta = model.prior.mean
    >>> x1 = model.sample_transition(model.x0, 0.5, theta, rng)
    >>> logp = model.transition_logpdf(x1, model.x0, 0.5, theta)
    >>> belief = model.conjugate_update(model.prior, model.x0, 0.5, x1)
    >>> assert belief.cov[2, 2] < model.prior.cov[2, 2]
"""
import abc
import numpy as np
import scriptconfig as scfg
import ubelt as ub
from scipy.linalg import cho_factor, cho_solve

from ionpf.exceptions import ConfigError, NumericalError

LOG_2PI = np.log(2 * np.pi)

# Tolerance on the deterministic position update
POSITION_ATOL = 1e-9


class PendulumConfig(scfg.DataConfig):
    """
    Configuration of the stochastic pendulum benchmark.
    """
    dt = scfg.Value(0.05, type=float, help='Euler-Maruyama step size in seconds')
    horizon = scfg.Value(50, type=int, alias=['T'], help='number of experiments (time steps)')
    diffusion = scfg.Value(0.1, type=float, help=(
        'noise scale on the angular velocity, the velocity noise variance '
        'per step is diffusion ** 2 * dt'))
    x0 = scfg.Value([0.0, 0.0], help='initial state [angle, angular velocity]')
    prior_mean = scfg.Value([14.7, 0.0, 3.0], help='prior mean of theta')
    prior_cov = scfg.Value([0.1, 0.01, 0.1], help=(
        'prior covariance of theta, either the diagonal or a full 3x3 matrix'))
    gravity = scfg.Value(9.81, type=float, help='gravitational acceleration (only used to interpret theta)')
    damping = scfg.Value(0.1, type=float, help='damping constant (only used to interpret theta)')

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError('model.dt must be positive, got {!r}'.format(self.dt))
        if self.horizon < 1:
            raise ConfigError('model.horizon must be at least 1, got {!r}'.format(self.horizon))
        if not self.diffusion > 0:
            raise ConfigError('model.diffusion must be positive, got {!r}'.format(self.diffusion))
        if len(self.x0) != 2:
            raise ConfigError('model.x0 must have two entries, got {!r}'.format(self.x0))
        if len(self.prior_mean) != 3:
            raise ConfigError('model.prior_mean must have three entries')

    def prior_belief(self):
        cov = np.array(self.prior_cov, dtype=float)
        if cov.ndim == 1:
            cov = np.diag(cov)
        try:
            return GaussianBelief(self.prior_mean, cov)
        except NumericalError as ex:
            raise ConfigError('model.prior_cov is not a valid covariance: {}'.format(ex))


class AugmentedState(ub.NiceRepr):
    """
    The state ``x_t`` bundled with the design ``xi_{t-1}`` that produced it.

    Example:
        >>> from ionpf.model import AugmentedState
        >>> z = AugmentedState([0.1, -0.2], 0.5)
        >>> z.as_vector().tolist()
        [0.1, -0.2, 0.5]
        >>> AugmentedState([0.0, 0.0]).as_vector().tolist()
        [0.0, 0.0, 0.0]
    """

    def __init__(self, x, xi_prev=None):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise NumericalError('state must be finite, got {}'.format(x))
        if xi_prev is not None:
            xi_prev = float(xi_prev)
            if not -1 <= xi_prev <= 1:
                raise ValueError('designs live in [-1, 1], got {}'.format(xi_prev))
        self.x = x
        self.xi_prev = xi_prev

    def __nice__(self):
        return 'x={}, xi_prev={}'.format(np.round(self.x, 4).tolist(), self.xi_prev)

    def as_vector(self):
        """ The policy input ``[q, qdot, xi_prev]`` with zero for a missing design """
        xi = 0.0 if self.xi_prev is None else self.xi_prev
        return np.append(self.x, xi)


def stack_augmented(xs, xis):
    """
    Stack the policy inputs ``z_0, ..., z_T`` of a trajectory.

    Args:
        xs (ndarray): states of shape ``(T + 1, 2)``
        xis (ndarray): designs of shape ``(T,)``

    Returns:
        ndarray: shape ``(T + 1, 3)`` where row ``t`` is ``[x_t, xi_{t-1}]``
        and the first row has a zero design slot.
    """
    xs = np.asarray(xs, dtype=float)
    xis = np.asarray(xis, dtype=float).reshape(-1)
    prev = np.concatenate([[0.0], xis])
    return np.concatenate([xs, prev[:, None]], axis=1)


class GaussianBelief(ub.NiceRepr):
    """
    Gaussian distribution over theta.

    Example:
        >>> from ionpf.model import prior_default
        >>> import numpy as np
        >>> belief = prior_default()
        >>> expected = 0.5 * np.log((2 * np.pi * np.e) ** 3 * 1e-4)
        >>> assert np.isclose(belief.entropy(), expected)
    """

    def __init__(self, mean, cov):
        mean = np.array(mean, dtype=float).reshape(-1)
        cov = np.array(cov, dtype=float)
        dim = len(mean)
        if cov.shape != (dim, dim):
            raise ValueError('covariance shape {} does not match mean dim {}'.format(cov.shape, dim))
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise NumericalError('covariance is not symmetric')
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise NumericalError('covariance is not positive definite')
        self.mean = mean
        self.cov = cov
        self.chol = chol

    def __nice__(self):
        return 'mean={}, std={}'.format(
            np.round(self.mean, 4).tolist(), np.round(np.sqrt(np.diag(self.cov)), 4).tolist())

    @property
    def dim(self):
        return len(self.mean)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def entropy(self):
        return 0.5 * (self.dim * (LOG_2PI + 1.0) + self.logdet())

    def sample(self, rng, num=None):
        """
        Args:
            rng (RngStream): random stream
            num (int | None): number of draws, None for a single vector

        Returns:
            ndarray: shape ``(dim,)`` or ``(num, dim)``
        """
        if num is None:
            return self.mean + self.chol @ rng.gen.standard_normal(self.dim)
        eps = rng.gen.standard_normal((num, self.dim))
        return self.mean + eps @ self.chol.T

    def logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        diff = theta - self.mean
        sol = np.linalg.solve(self.chol, diff.T)
        maha = np.sum(sol ** 2, axis=0)
        return -0.5 * (maha + self.dim * LOG_2PI + self.logdet())


def prior_default():
    """
    The Gaussian prior of the pendulum benchmark.

    Returns:
        GaussianBelief: mean ``[14.7, 0, 3.0]``, covariance ``diag(0.1, 0.01, 0.1)``
    """
    return GaussianBelief([14.7, 0.0, 3.0], np.diag([0.1, 0.01, 0.1]))


def theta_from_physical(mass, length, gravity=9.81, damping=0.1):
    """
    Map the physical pendulum parameters to the linear parameterization.

    Example:
        >>> from ionpf.model import theta_from_physical
        >>> theta = theta_from_physical(1.0, 1.0)
        >>> theta.round(3).tolist()
        [14.715, 0.3, 3.0]
    """
    inertia = mass * length ** 2
    return np.array([3 * gravity / (2 * length), 3 * damping / inertia, 3 / inertia])


def drift_features(x, xi):
    """
    The drift features ``h(x, xi) = [-sin(q), -qdot, xi]``.

    Example:
        >>> from ionpf.model import drift_features
        >>> import numpy as np
        >>> drift_features([np.pi / 2, 1.0], 0.5).tolist()
        [-1.0, -1.0, 0.5]
    """
    return np.array([-np.sin(x[0]), -x[1], xi], dtype=float)


class StateSpaceModel(abc.ABC):
    """
    Contract for a Markovian state-space model with a static parameter.

    Subclasses define the parameter prior and the transition density
    ``f(x_next | x, xi, theta)``. A model whose posterior is available in
    closed form sets ``is_conjugate`` and implements the ``conjugate_*``
    methods, which enables the exact theta strategy and the closed-form
    evaluation metrics.
    """
    is_conjugate = False
    state_dim = None
    theta_dim = None
    horizon = None
    x0 = None

    @abc.abstractmethod
    def sample_prior(self, rng, num):
        """ Draw ``num`` parameters, shape ``(num, theta_dim)`` """

    @abc.abstractmethod
    def prior_logpdf(self, theta):
        """ Log prior density of one or more parameters """

    @abc.abstractmethod
    def transition_logpdf(self, x_next, x, xi, theta):
        """ Log transition density, vectorized over a stack of parameters """

    @abc.abstractmethod
    def sample_transition(self, x, xi, theta, rng):
        """ Draw one next state """

    def history_loglik(self, xs, xis, thetas):
        """
        Log-likelihood of a whole trajectory for each parameter in a stack.

        Args:
            xs (ndarray): states, shape ``(t + 1, state_dim)``
            xis (ndarray): designs, shape ``(t,)``
            thetas (ndarray): parameters, shape ``(K, theta_dim)``

        Returns:
            ndarray: shape ``(K,)``
        """
        total = np.zeros(len(thetas))
        for s in range(len(xis)):
            total += self.transition_logpdf(xs[s + 1], xs[s], xis[s], thetas)
        return total

    def prior_belief(self):
        raise NotImplementedError('{} has no Gaussian prior'.format(type(self).__name__))

    def conjugate_update(self, belief, x, xi, x_next):
        raise NotImplementedError('{} is not conjugate'.format(type(self).__name__))

    def conjugate_marginal_loglik(self, belief, x, xi, x_next):
        raise NotImplementedError('{} is not conjugate'.format(type(self).__name__))


class PendulumModel(StateSpaceModel, ub.NiceRepr):
    """
    The conditionally linear-Gaussian stochastic pendulum.

    Args:
        config (PendulumConfig | dict | None): environment configuration
        **kwargs: overrides for :class:`PendulumConfig`

    Example:
        >>> from ionpf.model import *  # NOQA
        >>> model = PendulumModel(horizon=3)
        >>> x, xi, theta = np.array([0.3, 0.1]), 0.2, np.array([14., .1, 3.])
        >>> x_next = np.array([x[0] + x[1] * model.dt, 0.4])
        >>> sigma2 = model.noise_var
        >>> resid = x_next[1] - x[1] - drift_features(x, xi) @ theta * model.dt
        >>> want = -0.5 * resid ** 2 / sigma2 - 0.5 * np.log(2 * np.pi * sigma2)
        >>> assert np.isclose(model.transition_logpdf(x_next, x, xi, theta), want)
        >>> bad = x_next + [1e-3, 0]
        >>> assert model.transition_logpdf(bad, x, xi, theta) == -np.inf
    """
    is_conjugate = True
    state_dim = 2
    theta_dim = 3

    def __init__(self, config=None, **kwargs):
        if config is None:
            config = PendulumConfig(**kwargs)
        elif isinstance(config, dict):
            config = PendulumConfig(**ub.udict(config) | kwargs)
        elif kwargs:
            config = PendulumConfig(**ub.udict(config.to_dict()) | kwargs)
        self.config = config
        self.dt = float(config.dt)
        self.horizon = int(config.horizon)
        self.diffusion = float(config.diffusion)
        self.noise_var = self.diffusion ** 2 * self.dt
        self.noise_std = np.sqrt(self.noise_var)
        self.x0 = np.array(config.x0, dtype=float)
        self.prior = config.prior_belief()

    def __nice__(self):
        return 'T={}, dt={}, diffusion={}'.format(self.horizon, self.dt, self.diffusion)

    def prior_belief(self):
        return self.prior

    def sample_prior(self, rng, num):
        return self.prior.sample(rng, num)

    def prior_logpdf(self, theta):
        return self.prior.logpdf(theta)

    def _check_finite(self, *arrays):
        for arr in arrays:
            if not np.all(np.isfinite(arr)):
                raise NumericalError('non-finite input to the pendulum transition')

    def _regression(self, x, xi, x_next):
        """
        The scalar regression hidden in one transition.

        Returns:
            Tuple[ndarray, float, bool]: regressor ``h * dt``, observed
            velocity increment, and whether the position is consistent.
        """
        x = np.asarray(x, dtype=float)
        x_next = np.asarray(x_next, dtype=float)
        self._check_finite(x, x_next, xi)
        phi = drift_features(x, xi) * self.dt
        obs = x_next[1] - x[1]
        consistent = abs(x_next[0] - (x[0] + x[1] * self.dt)) <= POSITION_ATOL
        return phi, obs, consistent

    def transition_logpdf(self, x_next, x, xi, theta):
        """
        Gaussian log-density of the velocity increment, ``-inf`` if the
        position does not follow the deterministic update.

        Args:
            x_next (ndarray): next state
            x (ndarray): current state
            xi (float): design
            theta (ndarray): shape ``(3,)`` or ``(K, 3)``

        Returns:
            float | ndarray: log density, one per parameter
        """
        theta = np.asarray(theta, dtype=float)
        self._check_finite(theta)
        phi, obs, consistent = self._regression(x, xi, x_next)
        resid = obs - theta @ phi
        if not consistent:
            return np.full_like(resid, -np.inf) if np.ndim(resid) else -np.inf
        return -0.5 * resid ** 2 / self.noise_var - 0.5 * (LOG_2PI + np.log(self.noise_var))

    def sample_transition(self, x, xi, theta, rng):
        """
        One Euler-Maruyama step.

        Args:
            x (ndarray): current state
            xi (float): design
            theta (ndarray): parameter vector
            rng (RngStream): random stream

        Returns:
            ndarray: next state
        """
        q, qdot = x
        drift = drift_features(x, xi) @ theta
        noise = self.noise_std * rng.gen.standard_normal()
        return np.array([q + qdot * self.dt, qdot + drift * self.dt + noise])

    def history_loglik(self, xs, xis, thetas):
        xs = np.asarray(xs, dtype=float)
        xis = np.asarray(xis, dtype=float)
        thetas = np.atleast_2d(thetas)
        if len(xis) == 0:
            return np.zeros(len(thetas))
        feats = np.stack([-np.sin(xs[:-1, 0]), -xs[:-1, 1], xis], axis=1) * self.dt
        obs = xs[1:, 1] - xs[:-1, 1]
        pos_err = np.abs(xs[1:, 0] - (xs[:-1, 0] + xs[:-1, 1] * self.dt))
        if np.any(pos_err > POSITION_ATOL):
            return np.full(len(thetas), -np.inf)
        resid = obs[:, None] - feats @ thetas.T
        const = 0.5 * (LOG_2PI + np.log(self.noise_var))
        return np.sum(-0.5 * resid ** 2 / self.noise_var - const, axis=0)

    def conjugate_update(self, belief, x, xi, x_next):
        """
        Bayesian linear-regression update of a Gaussian belief with one
        transition.

        Returns:
            GaussianBelief
        """
        phi, obs, consistent = self._regression(x, xi, x_next)
        if not consistent:
            raise NumericalError('transition violates the deterministic position update')
        if not np.any(phi):
            return belief
        cov_phi = belief.cov @ phi
        innov_var = phi @ cov_phi + self.noise_var
        gain = cov_phi / innov_var
        mean = belief.mean + gain * (obs - phi @ belief.mean)
        cov = belief.cov - np.outer(gain, gain) * innov_var
        cov = 0.5 * (cov + cov.T)
        return GaussianBelief(mean, cov)

    def conjugate_marginal_loglik(self, belief, x, xi, x_next):
        """
        Log predictive density ``log int f(x_next | x, xi, theta) N(theta; belief) dtheta``.

        Returns:
            float
        """
        phi, obs, consistent = self._regression(x, xi, x_next)
        if not consistent:
            return -np.inf
        var = self.noise_var + phi @ belief.cov @ phi
        resid = obs - phi @ belief.mean
        return float(-0.5 * resid ** 2 / var - 0.5 * (LOG_2PI + np.log(var)))

    def conjugate_batch_posterior(self, xs, xis, prior=None):
        """
        Posterior of theta after a whole trajectory, computed in one solve.

        Args:
            xs (ndarray): states, shape ``(t + 1, 2)``
            xis (ndarray): designs, shape ``(t,)``
            prior (GaussianBelief | None): defaults to the model prior

        Returns:
            GaussianBelief
        """
        if prior is None:
            prior = self.prior
        xs = np.asarray(xs, dtype=float)
        xis = np.asarray(xis, dtype=float)
        prior_prec = cho_solve(cho_factor(prior.cov), np.eye(prior.dim))
        if len(xis) == 0:
            return prior
        feats = np.stack([-np.sin(xs[:-1, 0]), -xs[:-1, 1], xis], axis=1) * self.dt
        obs = xs[1:, 1] - xs[:-1, 1]
        prec = prior_prec + feats.T @ feats / self.noise_var
        rhs = prior_prec @ prior.mean + feats.T @ obs / self.noise_var
        factor = cho_factor(prec)
        mean = cho_solve(factor, rhs)
        cov = cho_solve(factor, np.eye(prior.dim))
        cov = 0.5 * (cov + cov.T)
        return GaussianBelief(mean, cov)
