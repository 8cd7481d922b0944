"""
Stochastic design policies ``pi_phi(xi_t | z_{0:t})``.

A policy consumes the augmented states ``z_0, z_1, ...`` one at a time and
keeps a :class:`PolicyState`. The design for experiment ``t`` is drawn from
the state reached after consuming ``z_{0:t}``:

.. code::

    a  ~ Normal(mu(state; phi), sigma(phi) ** 2)
    xi = tanh(a)

so ``xi`` lives in the open interval ``(-1, 1)`` and its log-density carries
the ``tanh`` change-of-variables correction.

Three policies share the :class:`Policy` contract:

* :class:`RecurrentGaussianPolicy` - dense encoder, stacked GRU cells and a
  dense head producing the mean. ``sigma`` is a learned state-independent
  vector. Gradients are accumulated by hand-written reverse mode through the
  fixed architecture.
* :class:`LinearTanhPolicy` - a reduced policy whose mean is linear in a
  decaying trace of the inputs. Used for fast tests.
* :class:`RandomPolicy` - memoryless uniform designs, the random baseline.

The GRU variant used here applies the reset gate to the recurrent term only:

.. code::

    r  = sigmoid(W_r x + U_r h + b_r)
    u  = sigmoid(W_u x + U_u h + b_u)
    n  = tanh(W_n x + b_n + r * (U_n h))
    h' = (1 - u) * n + u * h

Example:
    >>> from ionpf.policy import *  # NOQA
    >>> from ionpf.core import RngStream
    >>> arch = PolicyArchConfig(encoder_widths=[8], embed_dim=4,
    >>>                         recurrent_widths=[4], head_widths=[8])
    >>> policy = coerce_policy(arch)
    >>> params = policy.init_params(RngStream(0))
    >>> state = policy.step(params, policy.initial_state(), [0.0, 0.0, 0.0])
    >>> xi, logp = policy.sample(params, state, RngStream(1))
    >>> assert np.allclose(logp, policy.logpdf(params, state, xi))
"""
import abc
import json
import numpy as np
import scriptconfig as scfg
import ubelt as ub
from scipy.special import expit, ndtr

from ionpf.exceptions import ArchitectureMismatchError, CheckpointError, ConfigError

LOG_2PI = np.log(2 * np.pi)
LOG_4 = np.log(4.0)

CHECKPOINT_FORMAT = 'ionpf-policy'
CHECKPOINT_VERSION = 1

POLICY_KINDS = ['gru', 'linear', 'random']


class PolicyArchConfig(scfg.DataConfig):
    """
    Architecture of the design policy.
    """
    kind = scfg.Value('gru', type=str, choices=['gru', 'linear', 'random'], help='policy family')
    input_dim = scfg.Value(3, type=int, help='dimension of the augmented state z')
    design_dim = scfg.Value(1, type=int, help='dimension of the design')
    encoder_widths = scfg.Value([256, 256], help='hidden widths of the ReLU encoder')
    embed_dim = scfg.Value(64, type=int, help='width of the encoder output')
    recurrent_widths = scfg.Value([64, 64], help='widths of the stacked GRU cells')
    head_widths = scfg.Value([256, 256], help='hidden widths of the ReLU head')
    init_log_std = scfg.Value(-1.0, type=float, help='initial log standard deviation of the pre-tanh Gaussian')
    memory = scfg.Value(0.0, type=float, help='input trace decay of the linear policy, 0 is memoryless')

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError('unknown policy kind {!r}, expected one of {}'.format(self.kind, POLICY_KINDS))
        widths = list(self.encoder_widths) + list(self.recurrent_widths) + list(self.head_widths)
        widths += [self.embed_dim, self.input_dim, self.design_dim]
        if any(int(w) < 1 for w in widths):
            raise ConfigError('policy widths must all be at least 1, got {}'.format(widths))
        if self.kind == 'gru' and len(self.recurrent_widths) == 0:
            raise ConfigError('a gru policy needs at least one recurrent layer')
        if not 0 <= self.memory < 1:
            raise ConfigError('policy.memory must be in [0, 1), got {}'.format(self.memory))


class ParamLayout(ub.NiceRepr):
    """
    Maps named parameter blocks onto a flat vector.

    Example:
        >>> from ionpf.policy import ParamLayout
        >>> import numpy as np
        >>> layout = ParamLayout([('w', (2, 3)), ('b', (2,))])
        >>> flat = np.arange(layout.size, dtype=float)
        >>> views = layout.views(flat)
        >>> views['b'].tolist()
        [6.0, 7.0]
    """

    def __init__(self, blocks):
        self.blocks = [(name, tuple(shape)) for name, shape in blocks]
        self.slices = {}
        offset = 0
        for name, shape in self.blocks:
            size = int(np.prod(shape))
            self.slices[name] = (slice(offset, offset + size), shape)
            offset += size
        self.size = offset

    def __nice__(self):
        return 'blocks={}, size={}'.format(len(self.blocks), self.size)

    def views(self, flat):
        return {name: flat[sl].reshape(shape) for name, (sl, shape) in self.slices.items()}


class PolicyParams(ub.NiceRepr):
    """
    Flat parameter vector of a policy with a gradient buffer.

    Attributes:
        flat (ndarray): the parameters ``phi``
        grad (ndarray): accumulated gradient, same shape as ``flat``
    """

    def __init__(self, flat, kind=None):
        self.flat = np.array(flat, dtype=float).reshape(-1)
        self.grad = np.zeros_like(self.flat)
        self.kind = kind
        self._views = None

    def __nice__(self):
        return 'kind={}, size={}'.format(self.kind, len(self))

    def __len__(self):
        return len(self.flat)

    def views(self, layout):
        if self._views is None or self._views[0] is not layout:
            self._views = (layout, layout.views(self.flat))
        return self._views[1]

    def copy(self):
        return PolicyParams(self.flat.copy(), kind=self.kind)

    def ascent(self, direction, step_size):
        """ New parameters ``phi + step_size * direction`` """
        return PolicyParams(self.flat + step_size * np.asarray(direction), kind=self.kind)


class PolicyState(ub.NiceRepr):
    """
    Recurrent state(s) of a batch of policy evaluations.

    Attributes:
        hidden (Tuple[ndarray, ...]): per-layer arrays of shape ``(B, H)``
        batch (int): number of histories in the batch
    """

    def __init__(self, hidden, batch):
        self.hidden = tuple(hidden)
        self.batch = int(batch)

    def __nice__(self):
        return 'batch={}, layers={}'.format(self.batch, len(self.hidden))

    def take(self, idxs):
        """ Select (and possibly repeat) histories of the batch """
        idxs = np.asarray(idxs)
        return PolicyState([h[idxs] for h in self.hidden], len(idxs))

    def top(self):
        return self.hidden[-1]


def tanh_gauss_logpdf(xi, mu, log_std):
    """
    Log-density of ``tanh(a)`` with ``a ~ Normal(mu, exp(log_std) ** 2)``.

    Args:
        xi (ndarray): designs, shape ``(B, D)``
        mu (ndarray): means, shape ``(B, D)``
        log_std (ndarray): shape ``(D,)``

    Returns:
        ndarray: shape ``(B,)``, ``-inf`` where any ``|xi| >= 1``
    """
    xi = np.asarray(xi, dtype=float)
    inside = np.all(np.abs(xi) < 1, axis=-1)
    safe = np.where(np.abs(xi) < 1, xi, 0.0)
    a = np.arctanh(safe)
    z = (a - mu) * np.exp(-log_std)
    log_jac = LOG_4 - 2 * np.abs(a) - 2 * np.log1p(np.exp(-2 * np.abs(a)))
    logp = -0.5 * z ** 2 - log_std - 0.5 * LOG_2PI - log_jac
    total = logp.sum(axis=-1)
    return np.where(inside, total, -np.inf)


def tanh_gauss_cdf(xi, mu, std):
    """ CDF of the squashed Gaussian at ``xi`` in ``(-1, 1)`` """
    return ndtr((np.arctanh(xi) - mu) / std)


def _squash(a):
    """ ``tanh`` clipped so the result stays strictly inside ``(-1, 1)`` """
    xi = np.tanh(a)
    edge = np.nextafter(1.0, 0.0)
    return np.clip(xi, -edge, edge)


def _normal_draws(rng, batch, dim):
    """
    Standard normal draws of shape ``(batch, dim)``, one stream per row if a
    list of streams is given.
    """
    if isinstance(rng, (list, tuple)):
        if len(rng) != batch:
            raise ValueError('need one stream per batch entry')
        return np.stack([r.gen.standard_normal(dim) for r in rng])
    return rng.gen.standard_normal((batch, dim))


def _as_designs(xi, batch, dim):
    xi = np.asarray(xi, dtype=float)
    return xi.reshape(batch, dim)


class Policy(abc.ABC, ub.NiceRepr):
    """
    Contract shared by all design policies.

    Attributes:
        arch (PolicyArchConfig): architecture
        memoryless (bool): True if the design distribution ignores history
    """
    memoryless = False
    kind = None

    def __init__(self, arch=None):
        if arch is None:
            arch = PolicyArchConfig(kind=self.kind)
        self.arch = arch
        self.input_dim = int(arch.input_dim)
        self.design_dim = int(arch.design_dim)
        self.layout = ParamLayout(self._blocks())

    def __nice__(self):
        return 'params={}'.format(self.num_params)

    @property
    def num_params(self):
        return self.layout.size

    @abc.abstractmethod
    def _blocks(self):
        """ Named parameter shapes """

    @abc.abstractmethod
    def init_params(self, rng):
        """ Random initialization, returns PolicyParams """

    @abc.abstractmethod
    def initial_state(self, batch=1):
        """ State before consuming ``z_0`` """

    @abc.abstractmethod
    def step(self, params, state, z):
        """ Consume one augmented state per history, returns a new PolicyState """

    @abc.abstractmethod
    def head(self, params, state):
        """ Mean of shape ``(B, D)`` and log-std of shape ``(D,)`` """

    @abc.abstractmethod
    def score(self, params, xs, xis, weights=None):
        """ Gradient of the (weighted) trajectory log-density """

    def _coerce_z(self, z, batch):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(z.reshape(-1, self.input_dim), (batch, self.input_dim))

    def sample(self, params, state, rng):
        """
        Draw one design per history.

        Args:
            params (PolicyParams): parameters
            state (PolicyState): states after consuming the histories
            rng (RngStream | List[RngStream]): one stream, or one per history

        Returns:
            Tuple[ndarray, ndarray]: designs ``(B, D)`` and log-densities ``(B,)``
        """
        mu, log_std = self.head(params, state)
        eps = _normal_draws(rng, state.batch, self.design_dim)
        xi = _squash(mu + np.exp(log_std) * eps)
        return xi, self.logpdf(params, state, xi)

    def logpdf(self, params, state, xi):
        """
        Exact log-density of designs under the squashed Gaussian.

        Returns:
            ndarray: shape ``(B,)``
        """
        mu, log_std = self.head(params, state)
        xi = _as_designs(xi, state.batch, self.design_dim)
        return tanh_gauss_logpdf(xi, mu, log_std)

    def run(self, params, zs):
        """
        Consume a stack of inputs.

        Args:
            zs (ndarray): shape ``(B, L, input_dim)``

        Returns:
            List[PolicyState]: state after each prefix, length ``L``
        """
        zs = np.asarray(zs, dtype=float)
        state = self.initial_state(len(zs))
        states = []
        for t in range(zs.shape[1]):
            state = self.step(params, state, zs[:, t])
            states.append(state)
        return states

    def _coerce_trajectories(self, xs, xis):
        from ionpf.model import stack_augmented
        xs = np.asarray(xs, dtype=float)
        xis = np.asarray(xis, dtype=float)
        if xs.ndim == 2:
            xs = xs[None]
            xis = xis[None]
        batch, horizon = xs.shape[0], xs.shape[1] - 1
        xis = xis.reshape(batch, horizon, self.design_dim)
        if self.design_dim == 1:
            zs = np.stack([stack_augmented(x, d[:, 0]) for x, d in zip(xs, xis)])
        else:
            prev = np.concatenate([np.zeros((batch, 1, self.design_dim)), xis], axis=1)
            zs = np.concatenate([xs, prev], axis=2)
        return zs, xis

    def trajectory_logpdf(self, params, xs, xis):
        """
        Sum of design log-densities along trajectories.

        Args:
            xs (ndarray): states ``(T + 1, S)`` or ``(B, T + 1, S)``
            xis (ndarray): designs ``(T,)`` or ``(B, T)`` (or with a trailing D)

        Returns:
            ndarray: shape ``(B,)``
        """
        zs, xis = self._coerce_trajectories(xs, xis)
        batch, horizon = xis.shape[0], xis.shape[1]
        total = np.zeros(batch)
        state = self.initial_state(batch)
        for t in range(horizon):
            state = self.step(params, state, zs[:, t])
            total += self.logpdf(params, state, xis[:, t])
        return total

    def _weights(self, weights, batch):
        if weights is None:
            return np.ones(batch)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if len(weights) != batch:
            raise ValueError('need one weight per trajectory')
        return weights

    def _head_grads(self, mu, log_std, xis, weights):
        """
        Gradients of the weighted log-densities with respect to the
        pre-squash mean and the log-std.
        """
        a = np.arctanh(np.clip(xis, -np.nextafter(1.0, 0.0), np.nextafter(1.0, 0.0)))
        inv_var = np.exp(-2 * log_std)
        resid = a - mu
        w = weights.reshape((-1,) + (1,) * (mu.ndim - 1))
        dmu = w * resid * inv_var
        dlog_std = np.sum(w * (resid ** 2 * inv_var - 1), axis=tuple(range(mu.ndim - 1)))
        return dmu, dlog_std


class RandomPolicy(Policy):
    """
    Uniform designs on ``(-1, 1)`` regardless of history.

    Example:
        >>> from ionpf.policy import RandomPolicy
        >>> from ionpf.core import RngStream
        >>> policy = RandomPolicy()
        >>> params = policy.init_params(RngStream(0))
        >>> state = policy.initial_state(5)
        >>> xi, logp = policy.sample(params, state, RngStream(0))
        >>> assert xi.shape == (5, 1) and np.all(np.abs(xi) <= 1)
        >>> assert np.allclose(logp, -np.log(2))
    """
    memoryless = True
    kind = 'random'

    def _blocks(self):
        return []

    def init_params(self, rng=None):
        return PolicyParams(np.zeros(0), kind=self.kind)

    def initial_state(self, batch=1):
        return PolicyState([], batch)

    def step(self, params, state, z):
        return state

    def head(self, params, state):
        raise NotImplementedError('the random policy is not Gaussian')

    def sample(self, params, state, rng):
        if isinstance(rng, (list, tuple)):
            xi = np.stack([random_policy_sample(r, self.design_dim) for r in rng])
        else:
            xi = random_policy_sample(rng, (state.batch, self.design_dim))
        return xi, self.logpdf(params, state, xi)

    def logpdf(self, params, state, xi):
        xi = _as_designs(xi, state.batch, self.design_dim)
        inside = np.all(np.abs(xi) <= 1, axis=-1)
        return np.where(inside, -self.design_dim * np.log(2.0), -np.inf)

    def score(self, params, xs, xis, weights=None):
        return np.zeros(0)


def random_policy_sample(rng, size=None):
    """
    Uniform designs on ``[-1, 1]``, a scalar or an array of shape ``size``.

    Example:
        >>> from ionpf.policy import random_policy_sample
        >>> from ionpf.core import RngStream
        >>> assert random_policy_sample(RngStream(0)) == random_policy_sample(RngStream(0))
    """
    return rng.gen.uniform(-1, 1, size)


class LinearTanhPolicy(Policy):
    """
    Mean linear in an exponentially decaying trace of the inputs:

    .. code::

        s_t = memory * s_{t-1} + z_t
        mu_t = W s_t + b

    With ``memory = 0`` the policy only looks at the latest augmented state.

    Example:
        >>> from ionpf.policy import *  # NOQA
        >>> policy = LinearTanhPolicy(PolicyArchConfig(kind='linear'))
        >>> assert policy.num_params == 3 + 1 + 1
    """
    kind = 'linear'

    def _blocks(self):
        dim = self.design_dim
        return [('weight', (dim, self.input_dim)), ('bias', (dim,)), ('log_std', (dim,))]

    def init_params(self, rng):
        flat = np.zeros(self.layout.size)
        views = self.layout.views(flat)
        views['weight'][...] = 0.01 * rng.gen.standard_normal(views['weight'].shape)
        views['log_std'][...] = self.arch.init_log_std
        return PolicyParams(flat, kind=self.kind)

    def initial_state(self, batch=1):
        return PolicyState([np.zeros((batch, self.input_dim))], batch)

    def step(self, params, state, z):
        z = self._coerce_z(z, state.batch)
        trace = self.arch.memory * state.hidden[0] + z
        return PolicyState([trace], state.batch)

    def head(self, params, state):
        views = params.views(self.layout)
        mu = state.hidden[0] @ views['weight'].T + views['bias']
        return mu, views['log_std']

    def score(self, params, xs, xis, weights=None):
        zs, xis = self._coerce_trajectories(xs, xis)
        batch, horizon = xis.shape[0], xis.shape[1]
        weights = self._weights(weights, batch)
        grad = np.zeros(self.layout.size)
        if horizon == 0:
            return grad
        gviews = self.layout.views(grad)
        views = params.views(self.layout)
        traces = np.zeros((batch, horizon, self.input_dim))
        trace = np.zeros((batch, self.input_dim))
        for t in range(horizon):
            trace = self.arch.memory * trace + zs[:, t]
            traces[:, t] = trace
        mu = traces @ views['weight'].T + views['bias']
        dmu, dlog_std = self._head_grads(mu, views['log_std'], xis, weights)
        gviews['weight'][...] = np.einsum('btd,bti->di', dmu, traces)
        gviews['bias'][...] = dmu.sum(axis=(0, 1))
        gviews['log_std'][...] = dlog_std
        return grad


class RecurrentGaussianPolicy(Policy):
    """
    Encoder, stacked GRU cells and a dense head.

    Example:
        >>> from ionpf.policy import *  # NOQA
        >>> policy = RecurrentGaussianPolicy(PolicyArchConfig())
        >>> print(policy.num_params)
        215490
    """
    kind = 'gru'

    def __init__(self, arch=None):
        if arch is None:
            arch = PolicyArchConfig()
        self.encoder_dims = [int(arch.input_dim)] + [int(w) for w in arch.encoder_widths] + [int(arch.embed_dim)]
        self.recurrent_dims = [int(arch.embed_dim)] + [int(w) for w in arch.recurrent_widths]
        self.head_dims = [self.recurrent_dims[-1]] + [int(w) for w in arch.head_widths] + [int(arch.design_dim)]
        super().__init__(arch)

    def _blocks(self):
        blocks = []
        for i, (din, dout) in enumerate(zip(self.encoder_dims[:-1], self.encoder_dims[1:])):
            blocks += [(f'enc{i}.weight', (dout, din)), (f'enc{i}.bias', (dout,))]
        for i, (din, dh) in enumerate(zip(self.recurrent_dims[:-1], self.recurrent_dims[1:])):
            blocks += [(f'gru{i}.W', (3 * dh, din)), (f'gru{i}.U', (3 * dh, dh)), (f'gru{i}.b', (3 * dh,))]
        for i, (din, dout) in enumerate(zip(self.head_dims[:-1], self.head_dims[1:])):
            blocks += [(f'head{i}.weight', (dout, din)), (f'head{i}.bias', (dout,))]
        blocks += [('log_std', (self.design_dim,))]
        return blocks

    @property
    def num_encoder_layers(self):
        return len(self.encoder_dims) - 1

    @property
    def num_recurrent_layers(self):
        return len(self.recurrent_dims) - 1

    @property
    def num_head_layers(self):
        return len(self.head_dims) - 1

    def init_params(self, rng):
        """
        He-normal ReLU layers, unit-variance linear outputs, a head output
        scaled down so initial means are near zero, and uniform GRU weights
        in ``(-1 / sqrt(H), 1 / sqrt(H))`` with zero biases.
        """
        flat = np.zeros(self.layout.size)
        views = self.layout.views(flat)
        gen = rng.gen
        for prefix, count in [('enc', self.num_encoder_layers), ('head', self.num_head_layers)]:
            for i in range(count):
                weight = views[f'{prefix}{i}.weight']
                fan_in = weight.shape[1]
                is_last = i == count - 1
                gain = 1.0 if is_last else 2.0
                weight[...] = gen.standard_normal(weight.shape) * np.sqrt(gain / fan_in)
                if prefix == 'head' and is_last:
                    weight[...] *= 0.01
        for i in range(self.num_recurrent_layers):
            dh = self.recurrent_dims[i + 1]
            bound = 1.0 / np.sqrt(dh)
            for key in ['W', 'U']:
                block = views[f'gru{i}.{key}']
                block[...] = gen.uniform(-bound, bound, block.shape)
        views['log_std'][...] = self.arch.init_log_std
        return PolicyParams(flat, kind=self.kind)

    def initial_state(self, batch=1):
        hidden = [np.zeros((batch, dh)) for dh in self.recurrent_dims[1:]]
        return PolicyState(hidden, batch)

    def _mlp(self, views, prefix, count, x, caches=None):
        for i in range(count):
            pre = x @ views[f'{prefix}{i}.weight'].T + views[f'{prefix}{i}.bias']
            if caches is not None:
                caches.append((x, pre))
            x = np.maximum(pre, 0) if i < count - 1 else pre
        return x

    def _mlp_backward(self, views, gviews, prefix, count, caches, dout):
        for i in reversed(range(count)):
            x, pre = caches[i]
            if i < count - 1:
                dout = dout * (pre > 0)
            gviews[f'{prefix}{i}.weight'] += dout.T @ x
            gviews[f'{prefix}{i}.bias'] += dout.sum(axis=0)
            dout = dout @ views[f'{prefix}{i}.weight']
        return dout

    def _gru_cell(self, views, i, x, h):
        W, U, b = views[f'gru{i}.W'], views[f'gru{i}.U'], views[f'gru{i}.b']
        dh = h.shape[1]
        gx = x @ W.T + b
        gh = h @ U.T
        r = expit(gx[:, :dh] + gh[:, :dh])
        u = expit(gx[:, dh:2 * dh] + gh[:, dh:2 * dh])
        c = gh[:, 2 * dh:]
        n = np.tanh(gx[:, 2 * dh:] + r * c)
        h_new = (1 - u) * n + u * h
        return h_new, (x, h, r, u, n, c)

    def _gru_cell_backward(self, views, gviews, i, cache, dh_new):
        x, h, r, u, n, c = cache
        W, U = views[f'gru{i}.W'], views[f'gru{i}.U']
        dn = dh_new * (1 - u)
        du = dh_new * (h - n)
        dh = dh_new * u
        dn_pre = dn * (1 - n ** 2)
        dr_pre = dn_pre * c * r * (1 - r)
        du_pre = du * u * (1 - u)
        dgx = np.concatenate([dr_pre, du_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, du_pre, dn_pre * r], axis=1)
        gviews[f'gru{i}.W'] += dgx.T @ x
        gviews[f'gru{i}.b'] += dgx.sum(axis=0)
        gviews[f'gru{i}.U'] += dgh.T @ h
        dx = dgx @ W
        dh = dh + dgh @ U
        return dx, dh

    def encode(self, params, z):
        views = params.views(self.layout)
        return self._mlp(views, 'enc', self.num_encoder_layers, z)

    def step(self, params, state, z):
        views = params.views(self.layout)
        z = self._coerce_z(z, state.batch)
        x = self._mlp(views, 'enc', self.num_encoder_layers, z)
        hidden = []
        for i, h in enumerate(state.hidden):
            x, _ = self._gru_cell(views, i, x, h)
            hidden.append(x)
        return PolicyState(hidden, state.batch)

    def head(self, params, state):
        views = params.views(self.layout)
        mu = self._mlp(views, 'head', self.num_head_layers, state.top())
        return mu, views['log_std']

    def score(self, params, xs, xis, weights=None):
        """
        Reverse-mode gradient of the weighted sum of trajectory log-densities.

        Args:
            params (PolicyParams): parameters
            xs (ndarray): states ``(T + 1, S)`` or ``(B, T + 1, S)``
            xis (ndarray): designs ``(T,)`` or ``(B, T)``
            weights (ndarray | None): one weight per trajectory

        Returns:
            ndarray: gradient with respect to the flat parameter vector
        """
        zs, xis = self._coerce_trajectories(xs, xis)
        batch, horizon = xis.shape[0], xis.shape[1]
        weights = self._weights(weights, batch)
        grad = np.zeros(self.layout.size)
        if horizon == 0:
            return grad
        views = params.views(self.layout)
        gviews = self.layout.views(grad)

        # Forward: designs xi_0 .. xi_{T-1} only need z_0 .. z_{T-1}
        flat_z = zs[:, :horizon].reshape(batch * horizon, self.input_dim)
        enc_caches = []
        emb = self._mlp(views, 'enc', self.num_encoder_layers, flat_z, enc_caches)
        layer_input = emb.reshape(batch, horizon, -1)
        gru_caches = []
        for i in range(self.num_recurrent_layers):
            h = np.zeros((batch, self.recurrent_dims[i + 1]))
            outputs = np.empty((batch, horizon, h.shape[1]))
            caches = []
            for t in range(horizon):
                h, cache = self._gru_cell(views, i, layer_input[:, t], h)
                outputs[:, t] = h
                caches.append(cache)
            gru_caches.append(caches)
            layer_input = outputs
        top = layer_input.reshape(batch * horizon, -1)
        head_caches = []
        mu = self._mlp(views, 'head', self.num_head_layers, top, head_caches)
        mu = mu.reshape(batch, horizon, self.design_dim)

        # Backward
        dmu, dlog_std = self._head_grads(mu, views['log_std'], xis, weights)
        gviews['log_std'] += dlog_std
        dtop = self._mlp_backward(views, gviews, 'head', self.num_head_layers,
                                  head_caches, dmu.reshape(batch * horizon, -1))
        doutputs = dtop.reshape(batch, horizon, -1)
        for i in reversed(range(self.num_recurrent_layers)):
            caches = gru_caches[i]
            dinputs = np.empty((batch, horizon, self.recurrent_dims[i]))
            dh = np.zeros((batch, self.recurrent_dims[i + 1]))
            for t in reversed(range(horizon)):
                dx, dh = self._gru_cell_backward(views, gviews, i, caches[t], doutputs[:, t] + dh)
                dinputs[:, t] = dx
            doutputs = dinputs
        demb = doutputs.reshape(batch * horizon, -1)
        self._mlp_backward(views, gviews, 'enc', self.num_encoder_layers, enc_caches, demb)
        return grad


POLICY_CLASSES = {
    'gru': RecurrentGaussianPolicy,
    'linear': LinearTanhPolicy,
    'random': RandomPolicy,
}


def coerce_policy(arch=None, **kwargs):
    """
    Build the policy described by an architecture config.

    Args:
        arch (PolicyArchConfig | dict | None): architecture
        **kwargs: overrides

    Returns:
        Policy
    """
    if arch is None:
        arch = PolicyArchConfig(**kwargs)
    elif isinstance(arch, dict):
        arch = PolicyArchConfig(**(ub.udict(arch) | kwargs))
    elif kwargs:
        arch = PolicyArchConfig(**(ub.udict(arch.to_dict()) | kwargs))
    return POLICY_CLASSES[arch.kind](arch)


def _arch_header(policy):
    arch = dict(policy.arch.to_dict())
    for key in ['encoder_widths', 'recurrent_widths', 'head_widths']:
        arch[key] = [int(w) for w in arch[key]]
    return arch


def save_policy(fpath, policy, params):
    """
    Write a policy checkpoint as JSON.

    The flat parameters are stored as a list of floats, whose repr
    round-trips exactly.

    Args:
        fpath (PathLike): destination
        policy (Policy): the policy the parameters belong to
        params (PolicyParams): the parameters
    """
    if len(params) != policy.num_params:
        raise ArchitectureMismatchError('parameter count does not match the policy')
    data = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'kind': policy.kind,
        'arch': _arch_header(policy),
        'num_params': policy.num_params,
        'params': params.flat.tolist(),
    }
    fpath = ub.Path(fpath)
    fpath.parent.ensuredir()
    fpath.write_text(json.dumps(data))
    return fpath


def load_policy(fpath, arch=None):
    """
    Read a policy checkpoint.

    Args:
        fpath (PathLike): checkpoint path
        arch (PolicyArchConfig | None): if given, the checkpoint must match it

    Returns:
        Tuple[Policy, PolicyParams]

    Raises:
        FileNotFoundError: if the file does not exist
        CheckpointError: if the file is not a valid checkpoint
        ArchitectureMismatchError: if ``arch`` disagrees with the checkpoint

    Example:
        >>> from ionpf.policy import *  # NOQA
        >>> from ionpf.core import RngStream
        >>> dpath = ub.Path.appdir('ionpf', 'tests', 'doctest').ensuredir()
        >>> policy = coerce_policy(kind='linear')
        >>> params = policy.init_params(RngStream(0))
        >>> fpath = save_policy(dpath / 'policy.json', policy, params)
        >>> policy2, params2 = load_policy(fpath, arch=policy.arch)
        >>> assert np.array_equal(params.flat, params2.flat)
    """
    fpath = ub.Path(fpath)
    if not fpath.exists():
        raise FileNotFoundError('checkpoint {} does not exist'.format(fpath))
    try:
        data = json.loads(fpath.read_text())
        if data.get('format') != CHECKPOINT_FORMAT:
            raise CheckpointError('{} is not an ionpf policy checkpoint'.format(fpath))
        if data.get('version') != CHECKPOINT_VERSION:
            raise CheckpointError('unsupported checkpoint version {!r}'.format(data.get('version')))
        stored_arch = PolicyArchConfig(**data['arch'])
        flat = np.array(data['params'], dtype=float)
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError) as ex:
        raise CheckpointError('corrupted checkpoint {}: {}'.format(fpath, ex))
    policy = coerce_policy(stored_arch)
    if len(flat) != policy.num_params or data.get('num_params') != policy.num_params:
        raise CheckpointError('checkpoint {} has {} parameters, its header implies {}'.format(
            fpath, len(flat), policy.num_params))
    if arch is not None:
        want = _arch_header(coerce_policy(arch))
        have = _arch_header(policy)
        diff = {k: (have.get(k), want[k]) for k in want if have.get(k) != want[k]}
        if diff:
            raise ArchitectureMismatchError(
                'checkpoint architecture differs from the config: {}'.format(ub.urepr(diff, nl=0)))
    return policy, PolicyParams(flat, kind=policy.kind)
