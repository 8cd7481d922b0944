"""
Shared numeric primitives: seeded random streams, log-domain weights and
multinomial resampling.

All weights are stored in the log domain and only normalized when a
probability vector is actually needed. Resampling is always multinomial: the
marginalization over theta resampling indices done by the smoother requires
the indices to be i.i.d.

Example:
    >>> from ionpf.core import *  # NOQA
    >>> w = LogWeights(np.log([0.75, 0.25]))
    >>> print('{:.4f}'.format(w.ess()))
    1.6000
    >>> rng = RngStream(seed=0)
    >>> idxs = multinomial_resample(w, 8, rng)
    >>> assert len(idxs) == 8 and set(idxs) <= {0, 1}
"""
import numpy as np
import ubelt as ub
from scipy.special import logsumexp

from ionpf.exceptions import DegenerateWeightsError, NumericalError


def log_sum_exp(xs):
    """
    Numerically stable ``log(sum(exp(xs)))``.

    Args:
        xs (ArrayLike): nonempty collection of log-values

    Returns:
        float

    Example:
        >>> from ionpf.core import log_sum_exp
        >>> import numpy as np
        >>> assert np.isclose(log_sum_exp([np.log(1), np.log(1)]), np.log(2))
        >>> assert log_sum_exp([0]) == 0
        >>> assert log_sum_exp([-np.inf, -np.inf]) == -np.inf
    """
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise ValueError('log_sum_exp requires a nonempty input')
    if np.all(xs == -np.inf):
        return -np.inf
    return float(logsumexp(xs))


def log_mean_exp(xs, axis=None):
    """
    Numerically stable ``log(mean(exp(xs)))`` along an axis.

    Example:
        >>> from ionpf.core import log_mean_exp
        >>> import numpy as np
        >>> assert np.isclose(log_mean_exp(np.log([1., 3.])), np.log(2))
    """
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise ValueError('log_mean_exp requires a nonempty input')
    count = xs.size if axis is None else xs.shape[axis]
    with np.errstate(divide='ignore'):
        total = logsumexp(xs, axis=axis)
    return total - np.log(count)


class RngStream(ub.NiceRepr):
    """
    A reproducible random stream identified by ``(seed, stream)``.

    Streams are backed by the counter-based Philox generator seeded through a
    :class:`numpy.random.SeedSequence` whose spawn key is the stream path.
    Child streams are derived from the path alone, so deriving a child never
    advances the parent and the draws of a child do not depend on what other
    children were used for. This is what makes per-particle work independent
    of the number of threads.

    Attributes:
        seed (int): 64-bit seed
        keys (Tuple[int, ...]): stream path, the first entry is the stream id
        gen (numpy.random.Generator): the underlying generator

    Example:
        >>> from ionpf.core import RngStream
        >>> a = RngStream(seed=1, stream=2)
        >>> b = RngStream(seed=1, stream=2)
        >>> assert a.gen.random() == b.gen.random()
        >>> c1 = a.child(5)
        >>> c2 = RngStream(seed=1, stream=2).child(5)
        >>> assert c1.gen.random() == c2.gen.random()
    """

    def __init__(self, seed=0, stream=0, keys=None):
        self.seed = int(seed)
        if keys is None:
            keys = (int(stream),)
        self.keys = tuple(int(k) for k in keys)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.keys)
        self.gen = np.random.Generator(np.random.Philox(seq))

    def __nice__(self):
        return 'seed={}, keys={}'.format(self.seed, self.keys)

    @property
    def stream(self):
        return self.keys[0]

    def child(self, *keys):
        """
        Derive an independent stream by extending the stream path.

        Args:
            *keys (int): nonnegative path components

        Returns:
            RngStream
        """
        return RngStream(self.seed, keys=self.keys + tuple(keys))

    def children(self, num, *prefix):
        """ Independent streams ``child(*prefix, i)`` for ``i < num`` """
        return [self.child(*prefix, i) for i in range(num)]

    @classmethod
    def coerce(cls, data):
        """
        Args:
            data (None | int | RngStream): seed or existing stream

        Returns:
            RngStream
        """
        if data is None:
            return cls(0)
        if isinstance(data, cls):
            return data
        if isinstance(data, (int, np.integer)):
            return cls(int(data))
        raise TypeError('Cannot coerce {!r} to an RngStream'.format(type(data)))


class LogWeights(ub.NiceRepr):
    """
    Unnormalized log-weights (in nats) of a particle population.

    Example:
        >>> from ionpf.core import LogWeights
        >>> import numpy as np
        >>> w = LogWeights([0.0, 0.0, 0.0, 0.0])
        >>> assert np.isclose(w.ess(), 4)
        >>> w = LogWeights([-np.inf, 0.0])
        >>> assert w.normalized().tolist() == [0.0, 1.0]
    """

    def __init__(self, values):
        values = np.array(values, dtype=float).ravel()
        if values.size == 0:
            raise ValueError('LogWeights requires at least one entry')
        if np.any(np.isnan(values)) or np.any(values == np.inf):
            raise NumericalError(
                'LogWeights received NaN or +inf entries: {}'.format(values))
        self.values = values

    @classmethod
    def uniform(cls, num):
        return cls(np.zeros(num))

    def __nice__(self):
        if self.is_degenerate():
            return 'K={}, degenerate'.format(len(self))
        return 'K={}, ess={:.2f}'.format(len(self), self.ess())

    def __len__(self):
        return len(self.values)

    def is_degenerate(self):
        """ True if every weight is zero """
        return bool(np.all(self.values == -np.inf))

    def log_total(self):
        return log_sum_exp(self.values)

    def log_mean(self):
        """ Log of the average unnormalized weight """
        return self.log_total() - np.log(len(self))

    def log_normalized(self):
        """
        Returns:
            ndarray: log-probabilities summing (in the linear domain) to one

        Raises:
            DegenerateWeightsError: if all weights are -inf
        """
        if self.is_degenerate():
            raise DegenerateWeightsError(
                'cannot normalize {} log-weights that are all -inf'.format(len(self)))
        return self.values - self.log_total()

    def normalized(self):
        """
        Returns:
            ndarray: probability vector
        """
        probs = np.exp(self.log_normalized())
        probs /= probs.sum()
        return probs

    def ess(self):
        return effective_sample_size(self)


def effective_sample_size(w):
    """
    Effective sample size ``1 / sum(w_i^2)`` of the normalized weights.

    Args:
        w (LogWeights | ArrayLike): log-weights

    Returns:
        float: value in ``[1, K]``

    Example:
        >>> from ionpf.core import effective_sample_size, LogWeights
        >>> import numpy as np
        >>> assert np.isclose(effective_sample_size(LogWeights(np.log([.75, .25]))), 1.6)
        >>> assert np.isclose(effective_sample_size(LogWeights([0., -np.inf])), 1.0)
    """
    if not isinstance(w, LogWeights):
        w = LogWeights(w)
    probs = w.normalized()
    return float(1.0 / np.sum(probs ** 2))


def multinomial_resample(w, num, rng):
    """
    Draw ``num`` i.i.d. categorical ancestor indices with probabilities ``w``.

    Args:
        w (LogWeights | ArrayLike): log-weights of the population
        num (int): number of indices to draw, at least one
        rng (RngStream): random stream

    Returns:
        ndarray: integer indices in ``[0, len(w))``

    Raises:
        DegenerateWeightsError: if every weight is -inf

    Example:
        >>> from ionpf.core import *  # NOQA
        >>> w = LogWeights([-np.inf, -np.inf, -np.inf, 0.0])
        >>> assert set(multinomial_resample(w, 100, RngStream(3))) == {3}
    """
    if not isinstance(w, LogWeights):
        w = LogWeights(w)
    if num < 1:
        raise ValueError('num must be at least 1, got {}'.format(num))
    probs = w.normalized()
    return rng.gen.choice(len(probs), size=num, p=probs)
