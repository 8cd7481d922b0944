"""
Backward simulation over a frozen filter history.

A path through the history is rebuilt backwards in time. At every time ``t``
a candidate index is proposed from the filtering weights and accepted with an
independent Metropolis-Hastings step against the true ancestor of the index
chosen at ``t + 1``. On rejection the ancestor is kept, so with zero
acceptance the sampler reduces to genealogy tracing.

The acceptance ratio compares backward weights: the target density of the
spliced path divided by the target density of the prefix. The theta clouds
enter through their Rao-Blackwellized transition, with the resampling
indices summed out. For the MH ratio only the factors that depend on the
prefix are needed (:func:`backward_weight_log_fast`); these are the whole
block at ``t + 1`` plus the policy densities of later designs, which see the
prefix through the recurrent state.

Backward simulation is defined for the jitter (``npf``) strategy.

Example:
    >>> from ionpf.smoother import *  # NOQA
    >>> from ionpf.io_npf import RunConfig, run_filter
    >>> from ionpf.model import PendulumModel
    >>> from ionpf.policy import coerce_policy
    >>> from ionpf.core import RngStream
    >>> model = PendulumModel(horizon=4)
    >>> policy = coerce_policy(kind='linear')
    >>> params = policy.init_params(RngStream(0))
    >>> history = run_filter(model, policy, params, RunConfig(num_particles=4, num_theta=8), RngStream(1))
    >>> traj = backward_sample(history, RngStream(2))
    >>> assert traj.indices.shape == (5,)
    >>> assert 0 <= traj.acceptance_rate <= 1
"""
import numpy as np
import ubelt as ub

from ionpf.core import multinomial_resample
from ionpf.exceptions import ConfigError, DegenerateCloudError
from ionpf.io_npf import Trajectory, genealogy_trajectory, potential_log
from ionpf.theta_filter import cloud_reweight, cloud_transition_logpdf_rb


class BackwardTrajectory(Trajectory):
    """
    A path produced by the backward sampler.

    Attributes:
        num_proposals (int): MH proposals that differed from the ancestor
        num_accepted (int): accepted proposals among them
        accept_probs (List[float]): acceptance probability of every proposal
    """

    def __init__(self, xs, xis, indices, beliefs=None, accept_probs=None, num_accepted=0):
        super().__init__(xs, xis, indices=indices, beliefs=beliefs)
        self.accept_probs = list(accept_probs or [])
        self.num_proposals = len(self.accept_probs)
        self.num_accepted = int(num_accepted)

    def __nice__(self):
        return 'T={}, accepted={}/{}'.format(self.horizon, self.num_accepted, self.num_proposals)

    @property
    def acceptance_rate(self):
        if self.num_proposals == 0:
            return 0.0
        return self.num_accepted / self.num_proposals


def _check_strategy(history):
    if history.strategy.name != 'npf':
        raise ConfigError(
            'backward sampling needs the npf theta strategy, got {!r}'.format(history.strategy.name))


def _first_block(history, n, t, suffix):
    """
    The factors of the transition into ``t + 1`` for prefix ``n``: marginal
    transition, log-potential and the Rao-Blackwellized theta transition.
    """
    frames = history.frames
    prev, nxt = frames[t], frames[t + 1]
    j = suffix[t + 1]
    x, belief = prev.xs[n], prev.beliefs[n]
    xi, x_next = nxt.xi_prev[j], nxt.xs[j]
    log_marginal = history.strategy.marginal_logpdf(belief, x, xi, x_next)
    if not np.isfinite(log_marginal):
        return -np.inf
    xi_prev = prev.xi_prev[n] if t >= 1 else None
    total = log_marginal + potential_log(log_marginal, xi, xi_prev, history.cfg)
    try:
        reweighted = cloud_reweight(belief, x, xi, x_next, history.model)
    except DegenerateCloudError:
        return -np.inf
    total += cloud_transition_logpdf_rb(reweighted, nxt.beliefs[j], history.strategy.kernel)
    return total


def _later_blocks(history, t, suffix):
    """
    The prefix-independent factors of the transitions into ``t + 2 .. T``.
    """
    frames = history.frames
    total = 0.0
    for s in range(t + 2, history.horizon + 1):
        i, j = suffix[s - 1], suffix[s]
        prev, nxt = frames[s - 1], frames[s]
        x, belief = prev.xs[i], prev.beliefs[i]
        xi, x_next = nxt.xi_prev[j], nxt.xs[j]
        log_marginal = history.strategy.marginal_logpdf(belief, x, xi, x_next)
        total += log_marginal + potential_log(log_marginal, xi, prev.xi_prev[i], history.cfg)
        reweighted = cloud_reweight(belief, x, xi, x_next, history.model)
        total += cloud_transition_logpdf_rb(reweighted, nxt.beliefs[j], history.strategy.kernel)
    return total


def _policy_terms(history, params, candidates, t, suffix, first_only=False):
    """
    Policy log-densities of the suffix designs ``xi_t .. xi_{T-1}`` for a
    batch of candidate prefixes ending at ``t``.

    Returns:
        Tuple[ndarray, ndarray]: density of ``xi_t`` and the sum over the
        later designs, one entry per candidate
    """
    policy = history.policy
    frames = history.frames
    candidates = np.asarray(candidates, dtype=int)
    state = frames[t].policy_state.take(candidates)
    first_xi = frames[t + 1].xi_prev[suffix[t + 1]]
    first = policy.logpdf(params, state, np.full(len(candidates), first_xi))
    later = np.zeros(len(candidates))
    if first_only or policy.memoryless:
        return first, later
    for s in range(t + 1, history.horizon):
        frame = frames[s]
        j = suffix[s]
        z = np.append(frame.xs[j], frame.xi_prev[j])
        state = policy.step(params, state, z)
        xi = frames[s + 1].xi_prev[suffix[s + 1]]
        later += policy.logpdf(params, state, np.full(len(candidates), xi))
    return first, later


def backward_weight_log(history, n, t, suffix, params=None):
    """
    Log backward weight of prefix ``n`` at time ``t`` spliced to a suffix.

    Args:
        history (FilterHistory): complete history of an ``npf`` run
        n (int): prefix index at time ``t``
        t (int): splice time
        suffix (ArrayLike): particle indices, entries ``t + 1 .. T`` are used
        params (PolicyParams | None): defaults to the parameters of the run

    Returns:
        float: ``-inf`` outside the support
    """
    _check_strategy(history)
    if t >= history.horizon:
        return 0.0
    params = history.params if params is None else params
    suffix = np.asarray(suffix, dtype=int)
    first = _first_block(history, n, t, suffix)
    if first == -np.inf:
        return -np.inf
    pol_first, pol_later = _policy_terms(history, params, [n], t, suffix)
    return float(first + pol_first[0] + pol_later[0] + _later_blocks(history, t, suffix))


def backward_weight_log_fast(history, n, t, suffix, params=None):
    """
    Backward weight up to a constant that does not depend on the prefix.

    Differences ``fast(n1) - fast(n2)`` equal the differences of
    :func:`backward_weight_log`.
    """
    return backward_weights_fast(history, [n], t, suffix, params=params)[0]


def backward_weights_fast(history, candidates, t, suffix, params=None):
    """
    Vectorized :func:`backward_weight_log_fast` over candidate prefixes.

    Returns:
        ndarray: one log-weight per candidate
    """
    _check_strategy(history)
    candidates = np.asarray(candidates, dtype=int)
    if t >= history.horizon:
        return np.zeros(len(candidates))
    params = history.params if params is None else params
    suffix = np.asarray(suffix, dtype=int)
    blocks = np.array([_first_block(history, n, t, suffix) for n in candidates])
    pol_first, pol_later = _policy_terms(history, params, candidates, t, suffix)
    with np.errstate(invalid='ignore'):
        weights = blocks + pol_first + pol_later
    return np.where(blocks == -np.inf, -np.inf, weights)


def backward_mh_step(history, t, current, suffix, rng, params=None):
    """
    One independent Metropolis-Hastings update of the prefix index at ``t``.

    The proposal is drawn from the filtering weights at ``t``, so the step
    leaves ``w_t(n) * exp(backward_weight_log(n))`` invariant for a fixed
    suffix.

    Args:
        history (FilterHistory): complete history of an ``npf`` run
        t (int): splice time, ``t < T``
        current (int): current prefix index
        suffix (ArrayLike): particle indices, entries ``t + 1 .. T`` are used
        rng (RngStream): ``rng.child(0)`` proposes, ``rng.child(1)`` decides
        params (PolicyParams | None): defaults to the parameters of the run

    Returns:
        Tuple[int, float | None]: the new index and the acceptance
        probability, ``None`` when the proposal equals ``current``
    """
    proposal = multinomial_resample(history.frames[t].log_weights, 1, rng.child(0))[0]
    if proposal == current:
        return int(current), None
    w_prop, w_cur = backward_weights_fast(history, [proposal, current], t, suffix, params=params)
    if w_prop == -np.inf:
        prob = 0.0
    elif w_cur == -np.inf:
        prob = 1.0
    else:
        prob = float(min(1.0, np.exp(w_prop - w_cur)))
    if rng.child(1).gen.uniform() < prob:
        return int(proposal), prob
    return int(current), prob


def backward_sample(history, rng, final_index=None, params=None):
    """
    Draw one path with the MCMC backward sampler.

    Args:
        history (FilterHistory): complete history of an ``npf`` run
        rng (RngStream): random stream
        final_index (int | None): condition on the final index instead of
            drawing it from the final weights
        params (PolicyParams | None): defaults to the parameters of the run

    Returns:
        BackwardTrajectory
    """
    _check_strategy(history)
    params = history.params if params is None else params
    horizon = history.horizon
    indices = np.empty(horizon + 1, dtype=int)
    if final_index is None:
        indices[horizon] = multinomial_resample(history.frames[horizon].log_weights, 1, rng.child(0))[0]
    else:
        indices[horizon] = int(final_index)
    accept_probs = []
    num_accepted = 0
    for t in range(horizon - 1, -1, -1):
        ancestor = history.frames[t + 1].ancestors[indices[t + 1]]
        index, prob = backward_mh_step(history, t, ancestor, indices, rng.child(1, t), params=params)
        indices[t] = index
        if prob is not None:
            accept_probs.append(prob)
            num_accepted += int(index != ancestor)
    base = history.trajectory(indices)
    return BackwardTrajectory(base.xs, base.xis, indices, beliefs=base.beliefs,
                              accept_probs=accept_probs, num_accepted=num_accepted)


def backward_sample_many(history, rng, num=None, final_indices=None, threads=1, params=None):
    """
    Independent backward passes over one history.

    Args:
        history (FilterHistory): complete history
        rng (RngStream): pass ``i`` uses ``rng.child(i)``
        num (int | None): number of passes, defaults to ``N``
        final_indices (ArrayLike | None): condition pass ``i`` on a final index
        threads (int): worker threads

    Returns:
        List[BackwardTrajectory]
    """
    if final_indices is not None:
        num = len(final_indices)
    elif num is None:
        num = history.num_particles
    mode = 'thread' if threads > 1 else 'serial'
    pool = ub.JobPool(mode=mode, max_workers=threads)
    jobs = []
    for i in range(num):
        final = None if final_indices is None else final_indices[i]
        jobs.append(pool.submit(backward_sample, history, rng.child(i), final_index=final, params=params))
    return [job.result() for job in jobs]


class DegeneracyReport(ub.NiceRepr):
    """
    Unique particle indices per time for genealogy tracing and backward
    sampling.

    Attributes:
        genealogy_unique (ndarray): counts over the traced genealogies
        backward_unique (ndarray): counts over the backward trajectories
    """

    def __init__(self, genealogy_unique, backward_unique):
        self.genealogy_unique = np.asarray(genealogy_unique, dtype=int)
        self.backward_unique = np.asarray(backward_unique, dtype=int)

    def __nice__(self):
        return 't0 genealogy={}, backward={}'.format(
            self.genealogy_unique[0], self.backward_unique[0])

    def rows(self):
        return [{'t': t, 'genealogy_unique': int(g), 'backward_unique': int(b)}
                for t, (g, b) in enumerate(zip(self.genealogy_unique, self.backward_unique))]


def unique_counts(trajectories):
    """ Number of distinct particle indices at every time """
    indices = np.stack([traj.indices for traj in trajectories])
    return np.array([len(np.unique(col)) for col in indices.T])


def degeneracy_report(history, trajectories, genealogies=None):
    """
    Compare path diversity of genealogy tracing with a set of trajectories.

    Args:
        history (FilterHistory): complete history
        trajectories (List[Trajectory]): e.g. backward-sampled paths
        genealogies (List[Trajectory] | None): defaults to tracing every
            final particle

    Returns:
        DegeneracyReport
    """
    if genealogies is None:
        genealogies = [genealogy_trajectory(history, n) for n in range(history.num_particles)]
    return DegeneracyReport(unique_counts(genealogies), unique_counts(trajectories))
