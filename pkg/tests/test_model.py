
def _rollout(model, theta, rng, designs=None):
    import numpy as np
    xs = [model.x0]
    xis = rng.gen.uniform(-1, 1, size=model.horizon) if designs is None else designs
    for t in range(model.horizon):
        xs.append(model.sample_transition(xs[-1], xis[t], theta, rng))
    return np.array(xs), np.asarray(xis, dtype=float)


def test_recursive_conjugate_update_matches_batch_posterior():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.model import PendulumModel
    model = PendulumModel(horizon=50)
    rng = RngStream(0)
    for i in range(20):
        theta = model.sample_prior(rng.child(i, 0), 1)[0]
        xs, xis = _rollout(model, theta, rng.child(i, 1))
        belief = model.prior
        for t in range(model.horizon):
            belief = model.conjugate_update(belief, xs[t], xis[t], xs[t + 1])
        batch = model.conjugate_batch_posterior(xs, xis)
        assert np.allclose(belief.mean, batch.mean, atol=1e-10, rtol=0)
        assert np.allclose(belief.cov, batch.cov, atol=1e-10, rtol=0)


def test_marginal_loglik_chain_rule_matches_bayes_identity():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.model import PendulumModel
    model = PendulumModel(horizon=10)
    rng = RngStream(1)
    theta = model.prior.mean
    xs, xis = _rollout(model, theta, rng)
    belief = model.prior
    total = 0.0
    for t in range(model.horizon):
        total += model.conjugate_marginal_loglik(belief, xs[t], xis[t], xs[t + 1])
        belief = model.conjugate_update(belief, xs[t], xis[t], xs[t + 1])
    # log p(x) = log p(x | theta) + log p(theta) - log p(theta | x) at any theta
    theta = np.array([14.0, 0.05, 2.5])
    want = (model.history_loglik(xs, xis, theta[None])[0] + model.prior.logpdf(theta)
            - belief.logpdf(theta))
    assert np.isclose(total, want, atol=1e-8)


def test_history_loglik_agrees_with_transition_logpdf():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.model import PendulumModel
    model = PendulumModel(horizon=6)
    rng = RngStream(2)
    xs, xis = _rollout(model, model.prior.mean, rng)
    thetas = model.sample_prior(rng.child(9), 5)
    want = sum(model.transition_logpdf(xs[t + 1], xs[t], xis[t], thetas)
               for t in range(model.horizon))
    assert np.allclose(model.history_loglik(xs, xis, thetas), want)


def test_transition_rejects_inconsistent_position_and_nan():
    import numpy as np
    import pytest
    from ionpf.model import PendulumModel
    from ionpf.exceptions import NumericalError
    model = PendulumModel(horizon=2)
    x = np.array([0.1, 0.2])
    x_next = np.array([0.1 + 0.2 * model.dt + 1e-3, 0.3])
    assert model.transition_logpdf(x_next, x, 0.0, model.prior.mean) == -np.inf
    assert model.conjugate_marginal_loglik(model.prior, x, 0.0, x_next) == -np.inf
    with pytest.raises(NumericalError):
        model.conjugate_update(model.prior, x, 0.0, x_next)
    with pytest.raises(NumericalError):
        model.transition_logpdf(np.array([np.nan, 0.0]), x, 0.0, model.prior.mean)


def test_zero_regressor_update_is_identity():
    import numpy as np
    from ionpf.model import PendulumModel
    model = PendulumModel(horizon=1)
    x = np.array([0.0, 0.0])
    x_next = np.array([0.0, 0.01])
    belief = model.conjugate_update(model.prior, x, 0.0, x_next)
    assert np.array_equal(belief.mean, model.prior.mean)
    assert np.array_equal(belief.cov, model.prior.cov)


def test_posterior_entropy_is_monotone():
    from ionpf.core import RngStream
    from ionpf.model import PendulumModel
    model = PendulumModel(horizon=30)
    xs, xis = _rollout(model, model.prior.mean, RngStream(3))
    belief = model.prior
    prev = belief.entropy()
    for t in range(model.horizon):
        belief = model.conjugate_update(belief, xs[t], xis[t], xs[t + 1])
        assert belief.entropy() <= prev + 1e-12
        prev = belief.entropy()


def test_gaussian_belief_sampling_moments():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.model import prior_default
    belief = prior_default()
    draws = belief.sample(RngStream(4), 20000)
    assert draws.shape == (20000, 3)
    assert np.allclose(draws.mean(axis=0), belief.mean, atol=0.02)
    assert np.allclose(np.cov(draws.T), belief.cov, atol=0.01)
    assert belief.sample(RngStream(4)).shape == (3,)


def test_gaussian_belief_rejects_bad_covariance():
    import pytest
    from ionpf.model import GaussianBelief
    from ionpf.exceptions import NumericalError
    with pytest.raises(NumericalError):
        GaussianBelief([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        GaussianBelief([0.0, 0.0], [[1.0]])


def test_pendulum_config_validation():
    import pytest
    from ionpf.model import PendulumConfig, PendulumModel
    from ionpf.exceptions import ConfigError
    with pytest.raises(ConfigError):
        PendulumConfig(dt=0.0)
    with pytest.raises(ConfigError):
        PendulumConfig(T=0)
    with pytest.raises(ConfigError):
        PendulumConfig(prior_cov=[0.1, -1.0, 0.1]).prior_belief()
    model = PendulumModel({'T': 4}, dt=0.1)
    assert model.horizon == 4 and model.dt == 0.1
    assert abs(model.noise_var - 0.1 ** 2 * 0.1) < 1e-15


def test_sample_transition_matches_transition_density():
    import numpy as np
    from scipy import stats
    from ionpf.core import RngStream
    from ionpf.model import PendulumModel, drift_features
    model = PendulumModel(horizon=3)
    x, xi, theta = np.array([0.4, -0.2]), 0.3, model.prior.mean
    rng = RngStream(5)
    draws = np.array([model.sample_transition(x, xi, theta, rng) for _ in range(20000)])
    assert np.allclose(draws[:, 0], x[0] + x[1] * model.dt)
    incr = draws[:, 1] - x[1]
    loc = drift_features(x, xi) @ theta * model.dt
    assert abs(incr.mean() - loc) < 4 * model.noise_std / np.sqrt(len(incr))
    assert np.isclose(incr.var(), model.noise_var, rtol=0.05)
    assert stats.kstest(incr, 'norm', args=(loc, model.noise_std)).pvalue > 1e-3
    logp = [model.transition_logpdf(d, x, xi, theta) for d in draws[:20]]
    want = stats.norm.logpdf(incr[:20], loc=loc, scale=model.noise_std)
    assert np.allclose(logp, want)
