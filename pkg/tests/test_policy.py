
def _small_archs():
    from ionpf.policy import PolicyArchConfig
    yield PolicyArchConfig(kind='linear')
    yield PolicyArchConfig(kind='linear', memory=0.5)
    yield PolicyArchConfig(kind='gru', encoder_widths=[5], embed_dim=4,
                           recurrent_widths=[3], head_widths=[4])
    yield PolicyArchConfig(kind='gru', encoder_widths=[4, 3], embed_dim=3,
                           recurrent_widths=[3, 2], head_widths=[5])
    yield PolicyArchConfig(kind='gru', encoder_widths=[], embed_dim=3,
                           recurrent_widths=[2], head_widths=[])


def _random_trajectories(rng, batch, horizon):
    import numpy as np
    xs = rng.gen.normal(size=(batch, horizon + 1, 2))
    xis = rng.gen.uniform(-0.95, 0.95, size=(batch, horizon))
    return xs, xis


def _finite_difference(policy, params, xs, xis, weights, eps=1e-6):
    import numpy as np
    from ionpf.policy import PolicyParams
    grad = np.zeros(len(params))
    for k in range(len(params)):
        plus = params.flat.copy()
        minus = params.flat.copy()
        plus[k] += eps
        minus[k] -= eps
        fp = weights @ policy.trajectory_logpdf(PolicyParams(plus), xs, xis)
        fm = weights @ policy.trajectory_logpdf(PolicyParams(minus), xs, xis)
        grad[k] = (fp - fm) / (2 * eps)
    return grad


def test_score_matches_finite_differences():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.policy import coerce_policy
    rng = RngStream(0)
    for i, arch in enumerate(_small_archs()):
        policy = coerce_policy(arch)
        for j in range(4):
            case = rng.child(i, j)
            params = policy.init_params(case.child(0))
            # move away from the near-zero head initialization
            params = params.ascent(case.child(1).gen.normal(size=len(params)), 0.3)
            xs, xis = _random_trajectories(case.child(2), batch=3, horizon=4)
            weights = case.child(3).gen.dirichlet(np.ones(3))
            got = policy.score(params, xs, xis, weights=weights)
            want = _finite_difference(policy, params, xs, xis, weights)
            rel = np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-12)
            assert rel < 1e-4, (arch.kind, i, j, rel)


def test_weighted_score_is_linear_in_trajectories():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.policy import PolicyArchConfig, coerce_policy
    policy = coerce_policy(PolicyArchConfig(encoder_widths=[4], embed_dim=3,
                                            recurrent_widths=[3], head_widths=[4]))
    params = policy.init_params(RngStream(1))
    xs, xis = _random_trajectories(RngStream(2), batch=3, horizon=5)
    weights = np.array([0.2, 0.5, 0.3])
    batched = policy.score(params, xs, xis, weights=weights)
    single = sum(w * policy.score(params, x, d) for w, x, d in zip(weights, xs, xis))
    assert np.allclose(batched, single)


def test_sample_logpdf_consistency_and_range():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.policy import PolicyArchConfig, coerce_policy
    policy = coerce_policy(PolicyArchConfig(encoder_widths=[4], embed_dim=3,
                                            recurrent_widths=[3], head_widths=[4]))
    params = policy.init_params(RngStream(0))
    state = policy.step(params, policy.initial_state(50), np.zeros((50, 3)))
    xi, logp = policy.sample(params, state, RngStream(1))
    assert xi.shape == (50, 1)
    assert np.all(np.abs(xi) < 1)
    assert np.allclose(logp, policy.logpdf(params, state, xi))
    assert np.all(policy.logpdf(params, state, np.ones((50, 1))) == -np.inf)
    # one stream per history gives the same draws as separate calls
    rngs = [RngStream(2).child(i) for i in range(50)]
    xi_a, _ = policy.sample(params, state, rngs)
    xi_b, _ = policy.sample(params, state.take([7]), [RngStream(2).child(7)])
    assert np.array_equal(xi_a[7], xi_b[0])


def test_tanh_gauss_density_integrates_to_one():
    import numpy as np
    from scipy.integrate import trapezoid
    from scipy.stats import norm
    from ionpf.policy import tanh_gauss_logpdf, tanh_gauss_cdf
    grid = np.linspace(-1, 1, 200001)[1:-1]
    mu = np.full((len(grid), 1), 0.4)
    log_std = np.array([np.log(0.7)])
    dens = np.exp(tanh_gauss_logpdf(grid[:, None], mu, log_std))
    assert np.isclose(trapezoid(dens, grid), 1.0, atol=1e-4)
    # the cdf at zero is the normal cdf of the pre-squash value
    assert np.isclose(tanh_gauss_cdf(0.0, 0.4, 0.7), norm.cdf(-0.4 / 0.7))
    half = grid < 0
    assert np.isclose(trapezoid(dens[half], grid[half]), norm.cdf(-0.4 / 0.7), atol=1e-4)


def test_random_policy():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.policy import coerce_policy
    policy = coerce_policy(kind='random')
    assert policy.memoryless and policy.num_params == 0
    params = policy.init_params()
    state = policy.initial_state(1000)
    xi, logp = policy.sample(params, state, RngStream(0))
    assert np.all(np.abs(xi) <= 1)
    assert np.allclose(logp, -np.log(2))
    assert abs(xi.mean()) < 0.1
    assert policy.score(params, np.zeros((3, 2)), np.zeros(2)).size == 0


def test_default_architecture_size():
    from ionpf.policy import coerce_policy
    policy = coerce_policy()
    assert policy.kind == 'gru'
    assert policy.num_params == 215490


def test_arch_config_validation():
    import pytest
    from ionpf.policy import PolicyArchConfig
    from ionpf.exceptions import ConfigError
    with pytest.raises(ConfigError):
        PolicyArchConfig(kind='transformer')
    with pytest.raises(ConfigError):
        PolicyArchConfig(recurrent_widths=[])
    with pytest.raises(ConfigError):
        PolicyArchConfig(kind='linear', memory=1.0)


def test_checkpoint_roundtrip_is_bit_exact():
    import numpy as np
    import ubelt as ub
    from ionpf.core import RngStream
    from ionpf.policy import PolicyArchConfig, coerce_policy, save_policy, load_policy
    dpath = ub.Path.appdir('ionpf', 'tests', 'policy').delete().ensuredir()
    arch = PolicyArchConfig(encoder_widths=[4], embed_dim=3, recurrent_widths=[3], head_widths=[4])
    policy = coerce_policy(arch)
    params = policy.init_params(RngStream(0))
    fpath = save_policy(dpath / 'policy.json', policy, params)
    policy2, params2 = load_policy(fpath, arch=arch)
    assert policy2.num_params == policy.num_params
    assert np.array_equal(params.flat, params2.flat)
    # the loaded policy computes the same densities
    xs = np.zeros((4, 2))
    xis = np.array([0.1, -0.2, 0.3])
    assert policy.trajectory_logpdf(params, xs, xis) == policy2.trajectory_logpdf(params2, xs, xis)


def test_checkpoint_errors():
    import pytest
    import ubelt as ub
    from ionpf.core import RngStream
    from ionpf.policy import PolicyArchConfig, coerce_policy, save_policy, load_policy
    from ionpf.exceptions import ArchitectureMismatchError, CheckpointError, DataError
    dpath = ub.Path.appdir('ionpf', 'tests', 'policy_errors').delete().ensuredir()
    with pytest.raises(FileNotFoundError):
        load_policy(dpath / 'missing.json')
    policy = coerce_policy(kind='linear')
    fpath = save_policy(dpath / 'policy.json', policy, policy.init_params(RngStream(0)))
    with pytest.raises(ArchitectureMismatchError):
        load_policy(fpath, arch=PolicyArchConfig(kind='gru'))
    bad = dpath / 'corrupt.json'
    bad.write_text('{"format": "ionpf-policy", "version": 1, "par')
    with pytest.raises(CheckpointError):
        load_policy(bad)
    bad.write_text('[1, 2, 3]')
    with pytest.raises(DataError):
        load_policy(bad)
    bad.write_text('{"format": "something-else", "version": 1}')
    with pytest.raises(CheckpointError):
        load_policy(bad)


def test_sampled_designs_follow_the_squashed_gaussian():
    import numpy as np
    from scipy import stats
    from ionpf.core import RngStream
    from ionpf.policy import coerce_policy, tanh_gauss_cdf
    batch = 5000
    z = np.tile([0.3, -0.1, 0.2], (batch, 1))
    for idx, arch in enumerate(_small_archs()):
        policy = coerce_policy(arch)
        params = policy.init_params(RngStream(idx))
        state = policy.step(params, policy.initial_state(batch), z)
        mu, log_std = policy.head(params, state)
        assert np.allclose(mu, mu[0])
        xi, _ = policy.sample(params, state, RngStream(idx, 1))
        std = np.exp(log_std[0])
        result = stats.kstest(xi[:, 0], lambda v: tanh_gauss_cdf(v, mu[0, 0], std))
        assert result.pvalue > 1e-3, (arch.kind, result)


def test_random_policy_draws_through_the_uniform_sampler():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.policy import coerce_policy, random_policy_sample
    policy = coerce_policy(kind='random')
    params = policy.init_params()
    state = policy.initial_state(6)
    xi, _ = policy.sample(params, state, RngStream(3))
    assert np.array_equal(xi, random_policy_sample(RngStream(3), (6, 1)))
    rngs = RngStream(4).children(6)
    xi, _ = policy.sample(params, state, rngs)
    want = [random_policy_sample(r, 1) for r in RngStream(4).children(6)]
    assert np.array_equal(xi, np.stack(want))
