
def _small(horizon=4):
    from ionpf.core import RngStream
    from ionpf.model import PendulumModel
    from ionpf.policy import coerce_policy
    model = PendulumModel(horizon=horizon)
    policy = coerce_policy(kind='linear')
    params = policy.init_params(RngStream(0))
    return model, policy, params


def test_spce_is_capped_by_log_contrastive():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.evaluation import EvalConfig, spce_estimate
    model, policy, params = _small()
    for contrastive in [1, 10, 200]:
        cfg = EvalConfig(rollouts=6, contrastive=contrastive, chunk_size=64)
        est = spce_estimate(model, policy, params, cfg, RngStream(1))
        assert len(est.values) == 6
        assert np.all(est.values <= np.log(contrastive + 1) + 1e-9)


def test_spce_does_not_depend_on_chunking():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.evaluation import simulate_rollouts, spce_values
    model, policy, params = _small()
    theta0 = model.prior_belief().mean
    xs, xis = simulate_rollouts(model, policy, params, theta0[None], [RngStream(2, 1)])
    values = [spce_values(model, xs[0], xis[0], theta0, 100, RngStream(2), chunk_size=size)
              for size in [1, 7, 100, 1000]]
    assert np.allclose(values, values[0], rtol=0, atol=1e-10)
    assert values[0] <= np.log(101)
    other = spce_values(model, xs[0], xis[0], theta0, 100, RngStream(3), chunk_size=7)
    assert other != values[1]


def test_realized_information_gain_curve():
    import numpy as np
    import pytest
    from ionpf.core import RngStream
    from ionpf.evaluation import realized_ig_curve
    from ionpf.exceptions import ConfigError
    from ionpf.model import PendulumModel
    model, policy, params = _small(horizon=6)
    curve = realized_ig_curve(model, policy, params, 5, RngStream(3))
    assert curve.values.shape == (5, 7)
    assert np.all(curve.values[:, 0] == 0)
    assert np.all(np.diff(curve.values, axis=1) >= -1e-12)
    assert [row['t'] for row in curve.rows()] == list(range(7))

    class OpaqueModel(PendulumModel):
        is_conjugate = False

    with pytest.raises(ConfigError):
        realized_ig_curve(OpaqueModel(horizon=3), policy, params, 2, RngStream(3))


def test_eig_estimate_is_deterministic_and_thread_invariant():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.evaluation import EvalConfig, eig_estimate
    model, policy, params = _small()
    cfg = EvalConfig(rollouts=4, num_theta=16)
    a = eig_estimate(model, policy, params, cfg, RngStream(4))
    b = eig_estimate(model, policy, params, cfg, RngStream(4), threads=3)
    assert np.array_equal(a.values, b.values)
    exact = eig_estimate(model, policy, params, cfg, RngStream(4), strategy='exact')
    assert np.all(np.isfinite(exact.values))
    assert exact.stderr >= 0


def test_evaluate_and_dump(tmp_path):
    import json
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.evaluation import EvalConfig, evaluate
    from ionpf.util_records import read_csv
    model, policy, params = _small(horizon=3)
    cfg = EvalConfig(rollouts=3, num_theta=8, contrastive=20, replications=4)
    report = evaluate(model, policy, params, cfg, RngStream(5))
    paths = report.dump(tmp_path / 'eval')
    data = json.loads(paths['report'].read_text())
    assert data['policy'] == 'linear'
    assert data['horizon'] == 3
    assert len(data['eig_values']) == 3
    assert set(data['runtime']) == {'eig_seconds', 'spce_seconds', 'realized_ig_seconds'}
    rows = read_csv(paths['curve'])
    assert len(rows) == 4
    assert np.allclose([r['mean'] for r in rows], report.realized_ig.mean)


def test_bench_report_exponents(tmp_path):
    import numpy as np
    from ionpf.evaluation import BenchReport
    from ionpf.util_records import read_csv
    rows = []
    for horizon in [10, 20, 40]:
        rows.append({'strategy': 'npf', 'horizon': horizon, 'median_seconds': 0.01 * horizon, 'repeats': 1})
        rows.append({'strategy': 'ibis', 'horizon': horizon, 'median_seconds': 0.001 * horizon ** 2, 'repeats': 1})
    rows.append({'strategy': 'exact', 'horizon': 10, 'median_seconds': 0.1, 'repeats': 1})
    exps = BenchReport(rows).exponents()
    assert np.isclose(exps['npf'], 1.0)
    assert np.isclose(exps['ibis'], 2.0)
    assert np.isnan(exps['exact'])
    dpath = BenchReport(rows).dump(tmp_path)
    assert len(read_csv(dpath / 'bench.csv')) == 7
    assert len(read_csv(dpath / 'bench_exponents.csv')) == 3


def test_runtime_benchmark_grid():
    from ionpf.core import RngStream
    from ionpf.evaluation import runtime_benchmark, BENCH_STRATEGIES
    from ionpf.io_npf import RunConfig
    from ionpf.model import PendulumConfig
    _, policy, params = _small()
    run_cfg = RunConfig(num_particles=3, num_theta=4)
    report = runtime_benchmark(PendulumConfig(), run_cfg, policy, params, RngStream(6),
                               horizons=[2, 4], repeats=1)
    assert len(report.rows) == 2 * len(BENCH_STRATEGIES)
    assert all(row['median_seconds'] > 0 for row in report.rows)
    assert set(report.exponents()) == set(BENCH_STRATEGIES)


def test_eval_config_validation():
    import pytest
    from ionpf.evaluation import EvalConfig
    from ionpf.exceptions import ConfigError
    with pytest.raises(ConfigError):
        EvalConfig(rollouts=0)
    with pytest.raises(ConfigError):
        EvalConfig(bench_strategies=['npf', 'smc2'])
    assert EvalConfig(L=7).contrastive == 7


def _theta_free_model(horizon):
    """
    A pendulum whose drift features are all zero, so the states carry no
    information about theta.
    """
    import numpy as np
    from ionpf.model import PendulumModel

    class ThetaFreePendulum(PendulumModel):

        def _regression(self, x, xi, x_next):
            _, obs, consistent = super()._regression(x, xi, x_next)
            return np.zeros(self.theta_dim), obs, consistent

        def sample_transition(self, x, xi, theta, rng):
            return super().sample_transition(x, xi, np.zeros(self.theta_dim), rng)

        def history_loglik(self, xs, xis, thetas):
            thetas = np.zeros_like(np.atleast_2d(np.asarray(thetas, dtype=float)))
            return super().history_loglik(xs, xis, thetas)

    return ThetaFreePendulum(horizon=horizon)


def test_theta_free_model_has_no_information():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.evaluation import EvalConfig, eig_estimate, spce_estimate
    from ionpf.policy import coerce_policy
    model = _theta_free_model(horizon=5)
    policy = coerce_policy(kind='random')
    params = policy.init_params()
    cfg = EvalConfig(rollouts=64, num_theta=4, contrastive=500)
    npf = eig_estimate(model, policy, params, cfg, RngStream(7))
    wide = eig_estimate(model, policy, params, EvalConfig(rollouts=64, num_theta=64), RngStream(7))
    exact = eig_estimate(model, policy, params, cfg, RngStream(7), strategy='exact')
    # every rollout sees the same path and only the noise term remains
    assert np.allclose(npf.values, exact.values)
    assert np.allclose(npf.values, wide.values)
    noise_entropy = 0.5 * np.log(2 * np.pi * np.e * model.noise_var)
    assert abs(npf.mean - model.horizon * noise_entropy) < 4 * npf.stderr
    spce = spce_estimate(model, policy, params, cfg, RngStream(8))
    assert np.allclose(spce.values, 0, atol=1e-9)


def test_spce_single_contrastive_sample_by_hand():
    import numpy as np
    from scipy import stats
    from ionpf.core import RngStream
    from ionpf.evaluation import spce_values
    from ionpf.model import PendulumModel
    model = PendulumModel(horizon=1)
    prior = model.prior_belief()
    theta0 = prior.sample(RngStream(10))
    xi = 0.7
    x0 = model.x0
    x1 = model.sample_transition(x0, xi, theta0, RngStream(11))
    got = spce_values(model, np.stack([x0, x1]), np.array([xi]), theta0, 1, RngStream(12))

    theta1 = prior.sample(RngStream(12).child(0), 1)[0]
    phi = np.array([-np.sin(x0[0]), -x0[1], xi]) * model.dt

    def loglik(theta):
        return stats.norm.logpdf(x1[1] - x0[1] - theta @ phi, scale=model.noise_std)

    l0, l1 = loglik(theta0), loglik(theta1)
    want = l0 - np.log(0.5 * (np.exp(l0) + np.exp(l1)))
    assert np.isclose(got, want)
    assert got <= np.log(2) + 1e-12


def test_exact_and_particle_eig_agree():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.evaluation import EvalConfig, eig_estimate
    from ionpf.model import PendulumModel
    from ionpf.policy import coerce_policy
    model = PendulumModel(horizon=6)
    policy = coerce_policy(kind='random')
    params = policy.init_params()
    cfg = EvalConfig(rollouts=48, num_theta=1024)
    npf = eig_estimate(model, policy, params, cfg, RngStream(13))
    exact = eig_estimate(model, policy, params, cfg, RngStream(14), strategy='exact')
    combined = np.sqrt(npf.stderr ** 2 + exact.stderr ** 2)
    assert abs(npf.mean - exact.mean) < 3 * combined


def test_spce_lower_bounds_the_information_gain():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.evaluation import EvalConfig, eig_estimate, spce_estimate
    from ionpf.model import PendulumModel
    from ionpf.policy import coerce_policy
    model = PendulumModel(horizon=6)
    policy = coerce_policy(kind='random')
    params = policy.init_params()
    cfg = EvalConfig(rollouts=48, contrastive=5000)
    eig = eig_estimate(model, policy, params, cfg, RngStream(15), strategy='exact')
    spce = spce_estimate(model, policy, params, cfg, RngStream(16))
    # the accumulated reward exceeds the information gain by the noise entropy
    noise_entropy = 0.5 * np.log(2 * np.pi * np.e * model.noise_var)
    info_gain = eig.mean - model.horizon * noise_entropy
    combined = np.sqrt(eig.stderr ** 2 + spce.stderr ** 2)
    assert spce.mean <= info_gain + 3 * combined


def test_runtime_benchmark_scaling():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.evaluation import runtime_benchmark
    from ionpf.io_npf import RunConfig
    from ionpf.model import PendulumConfig
    _, policy, params = _small()
    run_cfg = RunConfig(num_particles=4, num_theta=32)
    report = runtime_benchmark(PendulumConfig(), run_cfg, policy, params, RngStream(17),
                               horizons=[8, 16, 32], strategies=['npf', 'npf-bs'], repeats=5)
    exps = report.exponents()
    assert 0.5 <= exps['npf'] <= 1.5
    times = {(r['strategy'], r['horizon']): r['median_seconds'] for r in report.rows}
    assert times[('npf-bs', 32)] > times[('npf', 32)]
