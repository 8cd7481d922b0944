BROAD_JITTER = [1.5, 0.5, 1.5]


def _position_noise_model(horizon, position_std=0.05, diffusion=0.3):
    """
    A pendulum whose position update carries Gaussian noise, so every prefix
    has a finite backward weight.
    """
    import numpy as np
    from scipy import stats
    from ionpf.model import PendulumModel, drift_features

    class PositionNoisePendulum(PendulumModel):
        is_conjugate = False

        def transition_logpdf(self, x_next, x, xi, theta):
            theta = np.asarray(theta, dtype=float)
            phi = drift_features(x, xi) * self.dt
            vel = stats.norm.logpdf(x_next[1] - x[1] - theta @ phi, scale=self.noise_std)
            pos = stats.norm.logpdf(x_next[0] - x[0] - x[1] * self.dt, scale=position_std)
            return vel + pos

        def sample_transition(self, x, xi, theta, rng):
            x_next = super().sample_transition(x, xi, theta, rng.child(0))
            x_next[0] += position_std * rng.child(1).gen.standard_normal()
            return x_next

    return PositionNoisePendulum(horizon=horizon, diffusion=diffusion)


def _history(seed, horizon=6, num_particles=4, num_theta=3, arch=None, model=None, **cfg_kw):
    import ubelt as ub
    from ionpf.core import RngStream
    from ionpf.io_npf import RunConfig, run_filter
    from ionpf.model import PendulumModel
    from ionpf.policy import coerce_policy
    if model is None:
        model = PendulumModel(horizon=horizon)
    policy = coerce_policy(arch if arch is not None else {'kind': 'linear', 'memory': 0.5})
    params = policy.init_params(RngStream(seed, 1))
    params = params.ascent(RngStream(seed, 2).gen.normal(size=len(params)), 0.5)
    cfg = RunConfig(**(ub.udict(num_particles=num_particles, num_theta=num_theta) | cfg_kw))
    return run_filter(model, policy, params, cfg, RngStream(seed, 3))


def test_fast_backward_weight_differences_match_full_weight():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.smoother import backward_weight_log, backward_weight_log_fast
    gru = {'kind': 'gru', 'encoder_widths': [4], 'embed_dim': 3,
           'recurrent_widths': [3], 'head_widths': [4]}
    model = _position_noise_model(horizon=6)
    checked = 0
    for seed in range(6):
        history = _history(seed, arch=gru if seed % 2 else None, model=model,
                           jitter_scale=BROAD_JITTER)
        for case in range(12):
            gen = RngStream(seed, 4).child(case).gen
            t = int(gen.integers(0, history.horizon))
            suffix = gen.integers(0, history.num_particles, history.horizon + 1)
            n1, n2 = gen.choice(history.num_particles, 2, replace=False)
            full = [backward_weight_log(history, n, t, suffix) for n in (n1, n2)]
            fast = [backward_weight_log_fast(history, n, t, suffix) for n in (n1, n2)]
            if not np.all(np.isfinite(full)):
                assert (full[0] == -np.inf) == (fast[0] == -np.inf)
                continue
            assert abs((full[0] - full[1]) - (fast[0] - fast[1])) < 1e-8
            checked += 1
    assert checked > 50


def test_backward_step_leaves_the_smoothing_conditional_invariant():
    import numpy as np
    from scipy import stats
    from scipy.special import logsumexp
    from ionpf.core import RngStream
    from ionpf.io_npf import genealogy_trajectory
    from ionpf.smoother import backward_mh_step, backward_weight_log
    model = _position_noise_model(horizon=3)
    num = 2000
    tested = 0
    moved = 0
    for seed in range(8):
        history = _history(seed, horizon=3, num_particles=3, num_theta=2, model=model,
                           jitter_scale=BROAD_JITTER)
        suffix = genealogy_trajectory(history, 0).indices
        for t in [0, 1]:
            logp = history.frames[t].log_weights + np.array(
                [backward_weight_log(history, n, t, suffix) for n in range(3)])
            probs = np.exp(logp - logsumexp(logp))
            if probs.min() < 0.05:
                continue
            starts = np.random.default_rng(seed).choice(3, size=num, p=probs)
            rng = RngStream(seed, 5)
            ends = np.array([backward_mh_step(history, t, s, suffix, rng.child(t, k))[0]
                             for k, s in enumerate(starts)])
            counts = np.bincount(ends, minlength=3)
            assert stats.chisquare(counts, num * probs).pvalue > 1e-4
            moved += int(np.sum(ends != starts))
            tested += 1
    assert tested >= 2
    assert moved > 0


def test_backward_step_accepts_with_the_weight_ratio():
    import numpy as np
    from ionpf.core import RngStream, multinomial_resample
    from ionpf.io_npf import genealogy_trajectory
    from ionpf.smoother import backward_mh_step, backward_weights_fast
    history = _history(21, horizon=4, model=_position_noise_model(horizon=4),
                       jitter_scale=BROAD_JITTER)
    suffix = genealogy_trajectory(history, 1).indices
    seen = 0
    for k in range(40):
        t = k % history.horizon
        current = suffix[t]
        rng = RngStream(21, 6).child(k)
        index, prob = backward_mh_step(history, t, current, suffix, rng)
        proposal = multinomial_resample(history.frames[t].log_weights, 1, rng.child(0))[0]
        if proposal == current:
            assert index == current and prob is None
            continue
        w_prop, w_cur = backward_weights_fast(history, [proposal, current], t, suffix)
        want = min(1.0, float(np.exp(w_prop - w_cur)))
        assert np.isclose(prob, want)
        accept = rng.child(1).gen.uniform() < want
        assert index == (proposal if accept else current)
        seen += 1
    assert seen > 10


def test_rejected_steps_fall_back_to_the_ancestor():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.io_npf import genealogy_trajectory
    from ionpf.smoother import backward_mh_step, backward_sample_many
    # the deterministic position update gives every non-ancestor prefix
    # zero weight once the states have separated
    history = _history(16, horizon=5, num_particles=5)
    finals = np.arange(history.num_particles)
    paths = backward_sample_many(history, RngStream(3), final_indices=finals)
    for final, path in zip(finals, paths):
        genealogy = genealogy_trajectory(history, final)
        assert np.array_equal(path.indices[1:], genealogy.indices[1:])
        assert np.array_equal(path.xs, genealogy.xs)
    suffix = genealogy_trajectory(history, 2).indices
    for t in range(1, history.horizon):
        for k in range(10):
            index, prob = backward_mh_step(history, t, suffix[t], suffix, RngStream(16, 7).child(t, k))
            assert index == suffix[t]
            assert prob in (None, 0.0)


def test_backward_sampling_diversifies_early_times():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.smoother import backward_sample_many, degeneracy_report
    model = _position_noise_model(horizon=10)
    genealogy, backward = [], []
    for seed in range(6):
        history = _history(seed, horizon=10, num_particles=8, num_theta=4, model=model,
                           jitter_scale=BROAD_JITTER)
        paths = backward_sample_many(history, RngStream(seed, 8), final_indices=np.arange(8))
        report = degeneracy_report(history, paths)
        genealogy.append(report.genealogy_unique[0])
        backward.append(report.backward_unique[0])
    assert np.mean(backward) >= np.mean(genealogy)


def test_vectorized_weights_match_single():
    import numpy as np
    from ionpf.smoother import backward_weights_fast, backward_weight_log_fast
    history = _history(10)
    suffix = np.zeros(history.horizon + 1, dtype=int)
    batch = backward_weights_fast(history, np.arange(4), 2, suffix)
    single = [backward_weight_log_fast(history, n, 2, suffix) for n in range(4)]
    assert np.allclose(batch, single)


def test_backward_sample_is_a_valid_path():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.smoother import backward_sample
    history = _history(11)
    traj = backward_sample(history, RngStream(0), final_index=2)
    assert traj.indices[-1] == 2
    for t in range(history.horizon + 1):
        assert np.array_equal(traj.xs[t], history.frames[t].xs[traj.indices[t]])
    for t in range(1, history.horizon + 1):
        assert traj.xis[t - 1] == history.frames[t].xi_prev[traj.indices[t]]
    assert len(traj.accept_probs) == traj.num_proposals
    assert 0 <= traj.num_accepted <= traj.num_proposals
    again = backward_sample(history, RngStream(0), final_index=2)
    assert np.array_equal(traj.indices, again.indices)


def test_single_particle_backward_sample_is_the_genealogy():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.io_npf import genealogy_trajectory
    from ionpf.smoother import backward_sample, degeneracy_report
    history = _history(12, num_particles=1)
    traj = backward_sample(history, RngStream(0))
    assert traj.num_proposals == 0 and traj.acceptance_rate == 0.0
    assert np.array_equal(traj.xs, genealogy_trajectory(history, 0).xs)
    report = degeneracy_report(history, [traj])
    assert np.all(report.genealogy_unique == 1)
    assert np.all(report.backward_unique == 1)


def test_backward_sample_many_is_thread_invariant():
    import numpy as np
    from ionpf.core import RngStream
    from ionpf.smoother import backward_sample_many
    history = _history(13)
    serial = backward_sample_many(history, RngStream(1), num=5)
    threaded = backward_sample_many(history, RngStream(1), num=5, threads=3)
    for a, b in zip(serial, threaded):
        assert np.array_equal(a.indices, b.indices)
    fixed = backward_sample_many(history, RngStream(1), final_indices=[0, 1, 2, 3])
    assert [p.indices[-1] for p in fixed] == [0, 1, 2, 3]


def test_degeneracy_report_rows():
    from ionpf.core import RngStream
    from ionpf.smoother import backward_sample_many, degeneracy_report
    history = _history(14, horizon=8, num_particles=6, num_theta=4)
    paths = backward_sample_many(history, RngStream(2))
    report = degeneracy_report(history, paths)
    rows = report.rows()
    assert len(rows) == history.horizon + 1
    assert rows[-1]['genealogy_unique'] == 6
    for row in rows:
        assert 1 <= row['genealogy_unique'] <= 6
        assert 1 <= row['backward_unique'] <= 6


def test_backward_sampling_needs_jitter_strategy():
    import pytest
    from ionpf.core import RngStream
    from ionpf.smoother import backward_sample
    from ionpf.exceptions import ConfigError
    history = _history(15, horizon=3, strategy='exact')
    with pytest.raises(ConfigError):
        backward_sample(history, RngStream(0))
