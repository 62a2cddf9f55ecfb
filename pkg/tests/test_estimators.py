"""Scheme update cores against hand-derived oracles, plus cross-scheme behavior."""

import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from enkbf import (
    EstimatorTrace,
    GaussianPosterior,
    ObservationPath,
    SchemeConfig,
    TwoScaleModel,
    damped_rotation,
    enkbf_step_highfreq,
    enkbf_step_strat,
    enkbf_step_subsampled,
    gaussian_prior_sampler,
    kalman_gain,
    rotation_drift,
    run_ensemble,
    run_estimator,
    run_filtered_estimator,
    run_sgd,
    simulate_filtered,
    simulate_reference,
    simulate_two_scale_batch,
    window_reduce,
    write_trace_csv,
)
from enkbf.errors import ConfigError, NumericError
from enkbf.estimators import _run_on_states
from enkbf.models import FilterConfig, LinearModel, frobenius
from enkbf.paths import derive_seed, noise_stream, reference_states_batch, two_scale_states_batch


class TestSchemeConfig:
    def test_rejects_unknown_variant_and_gain_mode(self):
        with pytest.raises(ConfigError, match="variant"):
            SchemeConfig("midpoint", 0.06, 60)
        with pytest.raises(ConfigError, match="gain mode"):
            SchemeConfig("subsampled", 0.06, 60, gain_mode="frozen")

    def test_rejects_bad_steps(self):
        with pytest.raises(ConfigError, match="delta_t"):
            SchemeConfig("subsampled", 0.0, 60)
        with pytest.raises(ConfigError, match="L"):
            SchemeConfig("subsampled", 0.06, 0)

    def test_correction_matrix_rules(self):
        with pytest.raises(ConfigError, match="needs a correction"):
            SchemeConfig("highfreq_corrected", 0.06, 60)
        with pytest.raises(ConfigError, match="only valid"):
            SchemeConfig("highfreq", 0.06, 60, correction=np.eye(2))
        with pytest.raises(ConfigError, match="square"):
            SchemeConfig("highfreq_corrected", 0.06, 60, correction=np.ones(2))
        cfg = SchemeConfig("highfreq_corrected", 0.06, 60, correction=np.eye(2))
        assert cfg.correction.flags.writeable is False


class TestKalmanGain:
    def test_zero_state_or_variance_gives_zero(self, benchmark):
        assert np.all(kalman_gain(4.0, np.zeros(2), benchmark.A, 1.0, 0.06) == 0.0)
        assert np.all(kalman_gain(0.0, np.ones(2), benchmark.A, 1.0, 0.06) == 0.0)

    def test_exact_denominator_oracle(self, benchmark):
        # sigma=4, x=(1,0): A x = (-1/2, -1/2), (Ax).(Ax) = 1/2, so the
        # denominator is 1 + 0.06*4*0.5 = 1.12 and each entry is -2/1.12
        K = kalman_gain(4.0, np.array([1.0, 0.0]), benchmark.A, 1.0, 0.06)
        np.testing.assert_allclose(K, [-2.0 / 1.12, -2.0 / 1.12], atol=1e-12)

    def test_stationary_denominator_uses_average_quadratic(self, benchmark):
        # (A'A):C = 1 for this model, so the denominator becomes 1.24
        K = kalman_gain(4.0, np.array([1.0, 0.0]), benchmark.A, 1.0, 0.06,
                        gain_mode="stationary")
        np.testing.assert_allclose(K, [-2.0 / 1.24, -2.0 / 1.24], atol=1e-12)
        K2 = kalman_gain(4.0, np.array([1.0, 0.0]), benchmark.A, 1.0, 0.06,
                         gain_mode="stationary", stat_cov=2.0 * np.eye(2))
        np.testing.assert_allclose(K2, [-2.0 / 1.48, -2.0 / 1.48], atol=1e-12)

    def test_both_modes_share_the_small_step_limit(self, benchmark):
        x = np.array([0.7, -0.4])
        expect = 4.0 * (benchmark.A @ x)
        for mode in ("exact", "stationary"):
            K = kalman_gain(4.0, x, benchmark.A, 1.0, 0.0, gain_mode=mode)
            np.testing.assert_allclose(K, expect, atol=1e-12)

    def test_rejects_unknown_mode(self, benchmark):
        with pytest.raises(ConfigError, match="gain mode"):
            kalman_gain(4.0, np.ones(2), benchmark.A, 1.0, 0.06, gain_mode="x")


class TestSubsampledStep:
    def test_degenerate_inputs_freeze_the_posterior(self, benchmark):
        cfg = SchemeConfig("subsampled", 0.06, 60)
        flat = GaussianPosterior(mu=0.3, sigma=0.0)
        out = enkbf_step_subsampled(flat, np.ones(2), np.zeros(2), benchmark.A, 1.0, cfg)
        assert (out.mu, out.sigma) == (0.3, 0.0)
        out = enkbf_step_subsampled(
            GaussianPosterior(0.3, 4.0), np.zeros(2), np.zeros(2), benchmark.A, 1.0, cfg
        )
        assert (out.mu, out.sigma) == (0.3, 4.0)

    def test_single_step_oracle(self, benchmark):
        # straight-line evaluation with sigma=4, mu=0, x0=(1,0),
        # dx=(-0.03,-0.03), dt=0.06: gain (-25/14,-25/14) picks up
        # data 3/28; shrink (1 - 0.03*25/14) = 53/56
        cfg = SchemeConfig("subsampled", 0.06, 60)
        x0 = np.array([1.0, 0.0])
        x1 = x0 + np.array([-0.03, -0.03])
        out = enkbf_step_subsampled(
            GaussianPosterior(0.0, 4.0), x0, x1, benchmark.A, 1.0, cfg
        )
        assert out.mu == pytest.approx(3.0 / 28.0, abs=1e-12)
        assert out.sigma == pytest.approx(2809.0 / 784.0, abs=1e-12)

    def test_variance_ratio_reproduces_the_gain_contraction(self, benchmark, prior, short_path):
        cfg = SchemeConfig("subsampled", 0.06, 60)
        trace = run_estimator(short_path, cfg, prior, benchmark.A, benchmark.gamma)
        coarse = short_path.states[::60]
        for n in range(len(trace.times) - 1):
            K = kalman_gain(trace.sigma[n], coarse[n], benchmark.A, 1.0, 0.06)
            factor = (1.0 - 0.03 * float(K @ (benchmark.A @ coarse[n]))) ** 2
            assert trace.sigma[n + 1] == pytest.approx(trace.sigma[n] * factor, rel=1e-12)

    def test_one_step_variance_is_first_order_consistent(self, benchmark):
        # against the exact flow sigma_t = sigma0 / (1 + sigma0 q t / gamma)
        # at frozen state x=(1,0): halving dt cuts the defect by ~4
        x = np.array([1.0, 0.0])
        errs = []
        for dt in (0.06, 0.03):
            cfg = SchemeConfig("subsampled", dt, 1)
            out = enkbf_step_subsampled(GaussianPosterior(0.0, 4.0), x, x, benchmark.A, 1.0, cfg)
            errs.append(abs(out.sigma - 4.0 / (1.0 + 4.0 * 0.5 * dt)))
        assert 3.2 < errs[0] / errs[1] < 4.5


class TestIntegralStep:
    def test_constant_window_leaves_only_the_decay(self, benchmark):
        x = np.array([0.8, -0.2])
        path = ObservationPath(states=np.tile(x, (61, 1)), delta_tau=1e-3)
        cfg = SchemeConfig("highfreq", 0.06, 60)
        out = enkbf_step_highfreq(GaussianPosterior(0.5, 2.0), path, 0, benchmark.A, 1.0, cfg)
        quad = float((benchmark.A @ x) @ (benchmark.A @ x))
        assert out.mu == pytest.approx(0.5 - 2.0 * quad * 0.5 * 0.06, abs=1e-12)
        assert out.sigma == pytest.approx(2.0 * (1.0 - 0.03 * 2.0 * quad) ** 2, abs=1e-12)

    def test_zero_correction_matches_plain_variant(self, benchmark, prior, short_path):
        plain = SchemeConfig("highfreq", 0.06, 60, gain_mode="stationary")
        zeroed = SchemeConfig(
            "highfreq_corrected", 0.06, 60, gain_mode="stationary", correction=np.zeros((2, 2))
        )
        a = run_estimator(short_path, plain, prior, benchmark.A, benchmark.gamma)
        b = run_estimator(short_path, zeroed, prior, benchmark.A, benchmark.gamma)
        assert np.array_equal(a.mu, b.mu)
        assert np.array_equal(a.sigma, b.sigma)

    def test_two_scale_window_bias_matches_fast_drift_contraction(self, benchmark):
        # per-window second-order sums contracted against A' average to
        # (delta_t/2) tr(A M) = -0.09, the drift the corrected variant removes
        ts = TwoScaleModel(base=benchmark, fast_drift=rotation_drift(2.0), epsilon=0.01)
        paths = simulate_two_scale_batch(ts, 3.0, 1e-4, 20, 555)
        vals = []
        for p in paths:
            win = window_reduce(p.states, 600, benchmark.A, with_second=True)
            vals.extend(frobenius(benchmark.A.T, s) for s in win.second)
        vals = np.asarray(vals)
        assert len(vals) == 1000
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - (-0.09)) <= 3.0 * se + 0.005

    def test_oversized_shrink_raises(self, benchmark, prior):
        # exact gain at sigma=4 and a large frozen state: the shrink factor
        # 1 - dt sigma quad / (2 gamma) drops below zero
        path = ObservationPath(states=np.tile([5.0, 0.0], (61, 1)), delta_tau=1e-3)
        cfg = SchemeConfig("highfreq", 0.06, 60)
        with pytest.raises(NumericError, match="shrink"):
            run_estimator(path, cfg, prior, benchmark.A, benchmark.gamma)


class TestStratStep:
    def test_zero_states_leave_only_the_trace_drift(self, benchmark):
        # tr(A) = -1, so one step adds +sigma*dt/2 to the mean
        cfg = SchemeConfig("strat", 0.06, 60)
        out = enkbf_step_strat(
            GaussianPosterior(0.2, 4.0), np.zeros(2), np.zeros(2), benchmark.A, 1.0, cfg
        )
        assert out.mu == pytest.approx(0.2 + 4.0 * 0.03, abs=1e-14)
        assert out.sigma == pytest.approx(4.0, abs=1e-14)

    def test_agrees_with_corrected_variant_to_first_order(self, prior):
        # for symmetric A the midpoint quadrature reproduces the corrected
        # integral update with M = I; with the regularised gain denominator
        # the one-window gap closes at first order in delta_t
        sym = LinearModel(A=-np.eye(2), gamma=1.0)
        path = simulate_reference(sym, 1.0, 1e-4, 3)
        mean_gap = {}
        for L in (600, 300, 150):
            dt = L * 1e-4
            cfg_s = SchemeConfig("strat", dt, L)
            cfg_c = SchemeConfig("highfreq_corrected", dt, L, correction=np.eye(2))
            gaps = []
            for start in range(0, path.n_fine - L, L):
                states = path.states[start:start + L + 1]
                _, mu_s, _ = _run_on_states(states, None, 1e-4, cfg_s, prior, sym.A, 1.0, None)
                _, mu_c, _ = _run_on_states(states, None, 1e-4, cfg_c, prior, sym.A, 1.0, None)
                gaps.append(abs(mu_s[-1] - mu_c[-1]))
            mean_gap[L] = np.mean(gaps)
        assert 1.5 < mean_gap[600] / mean_gap[300] < 2.6
        assert 1.5 < mean_gap[300] / mean_gap[150] < 2.6


class TestRunEstimator:
    def test_zero_prior_variance_freezes_the_trace(self, benchmark, short_path):
        flat = GaussianPosterior(mu=0.7, sigma=0.0)
        for variant in ("subsampled", "highfreq", "strat"):
            cfg = SchemeConfig(variant, 0.06, 60)
            trace = run_estimator(short_path, cfg, flat, benchmark.A, benchmark.gamma)
            assert np.all(trace.mu == 0.7)
            assert np.all(trace.sigma == 0.0)

    def test_trace_grid(self, benchmark, prior, short_path):
        cfg = SchemeConfig("subsampled", 0.06, 60)
        trace = run_estimator(short_path, cfg, prior, benchmark.A, benchmark.gamma)
        assert len(trace.times) == 51
        assert trace.times[0] == 0.0
        assert trace.times[-1] == pytest.approx(3.0)
        assert trace.mu[0] == prior.mu and trace.sigma[0] == prior.sigma

    def test_left_point_variance_never_increases(self, benchmark, prior, short_path):
        # the midpoint variant is excluded: its gain can pair misaligned
        # drift vectors and produce transient upticks
        for variant in ("subsampled", "highfreq"):
            cfg = SchemeConfig(variant, 0.06, 60)
            trace = run_estimator(short_path, cfg, prior, benchmark.A, benchmark.gamma)
            assert np.all(np.diff(trace.sigma) <= 1e-15)

    def test_stationary_gain_variance_ignores_the_path(self, benchmark, prior):
        a = simulate_reference(benchmark, 3.0, 1e-3, 1)
        b = simulate_reference(benchmark, 3.0, 1e-3, 2)
        for variant in ("subsampled", "highfreq", "strat"):
            cfg = SchemeConfig(variant, 0.06, 60, gain_mode="stationary")
            ta = run_estimator(a, cfg, prior, benchmark.A, benchmark.gamma)
            tb = run_estimator(b, cfg, prior, benchmark.A, benchmark.gamma)
            assert np.array_equal(ta.sigma, tb.sigma)
            assert not np.array_equal(ta.mu, tb.mu)

    def test_stationary_variance_tracks_the_closed_form(self, benchmark, prior):
        path = simulate_reference(benchmark, 6.0, 1e-3, 7)
        cfg = SchemeConfig("subsampled", 0.06, 60, gain_mode="stationary")
        trace = run_estimator(path, cfg, prior, benchmark.A, benchmark.gamma)
        closed = 4.0 / (1.0 + 4.0 * trace.times)
        assert np.max(np.abs(trace.sigma - closed)) <= 1.5 * 0.06
        assert abs(trace.sigma[-1] - 0.16) <= 0.01

    def test_rejects_grid_mismatch(self, benchmark, prior, short_path):
        with pytest.raises(ConfigError, match="nest"):
            run_estimator(
                short_path, SchemeConfig("subsampled", 0.06, 50), prior,
                benchmark.A, benchmark.gamma,
            )
        with pytest.raises(ConfigError, match="windows"):
            run_estimator(
                short_path, SchemeConfig("subsampled", 0.7, 700), prior,
                benchmark.A, benchmark.gamma,
            )

    def test_batched_runs_equal_single_runs_bitwise(self, benchmark, prior):
        seeds = [derive_seed(77, k) for k in range(4)]
        states = reference_states_batch(benchmark, 1.2, 1e-3, seeds)
        for variant in ("subsampled", "highfreq", "strat"):
            for mode in ("exact", "stationary"):
                cfg = SchemeConfig(variant, 0.06, 60, gain_mode=mode)
                _, mu_b, sig_b = _run_on_states(
                    states, None, 1e-3, cfg, prior, benchmark.A, benchmark.gamma, None
                )
                for k, seed in enumerate(seeds):
                    path = simulate_reference(benchmark, 1.2, 1e-3, seed)
                    tr = run_estimator(path, cfg, prior, benchmark.A, benchmark.gamma)
                    assert np.array_equal(mu_b[:, k], tr.mu)
                    assert np.array_equal(sig_b[:, k], tr.sigma)


class TestSchemeComparisons:
    def test_subsampled_and_highfreq_means_agree_on_reference_data(self, benchmark, prior):
        seeds = [derive_seed(888, k) for k in range(200)]
        states = reference_states_batch(benchmark, 6.0, 1e-3, seeds)
        mus = {}
        for variant in ("subsampled", "highfreq"):
            cfg = SchemeConfig(variant, 0.06, 60, gain_mode="stationary")
            _, mu, _ = _run_on_states(
                states, None, 1e-3, cfg, prior, benchmark.A, benchmark.gamma, None
            )
            mus[variant] = mu[-1]
        gap = abs(mus["subsampled"].mean() - mus["highfreq"].mean())
        band = 3.0 * np.sqrt(
            mus["subsampled"].var(ddof=1) / 200 + mus["highfreq"].var(ddof=1) / 200
        )
        assert gap <= band

    def test_corrected_scheme_approaches_subsampled_as_scales_separate(self, benchmark, prior):
        # paired on the same slow paths; the mean gap shrinks with epsilon
        # toward the reference-data gap between the integral and increment
        # families
        signed = {}
        absolute = {}
        for eps in (0.04, 0.02, 0.01):
            dtau = eps / 100.0
            L = int(round(0.06 / dtau))
            ts = TwoScaleModel(base=benchmark, fast_drift=rotation_drift(2.0), epsilon=eps)
            seeds = [derive_seed(31337, k) for k in range(100)]
            slow, _ = two_scale_states_batch(ts, 3.0, dtau, seeds)
            cfg_c = SchemeConfig("highfreq_corrected", 0.06, L, gain_mode="stationary",
                                 correction=ts.fast_drift)
            cfg_s = SchemeConfig("subsampled", 0.06, L, gain_mode="stationary")
            _, mu_c, _ = _run_on_states(slow, None, dtau, cfg_c, prior,
                                        benchmark.A, benchmark.gamma, None)
            _, mu_s, _ = _run_on_states(slow, None, dtau, cfg_s, prior,
                                        benchmark.A, benchmark.gamma, None)
            g = mu_c[-1] - mu_s[-1]
            signed[eps] = g.mean()
            absolute[eps] = np.abs(g).mean()
        assert absolute[0.04] > absolute[0.02] > absolute[0.01]

        # reference-data limit of the same comparison
        seeds = [derive_seed(31337, k) for k in range(100)]
        states = reference_states_batch(benchmark, 3.0, 1e-4, seeds)
        cfg_h = SchemeConfig("highfreq", 0.06, 600, gain_mode="stationary")
        cfg_s = SchemeConfig("subsampled", 0.06, 600, gain_mode="stationary")
        _, mu_h, _ = _run_on_states(states, None, 1e-4, cfg_h, prior,
                                    benchmark.A, benchmark.gamma, None)
        _, mu_s, _ = _run_on_states(states, None, 1e-4, cfg_s, prior,
                                    benchmark.A, benchmark.gamma, None)
        limit = (mu_h[-1] - mu_s[-1]).mean()
        assert abs(signed[0.01] - limit) < abs(signed[0.04] - limit)


class TestFilteredEstimator:
    def test_identity_filter_reproduces_highfreq_exactly(self, benchmark, prior, short_path):
        cfg = SchemeConfig("highfreq", 0.06, 60)
        direct = run_estimator(short_path, cfg, prior, benchmark.A, benchmark.gamma)
        via = run_filtered_estimator(
            short_path, short_path, cfg, prior, benchmark.A, benchmark.gamma
        )
        assert np.array_equal(direct.mu, via.mu)
        assert np.array_equal(direct.sigma, via.sigma)

    def test_filtered_signal_changes_the_drift_vector(self, benchmark, prior, short_path):
        z = simulate_filtered(short_path, FilterConfig(delta=0.1))
        cfg = SchemeConfig("highfreq", 0.06, 60)
        direct = run_estimator(short_path, cfg, prior, benchmark.A, benchmark.gamma)
        filtered = run_filtered_estimator(
            short_path, z, cfg, prior, benchmark.A, benchmark.gamma
        )
        assert not np.array_equal(direct.mu, filtered.mu)

    def test_rejects_wrong_variant_and_grids(self, benchmark, prior, short_path):
        z = simulate_filtered(short_path, FilterConfig(delta=0.1))
        with pytest.raises(ConfigError, match="highfreq"):
            run_filtered_estimator(
                short_path, z, SchemeConfig("subsampled", 0.06, 60), prior,
                benchmark.A, benchmark.gamma,
            )
        other = simulate_reference(benchmark, 1.0, 1e-3, 5)
        with pytest.raises(ConfigError, match="grid"):
            run_filtered_estimator(
                short_path, other, SchemeConfig("highfreq", 0.06, 60), prior,
                benchmark.A, benchmark.gamma,
            )
        coarse = ObservationPath(states=short_path.states, delta_tau=2e-3)
        with pytest.raises(ConfigError, match="delta_tau"):
            run_filtered_estimator(
                short_path, coarse, SchemeConfig("highfreq", 0.06, 60), prior,
                benchmark.A, benchmark.gamma,
            )


class TestEnsemble:
    def test_validation(self, benchmark, short_path):
        sampler = gaussian_prior_sampler(0.0, 4.0)
        cfg = SchemeConfig("subsampled", 0.06, 60)
        with pytest.raises(ConfigError, match="particles"):
            run_ensemble(short_path, cfg, sampler, 1, 1, benchmark.A, benchmark.gamma)
        with pytest.raises(ConfigError, match="innovation"):
            run_ensemble(short_path, cfg, sampler, 8, 1, benchmark.A, benchmark.gamma,
                         innovation="midpoint")
        with pytest.raises(ConfigError, match="families"):
            run_ensemble(short_path, SchemeConfig("strat", 0.06, 60), sampler, 8, 1,
                         benchmark.A, benchmark.gamma)
        with pytest.raises(ConfigError, match="scalar per particle"):
            run_ensemble(short_path, cfg, lambda rng, n: np.zeros((n, 2)), 8, 1,
                         benchmark.A, benchmark.gamma)

    def test_collapsed_ensemble_freezes(self, benchmark, short_path):
        cfg = SchemeConfig("subsampled", 0.06, 60)
        trace = run_ensemble(
            short_path, cfg, lambda rng, n: np.full(n, 0.4), 16, 1,
            benchmark.A, benchmark.gamma,
        )
        assert np.all(trace.mu == 0.4)
        assert np.all(trace.sigma == 0.0)

    def test_two_particle_update_mirrors_the_published_formulas(self, benchmark):
        path = simulate_reference(benchmark, 0.6, 1e-3, 44)
        cfg = SchemeConfig("subsampled", 0.06, 60)
        sampler = gaussian_prior_sampler(0.0, 4.0)
        trace = run_ensemble(path, cfg, sampler, 2, 99, benchmark.A, benchmark.gamma)

        rng = noise_stream(99, "ensemble")
        thetas = sampler(rng, 2)
        coarse = path.states[::60]
        for w in range(10):
            x = coarse[w]
            ax = x @ benchmark.A.T
            quad = float(ax @ ax)
            var = float(np.var(thetas))
            mean = float(np.mean(thetas))
            denom = 1.0 + 0.06 * var * quad
            gain = var * ax / denom
            data = float(gain @ (coarse[w + 1] - x))
            drift = 0.5 * (thetas + mean)
            thetas = thetas + data - (var * quad / denom) * drift * 0.06
            assert trace.mu[w + 1] == pytest.approx(np.mean(thetas), abs=1e-13)
            assert trace.sigma[w + 1] == pytest.approx(np.var(thetas), abs=1e-13)

    def test_large_ensemble_tracks_the_mean_field_run(self, benchmark, prior, short_path):
        cfg = SchemeConfig("subsampled", 0.06, 60)
        mf = run_estimator(short_path, cfg, prior, benchmark.A, benchmark.gamma)
        ens = run_ensemble(
            short_path, cfg, gaussian_prior_sampler(0.0, 4.0), 2000, 777,
            benchmark.A, benchmark.gamma,
        )
        band = 3.0 * 5.0 * mf.sigma[-1] / np.sqrt(2000)
        assert abs(ens.mu[-1] - mf.mu[-1]) <= band

    def test_innovation_kinds_estimate_the_same_variance(self, benchmark):
        cfg = SchemeConfig("subsampled", 0.06, 60)
        sampler = gaussian_prior_sampler(0.0, 4.0)
        det, sto = [], []
        for k in range(100):
            path = simulate_reference(benchmark, 3.0, 1e-3, derive_seed(4321, k))
            det.append(run_ensemble(path, cfg, sampler, 200, 9000 + k,
                                    benchmark.A, benchmark.gamma).sigma[-1])
            sto.append(run_ensemble(path, cfg, sampler, 200, 9000 + k,
                                    benchmark.A, benchmark.gamma,
                                    innovation="stochastic").sigma[-1])
        det, sto = np.asarray(det), np.asarray(sto)
        band = 3.0 * np.sqrt(det.var(ddof=1) / 100 + sto.var(ddof=1) / 100)
        assert abs(det.mean() - sto.mean()) <= band


class TestSgd:
    def test_validation(self, benchmark, short_path):
        cfg = SchemeConfig("subsampled", 0.06, 60)
        with pytest.raises(ConfigError, match="alpha_bar"):
            run_sgd(short_path, cfg, 0.0, 0.0, benchmark.A, benchmark.gamma)
        with pytest.raises(ConfigError, match="midpoint"):
            run_sgd(short_path, SchemeConfig("strat", 0.06, 60), 4.0, 0.0,
                    benchmark.A, benchmark.gamma)

    def test_flat_path_keeps_theta_constant(self, benchmark):
        path = ObservationPath(states=np.zeros((61, 2)), delta_tau=1e-3)
        for variant in ("subsampled", "highfreq"):
            cfg = SchemeConfig(variant, 0.06, 60)
            trace = run_sgd(path, cfg, 4.0, 0.3, benchmark.A, benchmark.gamma)
            assert np.all(trace.theta == 0.3)

    def test_update_mirrors_the_schedule_and_gradient(self, benchmark):
        # c = (A'A):C / gamma = 1, so alpha_t = min(alpha_bar, 1/t)
        path = simulate_reference(benchmark, 0.6, 1e-3, 44)
        ts_corr = rotation_drift(2.0)
        for variant, corr in (("subsampled", None), ("highfreq_corrected", ts_corr)):
            cfg = SchemeConfig(variant, 0.06, 60, correction=corr)
            trace = run_sgd(path, cfg, 4.0, 0.1, benchmark.A, benchmark.gamma)
            coarse = path.states[::60]
            win = window_reduce(path.states, 60, benchmark.A)
            theta = 0.1
            for w in range(10):
                t = w * 0.06
                alpha = 4.0 if t == 0 else min(4.0, 1.0 / t)
                ax = coarse[w] @ benchmark.A.T
                q = float(ax @ ax)
                if variant == "subsampled":
                    grad = float(ax @ (coarse[w + 1] - coarse[w])) - theta * q * 0.06
                else:
                    grad = win.ito[w] - theta * q * 0.06 - 0.5 * 0.06 * np.trace(
                        benchmark.A @ ts_corr
                    )
                theta = theta + alpha * grad
                assert trace.theta[w + 1] == pytest.approx(theta, abs=1e-13)

    def test_recovers_the_parameter_on_reference_data(self, benchmark):
        cfg = SchemeConfig("subsampled", 0.06, 60)
        terminals = []
        for k in range(100):
            path = simulate_reference(benchmark, 6.0, 1e-3, derive_seed(2468, k))
            terminals.append(run_sgd(path, cfg, 4.0, 0.0, benchmark.A, benchmark.gamma).theta[-1])
        assert abs(np.mean(terminals) - 1.0) <= 0.2

    def test_uncorrected_integral_gradient_is_pulled_negative(self, benchmark):
        ts = TwoScaleModel(base=benchmark, fast_drift=rotation_drift(2.0), epsilon=0.01)
        cfg = SchemeConfig("highfreq", 0.06, 60)
        terminals = []
        for k in range(60):
            slow = simulate_two_scale_batch(ts, 6.0, 1e-3, 1, derive_seed(1357, k))[0]
            terminals.append(run_sgd(slow, cfg, 4.0, 0.0, benchmark.A, benchmark.gamma).theta[-1])
        assert np.mean(terminals) < 0.5


class TestTraceCsv:
    def test_header_and_round_trip(self):
        trace = EstimatorTrace(
            times=np.array([0.0, 0.06]), mu=np.array([0.0, 0.1]), sigma=np.array([4.0, 3.9])
        )
        buf = io.StringIO()
        write_trace_csv(trace, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "t,mu,sigma"
        data = np.loadtxt(io.StringIO(buf.getvalue()), delimiter=",", skiprows=1)
        np.testing.assert_array_equal(data[:, 1], trace.mu)

    def test_trace_length_validation(self):
        with pytest.raises(ConfigError, match="length"):
            EstimatorTrace(times=np.zeros(3), mu=np.zeros(2), sigma=np.zeros(3))


@given(sigma0=st.floats(0.01, 10.0), scale=st.floats(-3.0, 3.0))
def test_variance_update_is_scale_free_in_the_mean(benchmark, sigma0, scale):
    # mu enters the variance recursion nowhere: shifting the prior mean
    # must leave every sigma trace unchanged
    path = simulate_reference(benchmark, 0.6, 1e-3, 11)
    cfg = SchemeConfig("subsampled", 0.06, 60)
    a = run_estimator(path, cfg, GaussianPosterior(0.0, sigma0), benchmark.A, benchmark.gamma)
    b = run_estimator(path, cfg, GaussianPosterior(scale, sigma0), benchmark.A, benchmark.gamma)
    np.testing.assert_array_equal(a.sigma, b.sigma)
