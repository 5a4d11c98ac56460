"""Synthetic oracles: process statistics and analytic likelihood agreement."""

import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from tsdiff import autodiff as ad
from tsdiff.data import Dataset
from tsdiff.errors import DataError
from tsdiff.oracles import (
    OracleSpec,
    StubIntensityPath,
    analytic_temporal_loglik,
    gen_hawkes,
    gen_homogeneous,
    gen_sinusoidal,
    generate,
    intensity_fn,
)
from tsdiff.training import sequence_loglik


class TestHomogeneous:
    def test_poisson_mean_count(self):
        spec = OracleSpec(kind="homogeneous", rate=2.0, horizon=10.0, dim=1)
        ds = gen_homogeneous(spec, 2000, np.random.default_rng(0))
        counts = np.array([s.n_events for s in ds.sequences])
        assert abs(counts.mean() - 20.0) < 0.5

    def test_poisson_equidispersion(self):
        spec = OracleSpec(kind="homogeneous", rate=2.0, horizon=10.0, dim=1)
        ds = gen_homogeneous(spec, 2000, np.random.default_rng(1))
        counts = np.array([s.n_events for s in ds.sequences])
        assert abs(counts.var() - 20.0) < 2.0

    def test_analytic_loglik_matches_quadrature_stub(self):
        spec = OracleSpec(kind="homogeneous", rate=2.0, horizon=10.0, dim=1)
        ds = gen_homogeneous(spec, 5, np.random.default_rng(2))
        for seq in ds.sequences:
            path = StubIntensityPath(intensity_fn(spec, seq), seq.t_max,
                                     step=0.02, event_times=seq.times)
            temporal, _ = sequence_loglik(seq, path)
            want = analytic_temporal_loglik(spec, seq)
            assert abs(float(ad.value_of(temporal)) - want) < 1e-6


class TestSinusoidal:
    def test_zero_amplitude_reduces_to_homogeneous(self):
        spec = OracleSpec(kind="sinusoidal", mu=2.0, amplitude=0.0,
                          period=10.0, horizon=10.0, dim=1)
        ds = gen_sinusoidal(spec, 1500, np.random.default_rng(3))
        counts = np.array([s.n_events for s in ds.sequences])
        assert abs(counts.mean() - 20.0) < 0.6

    def test_expected_count_over_full_period(self):
        # integral of mu + a sin(2 pi t / P) over one full period is mu * T
        spec = OracleSpec(kind="sinusoidal", mu=2.0, amplitude=1.0,
                          period=10.0, horizon=10.0, dim=1)
        ds = gen_sinusoidal(spec, 2000, np.random.default_rng(4))
        counts = np.array([s.n_events for s in ds.sequences])
        assert abs(counts.mean() - 20.0) < 0.5

    def test_event_histogram_tracks_intensity(self):
        spec = OracleSpec(kind="sinusoidal", mu=2.0, amplitude=1.5,
                          period=10.0, horizon=10.0, dim=1)
        ds = gen_sinusoidal(spec, 3000, np.random.default_rng(5))
        pooled = np.concatenate([s.times for s in ds.sequences])
        counts, edges = np.histogram(pooled, bins=20, range=(0.0, 10.0))
        centers = 0.5 * (edges[:-1] + edges[1:])
        lam = spec.mu + spec.amplitude * np.sin(2 * np.pi * centers / spec.period)
        rho, _ = spearmanr(counts, lam)
        assert rho > 0.9

    def test_analytic_loglik_matches_quadrature_stub(self):
        spec = OracleSpec(kind="sinusoidal", mu=2.0, amplitude=1.0,
                          period=7.0, horizon=10.0, dim=1)
        ds = gen_sinusoidal(spec, 5, np.random.default_rng(6))
        for seq in ds.sequences:
            path = StubIntensityPath(intensity_fn(spec, seq), seq.t_max,
                                     step=0.01, event_times=seq.times)
            temporal, _ = sequence_loglik(seq, path)
            want = analytic_temporal_loglik(spec, seq)
            assert abs(float(ad.value_of(temporal)) - want) < 1e-4

    def test_amplitude_bound(self):
        with pytest.raises(DataError):
            OracleSpec(kind="sinusoidal", mu=1.0, amplitude=1.5)


class TestHawkes:
    def test_zero_excitation_is_homogeneous(self):
        spec = OracleSpec(kind="hawkes", mu=2.0, alpha=0.0, beta=1.0,
                          horizon=10.0, dim=1)
        ds = gen_hawkes(spec, 1500, np.random.default_rng(7))
        counts = np.array([s.n_events for s in ds.sequences])
        assert abs(counts.mean() - 20.0) < 0.6

    def test_branching_ratio_mean_rate(self):
        # stationary rate mu / (1 - alpha/beta) = 2 for mu=1, alpha=0.5, beta=1
        spec = OracleSpec(kind="hawkes", mu=1.0, alpha=0.5, beta=1.0,
                          horizon=200.0, dim=1)
        ds = gen_hawkes(spec, 60, np.random.default_rng(8))
        rates = np.array([s.n_events / spec.horizon for s in ds.sequences])
        assert abs(rates.mean() - 2.0) < 0.1  # 5%

    def test_overdispersion(self):
        spec = OracleSpec(kind="hawkes", mu=1.0, alpha=0.5, beta=1.0,
                          horizon=10.0, dim=1)
        ds = gen_hawkes(spec, 2000, np.random.default_rng(9))
        counts = np.array([s.n_events for s in ds.sequences])
        assert counts.var() > counts.mean()

    def test_instability_rejected(self):
        with pytest.raises(DataError, match="unstable"):
            OracleSpec(kind="hawkes", mu=1.0, alpha=1.0, beta=1.0)

    def test_analytic_loglik_matches_quadrature_stub(self):
        spec = OracleSpec(kind="hawkes", mu=1.0, alpha=0.5, beta=1.0,
                          horizon=8.0, dim=1)
        ds = gen_hawkes(spec, 5, np.random.default_rng(10))
        for seq in ds.sequences:
            path = StubIntensityPath(intensity_fn(spec, seq), seq.t_max,
                                     step=0.005, event_times=seq.times)
            temporal, _ = sequence_loglik(seq, path)
            want = analytic_temporal_loglik(spec, seq)
            assert abs(float(ad.value_of(temporal)) - want) < 1e-4


class TestMarks:
    def test_designed_correlation(self):
        spec = OracleSpec(kind="homogeneous", rate=3.0, horizon=10.0, dim=2,
                          mark_rho=(0.6, 0.0))
        ds = generate(spec, 300, np.random.default_rng(11))
        t = np.concatenate([s.times for s in ds.sequences])
        x = np.vstack([s.values for s in ds.sequences])
        rho0 = np.corrcoef(t, x[:, 0])[0, 1]
        rho1 = np.corrcoef(t, x[:, 1])[0, 1]
        assert abs(rho0 - 0.6) < 0.05
        assert abs(rho1) < 0.05

    def test_negative_designed_correlation(self):
        spec = OracleSpec(kind="homogeneous", rate=3.0, horizon=10.0, dim=1,
                          mark_rho=(-0.5,))
        ds = generate(spec, 300, np.random.default_rng(12))
        t = np.concatenate([s.times for s in ds.sequences])
        x = np.vstack([s.values for s in ds.sequences])
        assert abs(np.corrcoef(t, x[:, 0])[0, 1] + 0.5) < 0.05

    def test_missingness_injected(self):
        spec = OracleSpec(kind="homogeneous", rate=3.0, horizon=10.0, dim=4,
                          missing_rate=0.3)
        ds = generate(spec, 50, np.random.default_rng(13))
        mask = np.vstack([s.mask for s in ds.sequences])
        frac = 1.0 - mask.mean()
        assert abs(frac - 0.3) < 0.03
        assert min(s.mask.sum(axis=1).min() for s in ds.sequences
                   if s.n_events) >= 1

    def test_generated_datasets_satisfy_invariants(self):
        for kind in ("homogeneous", "sinusoidal", "hawkes"):
            spec = OracleSpec(kind=kind, horizon=5.0, dim=2, missing_rate=0.2)
            ds = generate(spec, 10, np.random.default_rng(14))
            assert isinstance(ds, Dataset)
            for s in ds.sequences:
                if s.n_events:
                    assert np.all(np.diff(s.times) > 0)
                    assert s.times[0] >= 0 and s.times[-1] <= s.t_max
                    assert s.mask.sum(axis=1).min() >= 1

    def test_determinism(self):
        spec = OracleSpec(kind="hawkes", horizon=5.0, dim=2, missing_rate=0.1)
        a = generate(spec, 5, np.random.default_rng(15))
        b = generate(spec, 5, np.random.default_rng(15))
        for sa, sb in zip(a.sequences, b.sequences):
            np.testing.assert_array_equal(sa.times, sb.times)
            np.testing.assert_array_equal(sa.values, sb.values)
            np.testing.assert_array_equal(sa.mask, sb.mask)
