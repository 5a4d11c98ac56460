"""Evaluation metrics: score decomposition, PRD curves, TFC, durations."""

import math

import numpy as np
import pytest

from tsdiff import autodiff as ad
from tsdiff import encoder, decoder, diffusion
from tsdiff.autodiff import ParameterStore, Tape
from tsdiff.checkpoint import Checkpoint
from tsdiff.config import Config
from tsdiff.data import Dataset, EventSequence, standardize
from tsdiff.errors import DataError
from tsdiff.metrics import (
    duration_stats,
    duration_tv_distance,
    eval_scores,
    evaluate,
    featurize,
    prd_curve,
    scores_from_paths,
    tfc_score,
    write_report,
)
from tsdiff.oracles import OracleSpec, StubIntensityPath, generate
from tsdiff.training import sequence_loss


def small_config(**kw):
    defaults = dict(hidden=5, embed=2, attn_layers=1, dim=2, diff_steps=10,
                    k_reg=0, solver_step=0.2, dropout=0.0)
    defaults.update(kw)
    return Config(**defaults)


def random_checkpoint(cfg, ds, seed=0):
    ps = ParameterStore()
    rng = np.random.default_rng(seed)
    encoder.init_params(ps, cfg, rng)
    diffusion.init_params(ps, cfg, rng)
    decoder.init_params(ps, cfg, rng)
    return Checkpoint(params=ps, config=cfg, feature_mean=ds.feature_mean,
                      feature_std=ds.feature_std,
                      horizon_variance=ds.horizon_variance)


class TestEvalScores:
    def test_constant_stub_matches_analytic(self):
        # temporal score of a matched constant-rate model:
        # (1/N)(N ln c - c T) per sequence
        spec = OracleSpec(kind="homogeneous", rate=2.0, horizon=10.0, dim=1)
        ds = generate(spec, 40, np.random.default_rng(0))
        seqs = [s for s in ds.sequences if s.n_events > 0]
        paths = [StubIntensityPath(lambda t: 2.0, 10.0, 0.05, s.times)
                 for s in seqs]
        temporal, feature = scores_from_paths(seqs, paths)
        want = np.mean([
            (s.n_events * math.log(2.0) - 20.0) / s.n_events for s in seqs
        ])
        assert abs(temporal - want) < 0.05
        assert feature == 0.0

    def test_feature_score_at_mode(self):
        cfg = small_config(dim=2)
        spec = OracleSpec(kind="homogeneous", rate=2.0, horizon=3.0, dim=2)
        ds = generate(spec, 6, np.random.default_rng(1))
        ds = standardize(ds)
        ck = random_checkpoint(cfg, ds)
        ck.params.params["dec.wp"][...] = 0.0
        # rebuild data so every mark equals the predicted mean (zero)
        seqs = [EventSequence(s.times, np.zeros_like(s.values),
                              np.ones_like(s.mask), s.t_max)
                for s in ds.sequences if s.n_events]
        flat = Dataset(sequences=seqs, feature_mean=ds.feature_mean,
                       feature_std=ds.feature_std,
                       horizon_variance=ds.horizon_variance)
        pv = ck.params.raw()
        paths = []
        for seq in flat.sequences:
            xt = encoder.event_representations(pv, seq, cfg)
            paths.append(decoder.decode_path(pv, np.zeros(cfg.hidden),
                                             list(zip(seq.times, xt)),
                                             seq.t_max, cfg))
        _, feature = scores_from_paths(flat.sequences, paths)
        assert feature == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_agrees_with_training_decomposition(self):
        # the scores and the training NLL share one code path: l1 must equal
        # -(per-sequence temporal + feature sums) to machine precision
        cfg = small_config(dim=2, k_reg=0)
        spec = OracleSpec(kind="homogeneous", rate=2.0, horizon=3.0, dim=2)
        ds = standardize(generate(spec, 4, np.random.default_rng(2)))
        ck = random_checkpoint(cfg, ds, seed=3)
        pv = ck.params.raw()
        from tsdiff.diffusion import DiffusionSchedule
        sched = DiffusionSchedule.from_config(cfg)
        for seq in ds.sequences:
            if seq.n_events == 0:
                continue
            _, breakdown = sequence_loss(pv, seq, sched, cfg,
                                         np.random.default_rng(0))
            xt = encoder.event_representations(pv, seq, cfg)
            s = encoder.encode(pv, seq, cfg, x_tilde=xt)
            path = decoder.decode_path(pv, s, list(zip(seq.times, xt)),
                                       seq.t_max, cfg)
            temporal, feature = scores_from_paths([seq], [path])
            n = seq.n_events
            recomposed = -(temporal * n + feature * n)
            assert abs(recomposed - breakdown.nll) < 1e-12 * max(
                1.0, abs(breakdown.nll))

    def test_eval_scores_end_to_end(self):
        cfg = small_config(dim=2)
        spec = OracleSpec(kind="homogeneous", rate=2.0, horizon=3.0, dim=2)
        raw = generate(spec, 5, np.random.default_rng(4))
        ds = standardize(generate(spec, 5, np.random.default_rng(5)))
        ck = random_checkpoint(cfg, ds, seed=6)
        temporal, feature = eval_scores(ck, raw)
        assert np.isfinite(temporal) and np.isfinite(feature)

    def test_empty_dataset_rejected(self):
        cfg = small_config()
        ds = Dataset(sequences=[])
        ck = Checkpoint(params=ParameterStore(), config=cfg)
        with pytest.raises(DataError):
            eval_scores(ck, ds)


def blobs(rng, centers, n_per, scale=0.05):
    pts = []
    for c in centers:
        pts.append(rng.normal(loc=c, scale=scale, size=(n_per, len(c))))
    return np.vstack(pts)


class TestPrdCurve:
    def test_identical_sets_reach_corner(self):
        rng = np.random.default_rng(0)
        real = blobs(rng, [(0, 0), (5, 0), (0, 5), (5, 5)], 50)
        curve = prd_curve(real, real.copy(), clusters=8)
        assert curve.max(axis=0)[0] >= 0.97
        assert curve.max(axis=0)[1] >= 0.97
        # a single point attains both at once (P == Q)
        both = curve[(curve[:, 0] >= 0.97) & (curve[:, 1] >= 0.97)]
        assert len(both) > 0

    def test_disjoint_supports_collapse(self):
        rng = np.random.default_rng(1)
        real = blobs(rng, [(0, 0)], 100)
        fake = blobs(rng, [(50, 50)], 100)
        curve = prd_curve(real, fake, clusters=6)
        assert curve[:, 0].max() <= 0.03
        assert curve[:, 1].max() <= 0.03

    def test_half_mode_fixture(self):
        rng = np.random.default_rng(2)
        real = blobs(rng, [(0, 0), (5, 0), (0, 5), (5, 5)], 50)
        fake = blobs(rng, [(0, 0), (5, 0)], 100)
        curve = prd_curve(real, fake, clusters=8)
        assert abs(curve[:, 1].max() - 0.5) < 0.1   # recall covers half
        assert curve[:, 0].max() > 0.9              # precision stays high

    def test_points_in_unit_square_and_envelope(self):
        rng = np.random.default_rng(3)
        real = rng.normal(size=(80, 3))
        fake = rng.normal(loc=0.5, size=(60, 3))
        curve = prd_curve(real, fake, clusters=10)
        assert np.all((curve >= 0) & (curve <= 1 + 1e-12))
        # envelope: recall decreases as precision increases
        assert np.all(np.diff(curve[:, 0]) > 0)
        assert np.all(np.diff(curve[:, 1]) < 0)

    def test_symmetry_under_swap(self):
        rng = np.random.default_rng(4)
        real = blobs(rng, [(0, 0), (4, 4)], 60)
        fake = blobs(rng, [(0, 0)], 90)
        c1 = prd_curve(real, fake, clusters=6, seed=5)
        c2 = prd_curve(fake, real, clusters=6, seed=5)
        # swapping real/fake mirrors the axes
        m1 = (round(c1[:, 0].max(), 2), round(c1[:, 1].max(), 2))
        m2 = (round(c2[:, 1].max(), 2), round(c2[:, 0].max(), 2))
        assert m1 == m2

    def test_too_many_clusters_rejected(self):
        rng = np.random.default_rng(5)
        with pytest.raises(DataError, match="cluster"):
            prd_curve(rng.normal(size=(4, 2)), rng.normal(size=(4, 2)),
                      clusters=20)


def dataset_from_tx(t, x, t_max):
    """One-sequence dataset with given times and (N, D) marks."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != len(t):
        x = x.T
    return Dataset(sequences=[EventSequence(
        times=np.asarray(t), values=x, mask=np.ones_like(x), t_max=t_max,
    )])


class TestTfcScore:
    def test_perfect_correlation(self):
        t = np.linspace(0.1, 9.9, 50)
        ds = dataset_from_tx(t, t.copy(), 10.0)
        assert tfc_score(ds) == pytest.approx(1.0, abs=1e-12)

    def test_independent_marks(self):
        rng = np.random.default_rng(0)
        t = np.sort(rng.random(10_000)) * 9.9 + 0.01
        t = np.unique(t)
        x = rng.standard_normal((len(t), 1))
        ds = dataset_from_tx(t, x, 10.0)
        assert tfc_score(ds) < 0.05

    def test_designed_correlation_on_one_of_two_dims(self):
        spec = OracleSpec(kind="homogeneous", rate=3.0, horizon=10.0, dim=2,
                          mark_rho=(0.6, 0.0))
        ds = generate(spec, 400, np.random.default_rng(1))
        assert abs(tfc_score(ds) - 0.3) < 0.05

    def test_affine_invariance(self):
        spec = OracleSpec(kind="homogeneous", rate=3.0, horizon=10.0, dim=2,
                          mark_rho=(0.5, 0.2))
        ds = generate(spec, 100, np.random.default_rng(2))
        base = tfc_score(ds)
        scaled = Dataset(sequences=[
            EventSequence(s.times, s.values * np.array([7.0, -2.0]) + 3.0,
                          s.mask, s.t_max)
            for s in ds.sequences
        ])
        assert tfc_score(scaled) == pytest.approx(base, abs=1e-9)

    def test_degenerate_dimension_warns(self):
        t = np.linspace(0.1, 9.9, 20)
        x = np.stack([t, np.ones_like(t)], axis=1)
        ds = dataset_from_tx(t, x, 10.0)
        with pytest.warns(UserWarning, match="degenerate"):
            got = tfc_score(ds)
        assert got == pytest.approx(0.5, abs=1e-12)

    def test_masked_cells_excluded(self):
        t = np.linspace(0.1, 9.9, 40)
        x = np.stack([t, np.zeros_like(t)], axis=1)
        mask = np.ones_like(x)
        mask[::2, 0] = 0.0  # half the correlated dim is missing
        x = x * mask
        ds = Dataset(sequences=[EventSequence(t, x, mask, 10.0)])
        with pytest.warns(UserWarning):
            got = tfc_score(ds)
        assert got == pytest.approx(0.5, abs=1e-12)


class TestDurations:
    def test_identical_sequences_single_bin(self):
        seq = EventSequence(times=np.array([1.0, 3.0]), values=np.ones((2, 1)),
                            mask=np.ones((2, 1)), t_max=5.0)
        ds = Dataset(sequences=[seq, seq, seq])
        stats = duration_stats(ds, bins=10)
        assert (stats.counts > 0).sum() == 1
        assert stats.mean == 2.0 and stats.variance == 0.0

    def test_single_event_sequences_have_zero_duration(self):
        seqs = [EventSequence(times=np.array([float(t)]),
                              values=np.ones((1, 1)), mask=np.ones((1, 1)),
                              t_max=5.0) for t in (1, 2, 3)]
        stats = duration_stats(Dataset(sequences=seqs), bins=5)
        assert stats.mean == 0.0

    def test_tv_distance_identical_is_zero(self):
        spec = OracleSpec(kind="homogeneous", rate=2.0, horizon=5.0, dim=1)
        ds = generate(spec, 50, np.random.default_rng(3))
        assert duration_tv_distance(ds, ds) == 0.0

    def test_tv_distance_disjoint_is_one(self):
        a = Dataset(sequences=[EventSequence(np.array([0.0, 1.0]),
                                             np.ones((2, 1)), np.ones((2, 1)),
                                             10.0)])
        b = Dataset(sequences=[EventSequence(np.array([0.0, 9.0]),
                                             np.ones((2, 1)), np.ones((2, 1)),
                                             10.0)])
        assert duration_tv_distance(a, b) == pytest.approx(1.0)


class TestReport:
    def test_report_fields_and_csv(self, tmp_path):
        cfg = small_config(dim=2)
        spec = OracleSpec(kind="homogeneous", rate=2.0, horizon=5.0, dim=2)
        raw = generate(spec, 8, np.random.default_rng(6))
        train_ds = standardize(generate(spec, 8, np.random.default_rng(7)))
        ck = random_checkpoint(cfg, train_ds, seed=8)
        synth = generate(spec, 8, np.random.default_rng(9))
        report = evaluate(ck, raw, synth=synth, clusters=4)
        d = report.to_json_dict()
        assert set(d) == {"temporal_score", "feature_score", "prd_curve",
                          "tfc", "duration_histogram", "evaluated_on"}
        assert d["prd_curve"] is not None
        out = tmp_path / "report.json"
        write_report(report, out)
        assert out.exists()
        assert (tmp_path / "report_prd.csv").exists()
        assert (tmp_path / "report_durations.csv").exists()

    def test_featurize_shape(self):
        spec = OracleSpec(kind="homogeneous", rate=2.0, horizon=5.0, dim=3)
        ds = generate(spec, 6, np.random.default_rng(10))
        f = featurize(ds)
        assert f.shape == (6, 2 + 3)
