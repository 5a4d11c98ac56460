"""Evaluation: per-observation likelihood scores, PRD curves, TFC, durations."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2

from . import autodiff as ad
from . import decoder, encoder
from .checkpoint import Checkpoint
from .config import Config
from .data import Dataset, apply_standardization
from .errors import DataError
from .model import Model
from .training import sequence_loglik

PRD_LAMBDAS = np.logspace(-2.0, 2.0, 51)
KMEANS_RESTARTS = 5


# ---------------------------------------------------------------------------
# likelihood scores


def scores_from_paths(sequences, paths) -> tuple[float, float]:
    """Per-observation temporal and feature scores, averaged over sequences.

    Uses the identical decomposition the training loss is built from, so the
    two agree to machine precision. Sequences without events are skipped
    (their per-observation score is undefined).
    """
    temporal_scores, feature_scores = [], []
    for seq, path in zip(sequences, paths):
        if seq.n_events == 0:
            continue
        temporal, feature = sequence_loglik(seq, path)
        n = seq.n_events
        temporal_scores.append(float(ad.value_of(temporal)) / n)
        feature_scores.append(float(ad.value_of(feature)) / n)
    if not temporal_scores:
        raise DataError("no non-empty sequences to score")
    return float(np.mean(temporal_scores)), float(np.mean(feature_scores))


def eval_scores(ckpt: Checkpoint, ds: Dataset) -> tuple[float, float]:
    """Teacher-forced per-observation scores of a raw (unstandardized) dataset."""
    if len(ds.sequences) == 0:
        raise DataError("cannot score an empty dataset")
    model = Model.from_checkpoint(ckpt)
    cfg = model.cfg
    if ckpt.feature_mean is not None and not ds.standardized:
        ds = apply_standardization(ds, ckpt.feature_mean, ckpt.feature_std)
    pv = model.raw()
    paths = []
    for seq in ds.sequences:
        x_tilde = encoder.event_representations(pv, seq, cfg)
        s = encoder.encode(pv, seq, cfg, x_tilde=x_tilde)
        paths.append(decoder.decode_path(pv, s, list(zip(seq.times, x_tilde)),
                                         seq.t_max, cfg))
    return scores_from_paths(ds.sequences, paths)


# ---------------------------------------------------------------------------
# precision / recall for distributions


def featurize(ds: Dataset) -> np.ndarray:
    """Fixed-length summary per sequence: count, mean gap, observed mark means."""
    rows = []
    for seq in ds.sequences:
        gaps = np.diff(seq.times) if seq.n_events >= 2 else np.zeros(1)
        mark_means = np.zeros(seq.dim)
        for j in range(seq.dim):
            observed = seq.values[seq.mask[:, j] > 0, j]
            if observed.size:
                mark_means[j] = observed.mean()
        rows.append(np.concatenate([[seq.n_events, gaps.mean()], mark_means]))
    return np.asarray(rows, dtype=np.float64)


def _cluster_histograms(real: np.ndarray, fake: np.ndarray, clusters: int,
                        seed: int) -> tuple[np.ndarray, np.ndarray]:
    union = np.vstack([real, fake])
    if clusters > union.shape[0]:
        raise DataError(
            f"K={clusters} clusters exceed the {union.shape[0]} pooled samples"
        )
    # z-scale so no coordinate dominates the metric
    mu = union.mean(axis=0)
    sd = union.std(axis=0)
    sd[sd < 1e-12] = 1.0
    scaled = (union - mu) / sd
    best_labels, best_inertia = None, np.inf
    for restart in range(KMEANS_RESTARTS):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # empty clusters are fine here
            centers, labels = kmeans2(scaled, clusters, minit="++",
                                      seed=seed + restart)
        inertia = float(((scaled - centers[labels]) ** 2).sum())
        if inertia < best_inertia:
            best_inertia, best_labels = inertia, labels
    p = np.bincount(best_labels[: len(real)], minlength=clusters).astype(float)
    q = np.bincount(best_labels[len(real):], minlength=clusters).astype(float)
    return p / p.sum(), q / q.sum()


def _pareto_envelope(points: np.ndarray) -> np.ndarray:
    """Keep the non-dominated (precision, recall) points, sorted by precision."""
    order = np.argsort(-points[:, 0], kind="stable")
    kept = []
    best_recall = -np.inf
    for i in order:
        if points[i, 1] > best_recall + 1e-15:
            kept.append(points[i])
            best_recall = points[i, 1]
    return np.asarray(kept[::-1])


def prd_curve(real: np.ndarray, fake: np.ndarray, clusters: int = 20,
              seed: int = 0) -> np.ndarray:
    """Precision-recall curve between two sample sets of summary vectors.

    Clusters the union with k-means; for cluster histograms P (real) and
    Q (fake) sweeps ratio lambda over a log grid with
    precision(lambda) = sum_i min(lambda P_i, Q_i) and
    recall(lambda) = sum_i min(P_i, Q_i / lambda), and returns the upper
    envelope as (precision, recall) rows.
    """
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    fake = np.atleast_2d(np.asarray(fake, dtype=np.float64))
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise DataError("both sample sets must be non-empty")
    p, q = _cluster_histograms(real, fake, clusters, seed)
    pts = np.asarray([
        (np.minimum(lam * p, q).sum(), np.minimum(p, q / lam).sum())
        for lam in PRD_LAMBDAS
    ])
    return _pareto_envelope(pts)


# ---------------------------------------------------------------------------
# temporal-feature correlation


def tfc_score(ds: Dataset) -> float:
    """Mean absolute Pearson correlation between time and each feature.

    Pools (t, x_j) pairs over all sequences, using observed cells only.
    Degenerate dimensions contribute 0 with a warning.
    """
    pooled_t = []
    pooled_x = []
    pooled_m = []
    for seq in ds.sequences:
        if seq.n_events == 0:
            continue
        pooled_t.append(np.repeat(seq.times[:, None], seq.dim, axis=1))
        pooled_x.append(seq.values)
        pooled_m.append(seq.mask)
    if not pooled_t or sum(x.shape[0] for x in pooled_x) < 2:
        raise DataError("need at least 2 pooled events for a correlation")
    t = np.vstack(pooled_t)
    x = np.vstack(pooled_x)
    m = np.vstack(pooled_m)
    dim = x.shape[1]
    total = 0.0
    for j in range(dim):
        sel = m[:, j] > 0
        tj, xj = t[sel, j], x[sel, j]
        if tj.size < 2 or tj.std() < 1e-12 or xj.std() < 1e-12:
            warnings.warn(f"dimension {j} is degenerate; TFC contribution is 0")
            continue
        total += abs(float(np.corrcoef(tj, xj)[0, 1]))
    return total / dim


# ---------------------------------------------------------------------------
# durations


@dataclass
class DurationStats:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    variance: float

    @property
    def fractions(self) -> np.ndarray:
        total = self.counts.sum()
        return self.counts / total if total else self.counts


def duration_stats(ds: Dataset, bins: int = 20, bin_range=None) -> DurationStats:
    """Histogram of per-sequence durations t_N - t_0 (sequences with events)."""
    durations = np.asarray([s.duration for s in ds.sequences if s.n_events >= 1])
    if durations.size == 0:
        raise DataError("no sequences with events")
    counts, edges = np.histogram(durations, bins=bins, range=bin_range)
    return DurationStats(edges=edges, counts=counts,
                         mean=float(durations.mean()),
                         variance=float(durations.var()))


def duration_tv_distance(a: Dataset, b: Dataset, bins: int = 20) -> float:
    """Total-variation distance between two duration histograms on shared bins."""
    da = [s.duration for s in a.sequences if s.n_events >= 1]
    db = [s.duration for s in b.sequences if s.n_events >= 1]
    lo = min(min(da), min(db))
    hi = max(max(da), max(db))
    if hi <= lo:
        hi = lo + 1e-9
    ha = duration_stats(a, bins=bins, bin_range=(lo, hi)).fractions
    hb = duration_stats(b, bins=bins, bin_range=(lo, hi)).fractions
    return 0.5 * float(np.abs(ha - hb).sum())


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    """Everything `eval` emits; `prd` is None when no synthetic set was given."""

    temporal_score: float
    feature_score: float
    prd: np.ndarray | None
    tfc: float
    durations: DurationStats
    evaluated_on: str  # which set tfc/durations describe: "data" or "synth"

    def to_json_dict(self) -> dict:
        return {
            "temporal_score": self.temporal_score,
            "feature_score": self.feature_score,
            "prd_curve": None if self.prd is None else
                [[float(p), float(r)] for p, r in self.prd],
            "tfc": self.tfc,
            "duration_histogram": {
                "edges": [float(e) for e in self.durations.edges],
                "counts": [int(c) for c in self.durations.counts],
                "mean": self.durations.mean,
                "variance": self.durations.variance,
            },
            "evaluated_on": self.evaluated_on,
        }


def evaluate(ckpt: Checkpoint, ds: Dataset, synth: Dataset | None = None,
             clusters: int | None = None, bins: int = 20,
             seed: int = 0) -> EvalReport:
    """Score a held-out dataset; compare against a synthetic set when given.

    `clusters=None` picks min(20, pooled size / 2) so small runs still work.
    """
    temporal, feature = eval_scores(ckpt, ds)
    if synth is not None:
        if clusters is None:
            pooled = len(ds.sequences) + len(synth.sequences)
            clusters = max(2, min(20, pooled // 2))
        prd = prd_curve(featurize(ds), featurize(synth), clusters=clusters, seed=seed)
        tfc = tfc_score(synth)
        durations = duration_stats(synth, bins=bins)
        target = "synth"
    else:
        prd = None
        tfc = tfc_score(ds)
        durations = duration_stats(ds, bins=bins)
        target = "data"
    return EvalReport(temporal_score=temporal, feature_score=feature, prd=prd,
                      tfc=tfc, durations=durations, evaluated_on=target)


def write_report(report: EvalReport, path) -> None:
    """JSON report plus CSV side files for the curve and histogram."""
    from pathlib import Path

    path = Path(path)
    path.write_text(json.dumps(report.to_json_dict(), indent=2) + "\n",
                    encoding="utf-8")
    if report.prd is not None:
        prd_path = path.with_name(path.stem + "_prd.csv")
        lines = ["precision,recall"]
        lines += [f"{p},{r}" for p, r in report.prd]
        prd_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    hist_path = path.with_name(path.stem + "_durations.csv")
    lines = ["bin_lo,bin_hi,count"]
    edges, counts = report.durations.edges, report.durations.counts
    lines += [f"{edges[i]},{edges[i + 1]},{counts[i]}" for i in range(len(counts))]
    hist_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
