"""Hybrid loss assembly and the training loop with checkpointing.

Per sequence the loss combines (1) the point-process negative log-likelihood
from teacher-forced decoding, (2) the diffusion noise-matching loss on the
clean latent, (3) the squared horizon-margin error, and (4) Bernoulli
cross-entropy of the missingness head, weighted 0.4/0.4/0.1/0.1 by default.
The decoder consumes a lightly noised latent (a few forward diffusion steps)
for robustness to the latents the reverse chain will produce at synthesis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import decoder, diffusion, encoder
from .autodiff import Tape, backward, dropout_mask
from .checkpoint import Checkpoint, TrainState, save_checkpoint
from .config import Config
from .data import Dataset, EventSequence
from .errors import DataError, NumericalError
from .model import Model


@dataclass
class LossBreakdown:
    """Per-batch scalars: the four components and their weighted total."""

    nll: float
    diffusion: float
    horizon: float
    missing: float
    total: float

    @classmethod
    def combine(cls, parts: list["LossBreakdown"]) -> "LossBreakdown":
        n = max(len(parts), 1)
        return cls(
            nll=sum(p.nll for p in parts) / n,
            diffusion=sum(p.diffusion for p in parts) / n,
            horizon=sum(p.horizon for p in parts) / n,
            missing=sum(p.missing for p in parts) / n,
            total=sum(p.total for p in parts) / n,
        )


def make_dropout_plan(cfg: Config, rng: np.random.Generator) -> dict | None:
    """One fixed mask per MLP hidden layer, reused across solver stages."""
    if cfg.dropout <= 0:
        return None
    sites = {
        "enc.fs": cfg.hidden,
        "eps.h1": cfg.noise_hidden,
        "eps.h2": cfg.noise_hidden,
        "dec.fo": cfg.hidden,
        "dec.g": cfg.hidden,
    }
    return {site: dropout_mask((width,), cfg.dropout, rng)
            for site, width in sites.items()}


def sequence_loglik(seq: EventSequence, path):
    """(temporal, feature) log-likelihood terms of one sequence.

    temporal = sum_i log lambda(t_i) - Lambda(T_max); feature = sum_i log
    p(x_i | t_i, m_i). Works with any path exposing log_intensity_at,
    obs_logprob_at and total_intensity, which is what the evaluation module
    reuses verbatim.
    """
    temporal = ad.mul(path.total_intensity, -1.0)
    feature = np.zeros(())
    for i in range(seq.n_events):
        t = float(seq.times[i])
        temporal = ad.add(temporal, path.log_intensity_at(t))
        feature = ad.add(feature, path.obs_logprob_at(seq.values[i], seq.mask[i], t))
    return temporal, feature


def sequence_nll(seq: EventSequence, path):
    """Negative sequence log-likelihood (loss term 1)."""
    temporal, feature = sequence_loglik(seq, path)
    return ad.mul(ad.add(temporal, feature), -1.0)


def missingness_loss(seq: EventSequence, path):
    """Bernoulli cross-entropy of the missingness head over all event cells.

    Written as softplus(logit) - m * logit per cell, the numerically stable
    negative Bernoulli log-likelihood (the quantity to minimize).
    """
    total = np.zeros(())
    for i in range(seq.n_events):
        t = float(seq.times[i])
        logits = path.missing_logits_at(t)
        ce = ad.sub(ad.softplus(logits), ad.mul(logits, seq.mask[i]))
        total = ad.add(total, ad.reduce_sum(ce))
    return total


def horizon_loss(pv, seq: EventSequence, latent, cfg: Config):
    """(t_N (1 + delta) - mu_t)^2; zero for empty sequences."""
    if seq.n_events == 0:
        return np.zeros(())
    target = float(seq.times[-1]) * (1.0 + cfg.delta)
    diff = ad.sub(target, decoder.horizon_mean(pv, latent))
    return ad.mul(diff, diff)


def hybrid_loss(pv, seq: EventSequence, s, path, sched, rng: np.random.Generator,
                cfg: Config, dropout_plan=None, horizon_latent=None):
    """All four loss terms for one sequence; returns (total Var, LossBreakdown)."""
    l1 = sequence_nll(seq, path)
    l2 = diffusion.diffusion_loss(pv, s, sched, rng, cfg, dropout_plan)
    l3 = horizon_loss(pv, seq, s if horizon_latent is None else horizon_latent, cfg)
    l4 = missingness_loss(seq, path)
    total = ad.add(
        ad.add(ad.mul(l1, cfg.w1), ad.mul(l2, cfg.w2)),
        ad.add(ad.mul(l3, cfg.w3), ad.mul(l4, cfg.w4)),
    )
    breakdown = LossBreakdown(
        nll=float(ad.value_of(l1)),
        diffusion=float(ad.value_of(l2)),
        horizon=float(ad.value_of(l3)),
        missing=float(ad.value_of(l4)),
        total=float(ad.value_of(total)),
    )
    return total, breakdown


def sequence_loss(pv, seq: EventSequence, sched, cfg: Config,
                  rng: np.random.Generator, dropout_plan=None):
    """Full forward pass for one sequence: encode, noise, decode, all losses."""
    x_tilde = encoder.event_representations(pv, seq, cfg)
    s = encoder.encode(pv, seq, cfg, x_tilde=x_tilde, dropout_plan=dropout_plan)
    if cfg.k_reg > 0:
        eps = rng.standard_normal(cfg.hidden)
        z = diffusion.q_sample(s, cfg.k_reg, eps, sched)
    else:
        z = s
    path = decoder.decode_path(pv, z, list(zip(seq.times, x_tilde)), seq.t_max,
                               cfg, dropout_plan=dropout_plan)
    return hybrid_loss(pv, seq, s, path, sched, rng, cfg, dropout_plan,
                       horizon_latent=z)


def train(ds: Dataset, cfg: Config, ckpt_path=None, metrics_path=None,
          resume: Checkpoint | None = None, log=None) -> Checkpoint:
    """Minibatch Adam over the hybrid loss; logs per-epoch loss components.

    The dataset must be standardized. A fixed seed makes the whole run
    deterministic, and resuming from a checkpoint reproduces the steps the
    uninterrupted run would have taken.
    """
    if not ds.standardized:
        raise DataError("train expects a standardized dataset")
    if len(ds.sequences) == 0:
        raise DataError("cannot train on an empty dataset")
    cfg.dim = ds.dim

    if resume is not None:
        model = Model.from_checkpoint(resume)
        rng = np.random.default_rng(cfg.seed)
        if resume.train_state.rng_state is not None:
            rng.bit_generator.state = resume.train_state.rng_state
        start_epoch = resume.train_state.epoch
    else:
        model = Model(cfg)
        rng = np.random.default_rng(cfg.seed)
        start_epoch = 0

    ps = model.params
    sched = model.sched
    rows = []

    def write_ckpt(epoch: int) -> Checkpoint:
        ck = Checkpoint(
            params=ps,
            config=cfg,
            feature_mean=ds.feature_mean,
            feature_std=ds.feature_std,
            horizon_variance=ds.horizon_variance,
            train_state=TrainState(epoch=epoch, rng_state=rng.bit_generator.state),
        )
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, ck)
        return ck

    n = len(ds.sequences)
    for epoch in range(start_epoch, cfg.epochs):
        order = rng.permutation(n)
        epoch_parts = []
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo: lo + cfg.batch_size]
            ps.zero_grads()
            for seq_idx in batch:
                seq = ds.sequences[int(seq_idx)]
                tape = Tape()
                pv = ps.bind(tape)
                plan = make_dropout_plan(cfg, rng)
                total, breakdown = sequence_loss(pv, seq, sched, cfg, rng, plan)
                if not np.isfinite(breakdown.total):
                    raise NumericalError(
                        f"non-finite loss at sequence {int(seq_idx)} (epoch {epoch})"
                    )
                grads = backward(total)
                ps.accumulate(grads, scale=1.0 / len(batch))
                epoch_parts.append(breakdown)
            ps.clip_global_norm(cfg.clip_norm)
            ps.adam_step(lr=cfg.lr)
        mean = LossBreakdown.combine(epoch_parts)
        rows.append((epoch, mean))
        if log is not None:
            log(f"epoch {epoch}: total={mean.total:.5f} nll={mean.nll:.5f} "
                f"diff={mean.diffusion:.5f} horizon={mean.horizon:.5f} "
                f"missing={mean.missing:.5f}")
        if metrics_path is not None:
            _write_metrics(metrics_path, rows)
        if cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0:
            write_ckpt(epoch + 1)
    return write_ckpt(cfg.epochs)


def _write_metrics(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "L1", "L2", "L3", "L4", "total"])
        for epoch, m in rows:
            writer.writerow([epoch, m.nll, m.diffusion, m.horizon, m.missing, m.total])
