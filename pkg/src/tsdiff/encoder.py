"""Encoder: masked event sequences -> dense latent vector.

Each event is tokenized per feature dimension (learned dimension embedding
combined with the value embedding), run through a masked self-attention
stack that pools the observed tokens into one event vector, and the event
vectors drive jump updates of a latent ODE state integrated backward from
t_max to 0. Masked cells are re-zeroed on entry and excluded from every
attention computation, so the latent depends on observed cells and masks
only.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore
from .config import Config
from .data import EventSequence
from .errors import DataError
from .ode import default_step, integrate_with_jumps, make_grid


def init_params(ps: ParameterStore, cfg: Config, rng: np.random.Generator) -> None:
    H, E, D = cfg.hidden, cfg.embed, cfg.dim
    if D < 1:
        raise DataError("config.dim must be set before building the encoder")
    ps.add_normal("enc.u", (D, E), rng)
    ps.add_normal("enc.w1e", (4 * E, H), rng)
    ps.add_normal("enc.w2e", (H, H), rng)
    for layer in range(cfg.attn_layers):
        ps.add_normal(f"enc.attn{layer}.wq", (H, H), rng)
        ps.add_normal(f"enc.attn{layer}.wk", (H, H), rng)
        ps.add_normal(f"enc.attn{layer}.wv", (H, H), rng)
    # latent dynamics f_s: MLP on (s, t)
    ps.add_normal("enc.fs.w1", (H + 1, H), rng)
    ps.add_zeros("enc.fs.b1", (H,))
    ps.add_normal("enc.fs.w2", (H, H), rng)
    ps.add_zeros("enc.fs.b2", (H,))
    # jump g_s: LSTM cell, input (x_tilde, t), hidden s
    ps.add_normal("enc.gs.w_ih", (H + 1, 4 * H), rng)
    ps.add_normal("enc.gs.w_hh", (H, 4 * H), rng)
    ps.add_zeros("enc.gs.b", (4 * H,))
    # learnable state at t_max, shared across sequences
    ps.add("enc.s0", rng.normal(0.0, 0.1, size=H))


def embed_and_combine(pv, x, m, cfg: Config):
    """Per-dimension tokens for one event; masked values are re-zeroed first.

    Token j combines the learned dimension embedding u_j with the value
    embedding z_j = x_j * 1 through [u, z, u - z, u * z] and a two-layer map.
    Returns a (D, hidden) token matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if x.shape != m.shape or x.ndim != 1:
        raise DataError(f"value/mask shape mismatch: {x.shape} vs {m.shape}")
    if m.sum() < 1:
        raise DataError("event has no observed dimension")
    xz = x * m  # mask is the single source of truth
    y = pv["enc.u"]
    z = np.outer(xz, np.ones(cfg.embed))
    e1 = ad.concat([y, z, ad.sub(y, z), ad.mul(y, z)], axis=1)
    return ad.matmul(ad.tanh(ad.matmul(e1, pv["enc.w1e"])), pv["enc.w2e"])


def _normalize_tokens(tokens, m: np.ndarray, cfg: Config):
    if cfg.norm_mode == "embed":
        return ad.layer_norm(tokens)
    # statistics per embedding coordinate across observed tokens only
    col = m[:, None]
    nobs = float(m.sum())
    mu = ad.mul(ad.reduce_sum(ad.mul(tokens, col), axis=0, keepdims=True), 1.0 / nobs)
    d = ad.sub(tokens, mu)
    var = ad.mul(ad.reduce_sum(ad.mul(ad.mul(d, d), col), axis=0, keepdims=True), 1.0 / nobs)
    return ad.div(d, ad.sqrt(ad.add(var, 1e-5)))


def masked_attention_stack(pv, tokens, m, cfg: Config):
    """Pool the token matrix into one event vector, skipping masked tokens.

    Intermediate layers run cross-token attention (masked tokens contribute
    zero key weight and are not updated as queries) with residuals and
    normalization; the last layer applies the gated pooling
    weights ~ m_j * exp(q_j . k_j) and returns the weighted value sum.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.sum() < 1:
        raise DataError("event has no observed dimension")
    H = cfg.hidden
    t = tokens
    for layer in range(cfg.attn_layers - 1):
        q = ad.matmul(t, pv[f"enc.attn{layer}.wq"])
        k = ad.matmul(t, pv[f"enc.attn{layer}.wk"])
        v = ad.matmul(t, pv[f"enc.attn{layer}.wv"])
        if cfg.matched_logits_all_layers:
            logits = ad.reduce_sum(ad.mul(q, k), axis=-1)
            w = ad.masked_softmax(logits, m)
            pooled = ad.matmul(w, v)
            update = ad.mul(np.ones((m.shape[0], 1)), pooled)
        else:
            logits = ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(H))
            w = ad.masked_softmax(logits, np.broadcast_to(m, (m.shape[0], m.shape[0])))
            update = ad.matmul(w, v)
        t = ad.add(t, ad.mul(update, m[:, None]))
        t = _normalize_tokens(t, m, cfg)
    last = cfg.attn_layers - 1
    q = ad.matmul(t, pv[f"enc.attn{last}.wq"])
    k = ad.matmul(t, pv[f"enc.attn{last}.wk"])
    v = ad.matmul(t, pv[f"enc.attn{last}.wv"])
    logits = ad.reduce_sum(ad.mul(q, k), axis=-1)
    w = ad.masked_softmax(logits, m)
    return ad.matmul(w, v)


def event_representation(pv, x, m, cfg: Config):
    return masked_attention_stack(pv, embed_and_combine(pv, x, m, cfg), m, cfg)


def event_representations(pv, seq: EventSequence, cfg: Config) -> list:
    return [
        event_representation(pv, seq.values[i], seq.mask[i], cfg)
        for i in range(seq.n_events)
    ]


def latent_dynamics(pv, s, t: float, dropout_plan=None):
    """ds/dt between events: two-layer tanh MLP on (s, t)."""
    inp = ad.concat([s, np.array([t])])
    h = ad.tanh(ad.add(ad.matmul(inp, pv["enc.fs.w1"]), pv["enc.fs.b1"]))
    if dropout_plan is not None:
        h = ad.apply_dropout(h, dropout_plan.get("enc.fs"))
    return ad.add(ad.matmul(h, pv["enc.fs.w2"]), pv["enc.fs.b2"])


def encode(pv, seq: EventSequence, cfg: Config, x_tilde=None,
           solver_step: float | None = None, dropout_plan=None):
    """Latent representation: backward jump-ODE state at t=0.

    The state starts from the learned vector at t_max, flows backward under
    the latent dynamics, and at each event time (visited in descending
    order) is updated by an LSTM cell fed the event representation; the
    LSTM cell memory is carried across the sequence's jumps.
    """
    if x_tilde is None:
        x_tilde = event_representations(pv, seq, cfg)
    h = solver_step if solver_step is not None else (
        cfg.solver_step if cfg.solver_step > 0 else default_step(seq.t_max, seq.times)
    )
    grid = make_grid(0.0, seq.t_max, seq.times, h, direction=-1)

    H = cfg.hidden
    cell0 = np.zeros(H)

    def rhs(state, t, _ctx):
        s, c = state
        return latent_dynamics(pv, s, t, dropout_plan), np.zeros(H)

    def make_jump(xt, ti):
        def jump(state, _t):
            s, c = state
            inp = ad.concat([xt, np.array([ti])])
            return ad.lstm_cell(inp, s, c, pv["enc.gs.w_ih"], pv["enc.gs.w_hh"],
                                pv["enc.gs.b"])

        return jump

    jumps = {float(t): make_jump(xt, float(t))
             for t, xt in zip(seq.times, x_tilde)}
    traj = integrate_with_jumps((pv["enc.s0"], cell0), rhs, jumps, grid,
                                record=False)
    s_final, _ = traj.final
    return s_final
