"""Factorized channel/temporal attention over stacked per-channel sequences.

Input is a stack H of shape (N, m, d): N channels (one per encoder block),
m timesteps, d features.  Instead of attending over all N*m positions, two
anchor profiles are mean-pooled (one per timestep across channels, one per
channel across valid timesteps) and scored separately per head:

    channel_attn (length N) from the per-channel profile,
    time_attn    (length m) from the per-timestep profile, masked.

Their outer product is a rank-1 joint attention matrix over (m, N) whose
entries sum to one; the head output is the attention-weighted sum of the
value-mapped stack.  Scoring work grows with N + m rather than N * m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ctaser.layers import (
    BiGruStack,
    ClassifierHead,
    MhsaParams,
    bigru_forward,
    dropout,
    gru_scan_multi,
    mhsa_pool,
    uniform_init,
)
from ctaser.tensor import ShapeError, Tensor, broadcast_to, concat, mean_axis, softmax


@dataclass
class CtaHeadParams:
    W_Q_t: Tensor  # (1, d_head)      channel-attention query
    W_K_t: Tensor  # (d_head, d_in)   channel-attention key map
    W_Q_c: Tensor  # (1, d_head)      temporal-attention query
    W_K_c: Tensor  # (d_head, d_in)   temporal-attention key map
    W_V: Tensor    # (d_head, d_in)   value map


@dataclass
class CtaParams:
    heads: list
    d_head: int

    @classmethod
    def create(cls, rng, d_in: int, n_heads: int, d_head: int, dtype=np.float32) -> "CtaParams":
        heads = [
            CtaHeadParams(
                W_Q_t=uniform_init(rng, (1, d_head), d_head, dtype),
                W_K_t=uniform_init(rng, (d_head, d_in), d_in, dtype),
                W_Q_c=uniform_init(rng, (1, d_head), d_head, dtype),
                W_K_c=uniform_init(rng, (d_head, d_in), d_in, dtype),
                W_V=uniform_init(rng, (d_head, d_in), d_in, dtype),
            )
            for _ in range(n_heads)
        ]
        return cls(heads=heads, d_head=d_head)

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def output_dim(self) -> int:
        return self.n_heads * self.d_head

    def parameters(self) -> dict:
        out = {}
        for j, h in enumerate(self.heads):
            for name in ("W_Q_t", "W_K_t", "W_Q_c", "W_K_c", "W_V"):
                out[f"head{j}.{name}"] = getattr(h, name)
        return out


@dataclass
class CtaAttentionOutput:
    """Per-head attention state plus the concatenated pooled vector."""

    channel_attn: list  # per head: Tensor (B, N), sums to 1 over channels
    time_attn: list     # per head: Tensor (B, m), sums to 1 over valid steps
    matrices: list      # per head: Tensor (B, m, N), rank-1, sums to 1
    head_outputs: list  # per head: Tensor (B, d_head)
    pooled: Tensor      # (B, n_heads * d_head)


def anchors(h: Tensor, mask: np.ndarray | None = None):
    """Mean-pooled anchor profiles of a (B, N, m, d) stack.

    Returns ``(time_profile, channel_profile)``: the per-timestep mean over
    channels (B, m, d) and the per-channel mean over valid timesteps
    (B, N, d).  Channels are always all valid; only time is masked.
    """
    squeeze = h.ndim == 3
    if squeeze:
        h = h.reshape(1, *h.shape)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).reshape(1, -1)
    if h.ndim != 4:
        raise ShapeError(f"anchors expects (B, N, m, d), got {h.shape}")
    B, N, m, d = h.shape
    time_profile = mean_axis(h, 1)
    tmask = None if mask is None else np.broadcast_to(mask[:, None, :, None], (B, N, m, d))
    channel_profile = mean_axis(h, 2, mask=tmask)
    if squeeze:
        return time_profile.reshape(m, d), channel_profile.reshape(N, d)
    return time_profile, channel_profile


def _head_scores(flat: Tensor, w_q: Tensor, w_k: Tensor, d_head: int) -> Tensor:
    keys = flat @ w_k.transpose()
    return (keys @ w_q.transpose()) * (1.0 / np.sqrt(d_head))


def cta_attend(h: Tensor, mask: np.ndarray | None, params: CtaParams,
               uniform: bool = False) -> CtaAttentionOutput:
    """Factorized attention pooling of a (B, N, m, d) stack.

    With ``uniform=True`` the attention vectors are frozen to uniform
    weights over channels and valid timesteps (the mean-pool ablation);
    only the value map is applied.
    """
    squeeze = h.ndim == 3
    if squeeze:
        h = h.reshape(1, *h.shape)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).reshape(1, -1)
    if h.ndim != 4:
        raise ShapeError(f"cta_attend expects (B, N, m, d), got {h.shape}")
    B, N, m, d = h.shape
    dtype = h.data.dtype
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (B, m):
            raise ShapeError(f"cta_attend: mask shape {mask.shape}, expected {(B, m)}")

    if not uniform:
        time_profile, channel_profile = anchors(h, mask)
        flat_time = time_profile.reshape(B * m, d)
        flat_chan = channel_profile.reshape(B * N, d)

    flat_h = h.reshape(B * N * m, d)
    d_head = params.d_head
    channel_attn, time_attn, matrices, head_outputs = [], [], [], []
    for head in params.heads:
        if uniform:
            a_t = Tensor(np.full((B, N), 1.0 / N), dtype=dtype)
            if mask is None:
                a_c = Tensor(np.full((B, m), 1.0 / m), dtype=dtype)
            else:
                a_c = Tensor(mask.astype(dtype) / mask.sum(axis=1, keepdims=True), dtype=dtype)
        else:
            a_t = softmax(_head_scores(flat_chan, head.W_Q_t, head.W_K_t, d_head).reshape(B, N), axis=1)
            a_c = softmax(_head_scores(flat_time, head.W_Q_c, head.W_K_c, d_head).reshape(B, m),
                          axis=1, mask=mask)
        joint = broadcast_to(a_c.reshape(B, m, 1), (B, m, N)) * broadcast_to(a_t.reshape(B, 1, N), (B, m, N))
        values = (flat_h @ head.W_V.transpose()).reshape(B, N, m, d_head)
        weights = broadcast_to(joint.transpose(0, 2, 1).reshape(B, N, m, 1), (B, N, m, d_head))
        v_head = (values * weights).sum(axis=(1, 2))
        channel_attn.append(a_t)
        time_attn.append(a_c)
        matrices.append(joint)
        head_outputs.append(v_head)
    pooled = concat(head_outputs, axis=1)
    if squeeze:
        channel_attn = [a.reshape(N) for a in channel_attn]
        time_attn = [a.reshape(m) for a in time_attn]
        matrices = [a.reshape(m, N) for a in matrices]
        head_outputs = [v.reshape(d_head) for v in head_outputs]
        pooled = pooled.reshape(pooled.shape[1])
    return CtaAttentionOutput(channel_attn, time_attn, matrices, head_outputs, pooled)


def flat_global_attention(h: Tensor, mask: np.ndarray | None, mhsa: MhsaParams) -> Tensor:
    """Reference pooling: reshape (B, N, m, d) to (B, N*m, d) and run plain
    multi-head attention over every position."""
    squeeze = h.ndim == 3
    if squeeze:
        h = h.reshape(1, *h.shape)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).reshape(1, -1)
    B, N, m, d = h.shape
    flat = h.reshape(B, N * m, d)
    tiled = None if mask is None else np.tile(np.asarray(mask, dtype=bool), (1, N))
    v = mhsa_pool(flat, tiled, mhsa)
    return v.reshape(v.shape[1]) if squeeze else v


@dataclass
class ModelOutput:
    probs: Tensor
    logits: Tensor
    attention: CtaAttentionOutput | None = None


class CtaRnnModel:
    """N per-channel bidirectional GRUs followed by factorized attention.

    The channel RNNs do not share parameters unless ``share_channel_rnn``
    is set (ablation).
    """

    kind = "cta"

    def __init__(self, stacks, cta, head, n_channels, share_channel_rnn, uniform_attention):
        self.stacks = stacks
        self.cta = cta
        self.head = head
        self.n_channels = n_channels
        self.share_channel_rnn = share_channel_rnn
        self.uniform_attention = uniform_attention

    @classmethod
    def create(cls, rng, n_channels: int, d_in: int, n_classes: int, hidden: int = 256,
               n_layers: int = 2, rnn_dropout: float = 0.3, n_heads: int = 8, d_head: int = 64,
               share_channel_rnn: bool = False, uniform_attention: bool = False,
               dtype=np.float32) -> "CtaRnnModel":
        n_stacks = 1 if share_channel_rnn else n_channels
        stacks = [BiGruStack.create(rng, d_in, hidden, n_layers, rnn_dropout, dtype) for _ in range(n_stacks)]
        cta = CtaParams.create(rng, 2 * hidden, n_heads, d_head, dtype)
        head = ClassifierHead.create(rng, cta.output_dim, n_classes, dtype)
        return cls(stacks, cta, head, n_channels, share_channel_rnn, uniform_attention)

    def parameters(self) -> dict:
        out = {}
        for i, stack in enumerate(self.stacks):
            prefix = "shared" if self.share_channel_rnn else f"channel{i}"
            out.update({f"{prefix}.{k}": v for k, v in stack.parameters().items()})
        out.update({f"cta.{k}": v for k, v in self.cta.parameters().items()})
        out.update({f"classifier.{k}": v for k, v in self.head.parameters().items()})
        return out

    def encode(self, e: Tensor, mask: np.ndarray | None, training: bool, rng=None) -> Tensor:
        if e.ndim != 4:
            raise ShapeError(f"expected (B, N, m, d) embedding stack, got {e.shape}")
        B, N, m, d = e.shape
        if N != self.n_channels:
            raise ShapeError(f"stack has {N} channels but model was built for {self.n_channels}")
        if training and self.stacks[0].dropout > 0.0 and rng is None:
            raise ValueError("training with dropout requires an rng")
        if self.share_channel_rnn:
            # one parameter set: fold channels into the batch axis
            flat = e.reshape(B * N, m, d)
            fmask = None if mask is None else np.repeat(mask, N, axis=0)
            h = bigru_forward(flat, fmask, self.stacks[0], training=training, rng=rng)
            return h.reshape(B, N, m, h.shape[2])
        cur = e
        n_layers = len(self.stacks[0].layers)
        for layer in range(n_layers):
            fwd = gru_scan_multi(cur, [s.layers[layer][0] for s in self.stacks], mask=mask)
            rev = gru_scan_multi(cur, [s.layers[layer][1] for s in self.stacks], mask=mask,
                                 reverse=True)
            cur = concat([fwd, rev], axis=3)
            if training and layer + 1 < n_layers:
                cur = dropout(cur, self.stacks[0].dropout, rng, training)
        return cur

    def forward(self, batch: dict, training: bool = False, rng=None) -> ModelOutput:
        e, mask = batch["embeddings"]
        h = self.encode(e, mask, training, rng)
        attn = cta_attend(h, mask, self.cta, uniform=self.uniform_attention)
        logits = self.head.logits(attn.pooled)
        return ModelOutput(probs=softmax(logits, axis=-1), logits=logits, attention=attn)


class CtaDirectModel:
    """Factorized attention applied straight to the embedding stack (no RNNs)."""

    kind = "cta_nornn"

    def __init__(self, cta, head, n_channels, uniform_attention):
        self.cta = cta
        self.head = head
        self.n_channels = n_channels
        self.uniform_attention = uniform_attention

    @classmethod
    def create(cls, rng, n_channels: int, d_in: int, n_classes: int, n_heads: int = 8,
               d_head: int = 64, uniform_attention: bool = False, dtype=np.float32) -> "CtaDirectModel":
        cta = CtaParams.create(rng, d_in, n_heads, d_head, dtype)
        head = ClassifierHead.create(rng, cta.output_dim, n_classes, dtype)
        return cls(cta, head, n_channels, uniform_attention)

    def parameters(self) -> dict:
        out = {f"cta.{k}": v for k, v in self.cta.parameters().items()}
        out.update({f"classifier.{k}": v for k, v in self.head.parameters().items()})
        return out

    def forward(self, batch: dict, training: bool = False, rng=None) -> ModelOutput:
        e, mask = batch["embeddings"]
        if e.ndim != 4:
            raise ShapeError(f"expected (B, N, m, d) embedding stack, got {e.shape}")
        if e.shape[1] != self.n_channels:
            raise ShapeError(f"stack has {e.shape[1]} channels but model was built for {self.n_channels}")
        attn = cta_attend(e, mask, self.cta, uniform=self.uniform_attention)
        logits = self.head.logits(attn.pooled)
        return ModelOutput(probs=softmax(logits, axis=-1), logits=logits, attention=attn)
