"""Baseline models and multi-stream compositions.

- ``rnn``: one stream through BiGRU + attention pooling + classifier.
- ``wf``: convex (softmax-weighted) average of embedding blocks, then rnn.
- ``ef``: blocks concatenated along the feature axis, then rnn.
- ``lf``: one BiGRU+attention encoder per stream, pooled vectors
  concatenated into the classifier; streams may be time-asynchronous and
  each carries its own mask.

``build_model`` maps a :class:`~ctaser.config.ModelConfig` onto these or
the factorized-attention models.
"""

from __future__ import annotations

import numpy as np

from ctaser.config import ConfigError, ModelConfig
from ctaser.cta import CtaDirectModel, CtaRnnModel, ModelOutput
from ctaser.layers import (
    BiGruStack,
    ClassifierHead,
    MhsaParams,
    bigru_forward,
    mhsa_pool,
    zeros_param,
)
from ctaser.tensor import ShapeError, Tensor, broadcast_to, concat, softmax


def wf_combine(e: Tensor, logits: Tensor) -> Tensor:
    """Softmax-weighted average of the blocks of a (B, N, m, d) stack."""
    if e.ndim != 4:
        raise ShapeError(f"wf_combine expects (B, N, m, d), got {e.shape}")
    B, N, m, d = e.shape
    if logits.shape != (N,):
        raise ShapeError(f"wf_combine: {N} blocks but weight logits of shape {logits.shape}")
    weights = softmax(logits, axis=0)
    expanded = broadcast_to(weights.reshape(1, N, 1, 1), (B, N, m, d))
    return (e * expanded).sum(axis=1)


def ef_combine(e: Tensor) -> Tensor:
    """Concatenate the blocks of a (B, N, m, d) stack along features -> (B, m, N*d)."""
    if e.ndim != 4:
        raise ShapeError(f"ef_combine expects (B, N, m, d), got {e.shape}")
    B, N, m, d = e.shape
    return e.transpose(0, 2, 1, 3).reshape(B, m, N * d)


def _pull_stream(batch: dict, stream: str):
    if stream not in batch:
        raise ShapeError(f"batch is missing required stream {stream!r}")
    return batch[stream]


def _as_single_sequence(x: Tensor, stream: str) -> Tensor:
    """Embedding stacks arrive as (B, N, m, d); a single-stream encoder needs N == 1."""
    if x.ndim == 4:
        if x.shape[1] != 1:
            raise ShapeError(
                f"{stream}: expected a single block for a plain sequence model, got {x.shape[1]}"
            )
        return x.reshape(x.shape[0], x.shape[2], x.shape[3])
    return x


class _RnnPoolClassifier:
    """Shared plumbing: BiGRU encoder + attention pooling + linear classifier."""

    def __init__(self, stack, mhsa, head):
        self.stack = stack
        self.mhsa = mhsa
        self.head = head

    def encode(self, x, mask, training, rng):
        h = bigru_forward(x, mask, self.stack, training=training, rng=rng)
        return mhsa_pool(h, mask, self.mhsa)

    def finish(self, v) -> ModelOutput:
        logits = self.head.logits(v)
        return ModelOutput(probs=softmax(logits, axis=-1), logits=logits)


class SingleStreamRnn(_RnnPoolClassifier):
    """Baseline: one feature stream into RNN + attention pooling."""

    kind = "rnn"

    def __init__(self, stream, stack, mhsa, head):
        super().__init__(stack, mhsa, head)
        self.stream = stream

    @classmethod
    def create(cls, rng, stream: str, d_in: int, n_classes: int, hidden: int = 256,
               n_layers: int = 2, rnn_dropout: float = 0.3, n_heads: int = 8,
               d_head: int = 64, dtype=np.float32) -> "SingleStreamRnn":
        stack = BiGruStack.create(rng, d_in, hidden, n_layers, rnn_dropout, dtype)
        mhsa = MhsaParams.create(rng, stack.output_dim, n_heads, d_head, dtype)
        head = ClassifierHead.create(rng, mhsa.output_dim, n_classes, dtype)
        return cls(stream, stack, mhsa, head)

    def parameters(self) -> dict:
        out = {f"rnn.{k}": v for k, v in self.stack.parameters().items()}
        out.update({f"attention.{k}": v for k, v in self.mhsa.parameters().items()})
        out.update({f"classifier.{k}": v for k, v in self.head.parameters().items()})
        return out

    def forward(self, batch: dict, training: bool = False, rng=None) -> ModelOutput:
        x, mask = _pull_stream(batch, self.stream)
        x = _as_single_sequence(x, self.stream)
        return self.finish(self.encode(x, mask, training, rng))


class WfRnn(_RnnPoolClassifier):
    """Weighted fusion: learned convex combination of embedding blocks."""

    kind = "wf"

    def __init__(self, block_logits, stack, mhsa, head):
        super().__init__(stack, mhsa, head)
        self.block_logits = block_logits

    @classmethod
    def create(cls, rng, n_blocks: int, d_in: int, n_classes: int, hidden: int = 256,
               n_layers: int = 2, rnn_dropout: float = 0.3, n_heads: int = 8,
               d_head: int = 64, dtype=np.float32) -> "WfRnn":
        stack = BiGruStack.create(rng, d_in, hidden, n_layers, rnn_dropout, dtype)
        mhsa = MhsaParams.create(rng, stack.output_dim, n_heads, d_head, dtype)
        head = ClassifierHead.create(rng, mhsa.output_dim, n_classes, dtype)
        return cls(zeros_param(n_blocks, dtype), stack, mhsa, head)

    def block_weights(self) -> np.ndarray:
        """Current convex block weights (softmax of the logits)."""
        z = self.block_logits.data
        e = np.exp(z - z.max())
        return e / e.sum()

    def parameters(self) -> dict:
        out = {"fusion.block_logits": self.block_logits}
        out.update({f"rnn.{k}": v for k, v in self.stack.parameters().items()})
        out.update({f"attention.{k}": v for k, v in self.mhsa.parameters().items()})
        out.update({f"classifier.{k}": v for k, v in self.head.parameters().items()})
        return out

    def forward(self, batch: dict, training: bool = False, rng=None) -> ModelOutput:
        e, mask = _pull_stream(batch, "embeddings")
        fused = wf_combine(e, self.block_logits)
        return self.finish(self.encode(fused, mask, training, rng))


class EfRnn(_RnnPoolClassifier):
    """Early fusion: blocks concatenated along the feature axis."""

    kind = "ef"

    def __init__(self, n_blocks, stack, mhsa, head):
        super().__init__(stack, mhsa, head)
        self.n_blocks = n_blocks

    @classmethod
    def create(cls, rng, n_blocks: int, d_in: int, n_classes: int, hidden: int = 256,
               n_layers: int = 2, rnn_dropout: float = 0.3, n_heads: int = 8,
               d_head: int = 64, dtype=np.float32) -> "EfRnn":
        stack = BiGruStack.create(rng, n_blocks * d_in, hidden, n_layers, rnn_dropout, dtype)
        mhsa = MhsaParams.create(rng, stack.output_dim, n_heads, d_head, dtype)
        head = ClassifierHead.create(rng, mhsa.output_dim, n_classes, dtype)
        return cls(n_blocks, stack, mhsa, head)

    def parameters(self) -> dict:
        out = {f"rnn.{k}": v for k, v in self.stack.parameters().items()}
        out.update({f"attention.{k}": v for k, v in self.mhsa.parameters().items()})
        out.update({f"classifier.{k}": v for k, v in self.head.parameters().items()})
        return out

    def forward(self, batch: dict, training: bool = False, rng=None) -> ModelOutput:
        e, mask = _pull_stream(batch, "embeddings")
        return self.finish(self.encode(ef_combine(e), mask, training, rng))


class LfRnn:
    """Late fusion: an independent encoder per stream, concatenated vectors
    into one classifier head.  Streams keep their own masks, so
    time-asynchronous inputs (different lengths per stream) are fine."""

    kind = "lf"

    def __init__(self, entries, head):
        # entries: [(stream, block_or_None, stack, mhsa)]
        self.entries = entries
        self.head = head

    @classmethod
    def create(cls, rng, streams, n_classes: int, hidden: int = 256, n_layers: int = 2,
               rnn_dropout: float = 0.3, n_heads: int = 8, d_head: int = 64,
               dtype=np.float32) -> "LfRnn":
        """``streams``: list of (name, block_index_or_None, feature_dim)."""
        if len(streams) < 2:
            raise ConfigError("late fusion needs at least two streams")
        entries = []
        for name, block, d_in in streams:
            stack = BiGruStack.create(rng, d_in, hidden, n_layers, rnn_dropout, dtype)
            mhsa = MhsaParams.create(rng, stack.output_dim, n_heads, d_head, dtype)
            entries.append((name, block, stack, mhsa))
        head = ClassifierHead.create(rng, len(entries) * n_heads * d_head, n_classes, dtype)
        return cls(entries, head)

    @classmethod
    def bimodal(cls, rng, stream_x, stream_y, **kwargs) -> "LfRnn":
        """Exactly-two-stream late fusion (the A+T / A+E / T+E compositions)."""
        return cls.create(rng, [stream_x, stream_y], **kwargs)

    def parameters(self) -> dict:
        out = {}
        for i, (name, block, stack, mhsa) in enumerate(self.entries):
            tag = name if block is None else f"{name}{block}"
            out.update({f"stream{i}_{tag}.rnn.{k}": v for k, v in stack.parameters().items()})
            out.update({f"stream{i}_{tag}.attention.{k}": v for k, v in mhsa.parameters().items()})
        out.update({f"classifier.{k}": v for k, v in self.head.parameters().items()})
        return out

    def forward(self, batch: dict, training: bool = False, rng=None) -> ModelOutput:
        pooled = []
        for name, block, stack, mhsa in self.entries:
            x, mask = _pull_stream(batch, name)
            if block is not None:
                if x.ndim != 4:
                    raise ShapeError(f"{name}: expected a block stack for block={block}")
                x = x.narrow(1, block, 1).reshape(x.shape[0], x.shape[2], x.shape[3])
            else:
                x = _as_single_sequence(x, name)
            h = bigru_forward(x, mask, stack, training=training, rng=rng)
            pooled.append(mhsa_pool(h, mask, mhsa))
        v = concat(pooled, axis=1)
        logits = self.head.logits(v)
        return ModelOutput(probs=softmax(logits, axis=-1), logits=logits)


def build_model(cfg: ModelConfig, stream_dims: dict, n_classes: int, rng, dtype=np.float32):
    """Instantiate the configured model against the loaded stream geometry.

    ``stream_dims``: per stream, ``(n_blocks, feature_dim)`` for
    ``embeddings`` and ``(1, feature_dim)`` for flat streams entries.
    """
    cfg.validate()
    common = dict(hidden=cfg.hidden, n_layers=cfg.layers, rnn_dropout=cfg.dropout,
                  n_heads=cfg.heads, d_head=cfg.head_dim, dtype=dtype)
    for s in cfg.streams:
        if s not in stream_dims:
            raise ConfigError(f"stream {s!r} not present in the loaded corpus")

    if cfg.model == "rnn":
        stream = cfg.streams[0]
        n_blocks, d_in = stream_dims[stream]
        if stream == "embeddings" and n_blocks != 1:
            raise ConfigError("model 'rnn' on embeddings needs exactly one selected block")
        return SingleStreamRnn.create(rng, stream, d_in, n_classes, **common)
    if cfg.model == "wf":
        n_blocks, d_in = stream_dims["embeddings"]
        return WfRnn.create(rng, n_blocks, d_in, n_classes, **common)
    if cfg.model == "ef":
        n_blocks, d_in = stream_dims["embeddings"]
        return EfRnn.create(rng, n_blocks, d_in, n_classes, **common)
    if cfg.model == "lf":
        entries = []
        for s in cfg.streams:
            n_blocks, d_in = stream_dims[s]
            if s == "embeddings":
                entries.extend((s, b, d_in) for b in range(n_blocks))
            else:
                entries.append((s, None, d_in))
        return LfRnn.create(rng, entries, n_classes, **common)
    if cfg.model == "cta":
        n_blocks, d_in = stream_dims["embeddings"]
        return CtaRnnModel.create(rng, n_blocks, d_in, n_classes, hidden=cfg.hidden,
                                  n_layers=cfg.layers, rnn_dropout=cfg.dropout,
                                  n_heads=cfg.heads, d_head=cfg.head_dim,
                                  share_channel_rnn=cfg.share_channel_rnn,
                                  uniform_attention=cfg.uniform_attention, dtype=dtype)
    if cfg.model == "cta_nornn":
        n_blocks, d_in = stream_dims["embeddings"]
        return CtaDirectModel.create(rng, n_blocks, d_in, n_classes, n_heads=cfg.heads,
                                     d_head=cfg.head_dim,
                                     uniform_attention=cfg.uniform_attention, dtype=dtype)
    raise ConfigError(f"unknown model kind {cfg.model!r}")
