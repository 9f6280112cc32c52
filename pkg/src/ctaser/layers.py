"""Neural building blocks: bidirectional GRU stacks, multi-head attention
pooling, dropout, and the linear classifier head.

GRU gate convention (normative for all oracle tests):

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    c = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * c

``gru_cell`` composes this from generic tensor ops; ``gru_scan`` runs a
whole sequence as one fused graph node with a hand-written
backpropagation-through-time adjoint, which is what the recurrent models
actually use.  The two are tested against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ctaser.tensor import (
    ShapeError,
    Tensor,
    accumulate_grad,
    broadcast_to,
    concat,
    make_node,
    softmax,
)


def uniform_init(rng, shape, fan_in: int, dtype=np.float32) -> Tensor:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) parameter tensor."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


def zeros_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    return x + broadcast_to(b.reshape(1, b.shape[0]), x.shape)


def dropout(x: Tensor, p: float, rng, training: bool) -> Tensor:
    """Inverted dropout; identity when not training."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return x * keep


# ----------------------------------------------------------------------
# GRU


@dataclass
class GruDirParams:
    """One direction of one GRU layer."""

    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor

    @classmethod
    def create(cls, rng, d_in: int, hidden: int, dtype=np.float32) -> "GruDirParams":
        def w():
            return uniform_init(rng, (d_in, hidden), d_in, dtype)

        def u():
            return uniform_init(rng, (hidden, hidden), hidden, dtype)

        return cls(
            W_z=w(), U_z=u(), b_z=zeros_param(hidden, dtype),
            W_r=w(), U_r=u(), b_r=zeros_param(hidden, dtype),
            W_h=w(), U_h=u(), b_h=zeros_param(hidden, dtype),
        )

    @property
    def hidden(self) -> int:
        return self.W_z.shape[1]

    def named(self, prefix: str) -> dict:
        return {f"{prefix}.{k}": getattr(self, k) for k in
                ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")}


def gru_cell(x: Tensor, h_prev: Tensor, p: GruDirParams) -> Tensor:
    """One GRU step on a (B, d_in) batch, composed from generic ops."""
    if x.ndim != 2 or h_prev.ndim != 2:
        raise ShapeError(f"gru_cell expects 2-D batches, got {x.shape} and {h_prev.shape}")
    z = add_bias(x @ p.W_z + h_prev @ p.U_z, p.b_z).sigmoid()
    r = add_bias(x @ p.W_r + h_prev @ p.U_r, p.b_r).sigmoid()
    cand = add_bias(x @ p.W_h + (r * h_prev) @ p.U_h, p.b_h).tanh()
    return (1.0 - z) * h_prev + z * cand


def _sigmoid(a):
    return 0.5 * (np.tanh(0.5 * a) + 1.0)


def gru_scan(x: Tensor, p: GruDirParams, mask: np.ndarray | None = None, reverse: bool = False) -> Tensor:
    """Full GRU pass over (B, T, d_in) as a single fused graph node.

    Masked (padded) steps neither update the carried state nor emit output:
    the scan carries the previous state through them and writes exact zeros,
    so downstream pooling and gradients are padding-invariant.
    """
    if x.ndim != 3:
        raise ShapeError(f"gru_scan expects (B, T, d_in), got {x.shape}")
    B, T, d_in = x.shape
    if T < 1:
        raise ShapeError("gru_scan: empty sequence")
    if p.W_z.shape[0] != d_in:
        raise ShapeError(f"gru_scan: input dim {d_in} does not match W_z {p.W_z.shape}")
    h = p.hidden
    dt = x.data.dtype
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (B, T):
            raise ShapeError(f"gru_scan: mask shape {mask.shape}, expected {(B, T)}")

    X = x.data
    W = np.concatenate([p.W_z.data, p.W_r.data], axis=1)  # (d_in, 2h)
    U = np.concatenate([p.U_z.data, p.U_r.data], axis=1)  # (h, 2h)
    b = np.concatenate([p.b_z.data, p.b_r.data])
    Wh, Uh, bh = p.W_h.data, p.U_h.data, p.b_h.data

    flat = X.reshape(B * T, d_in)
    pre_zr = (flat @ W + b).reshape(B, T, 2 * h)
    pre_n = (flat @ Wh + bh).reshape(B, T, h)

    hprev_all = np.empty((B, T, h), dtype=dt)
    z_all = np.empty((B, T, h), dtype=dt)
    r_all = np.empty((B, T, h), dtype=dt)
    n_all = np.empty((B, T, h), dtype=dt)
    out = np.zeros((B, T, h), dtype=dt)

    steps = range(T - 1, -1, -1) if reverse else range(T)
    hcur = np.zeros((B, h), dtype=dt)
    for t in steps:
        hprev_all[:, t] = hcur
        zr = _sigmoid(pre_zr[:, t] + hcur @ U)
        z, r = zr[:, :h], zr[:, h:]
        n = np.tanh(pre_n[:, t] + (r * hcur) @ Uh)
        h_new = (1.0 - z) * hcur + z * n
        if mask is None:
            hcur = h_new
            out[:, t] = h_new
        else:
            v = mask[:, t][:, None]
            hcur = np.where(v, h_new, hcur)
            out[:, t] = np.where(v, h_new, 0.0)
        z_all[:, t], r_all[:, t], n_all[:, t] = z, r, n

    parents = (x, p.W_z, p.U_z, p.b_z, p.W_r, p.U_r, p.b_r, p.W_h, p.U_h, p.b_h)

    def bwd(og):
        da_zr = np.empty((B, T, 2 * h), dtype=dt)
        da_n = np.empty((B, T, h), dtype=dt)
        dh = np.zeros((B, h), dtype=dt)
        for t in reversed(list(steps)):
            z, r, n, hp = z_all[:, t], r_all[:, t], n_all[:, t], hprev_all[:, t]
            if mask is None:
                dhn = dh + og[:, t]
                dcarry = 0.0
            else:
                v = mask[:, t][:, None]
                dhn = np.where(v, dh + og[:, t], 0.0)
                dcarry = np.where(v, 0.0, dh)
            dz = dhn * (n - hp)
            dn = dhn * z
            dhp = dhn * (1.0 - z) + dcarry
            dan = dn * (1.0 - n * n)
            drh = dan @ Uh.T
            dr = drh * hp
            dhp = dhp + drh * r
            dzr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
            dhp = dhp + dzr @ U.T
            da_zr[:, t], da_n[:, t] = dzr, dan
            dh = dhp

        flat_zr = da_zr.reshape(B * T, 2 * h)
        flat_n = da_n.reshape(B * T, h)
        dW = flat.T @ flat_zr
        dWh = flat.T @ flat_n
        hp_flat = hprev_all.reshape(B * T, h)
        dU = hp_flat.T @ flat_zr
        dUh = (r_all * hprev_all).reshape(B * T, h).T @ flat_n
        db = flat_zr.sum(axis=0)
        accumulate_grad(x, (flat_zr @ W.T + flat_n @ Wh.T).reshape(B, T, d_in))
        accumulate_grad(p.W_z, dW[:, :h])
        accumulate_grad(p.W_r, dW[:, h:])
        accumulate_grad(p.W_h, dWh)
        accumulate_grad(p.U_z, dU[:, :h])
        accumulate_grad(p.U_r, dU[:, h:])
        accumulate_grad(p.U_h, dUh)
        accumulate_grad(p.b_z, db[:h])
        accumulate_grad(p.b_r, db[h:])
        accumulate_grad(p.b_h, flat_n.sum(axis=0))

    return make_node(out, parents, bwd)


def gru_scan_multi(x: Tensor, params: list, mask: np.ndarray | None = None,
                   reverse: bool = False) -> Tensor:
    """Run N independent GRUs (one per channel) over (B, N, T, d_in) at once.

    Semantically identical to calling :func:`gru_scan` per channel with
    ``params[i]``, but every step is one batched matmul across channels,
    which is what makes stacks of per-channel RNNs affordable.  Returns
    (B, N, T, h).
    """
    if x.ndim != 4:
        raise ShapeError(f"gru_scan_multi expects (B, N, T, d_in), got {x.shape}")
    B, N, T, d_in = x.shape
    if len(params) != N:
        raise ShapeError(f"{N} channels but {len(params)} parameter sets")
    if T < 1:
        raise ShapeError("gru_scan_multi: empty sequence")
    h = params[0].hidden
    dt = x.data.dtype
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (B, T):
            raise ShapeError(f"gru_scan_multi: mask shape {mask.shape}, expected {(B, T)}")

    # stack per-channel weights: (N, d_in, 2h)/(N, h, 2h)/(N, 2h) and the candidate set
    W = np.stack([np.concatenate([p.W_z.data, p.W_r.data], axis=1) for p in params])
    U = np.stack([np.concatenate([p.U_z.data, p.U_r.data], axis=1) for p in params])
    b = np.stack([np.concatenate([p.b_z.data, p.b_r.data]) for p in params])
    Wh = np.stack([p.W_h.data for p in params])
    Uh = np.stack([p.U_h.data for p in params])
    bh = np.stack([p.b_h.data for p in params])

    xc = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(N, B * T, d_in)
    pre_zr = (np.matmul(xc, W) + b[:, None, :]).reshape(N, B, T, 2 * h)
    pre_n = (np.matmul(xc, Wh) + bh[:, None, :]).reshape(N, B, T, h)

    hprev_all = np.empty((N, B, T, h), dtype=dt)
    z_all = np.empty((N, B, T, h), dtype=dt)
    r_all = np.empty((N, B, T, h), dtype=dt)
    n_all = np.empty((N, B, T, h), dtype=dt)
    out = np.zeros((N, B, T, h), dtype=dt)

    steps = range(T - 1, -1, -1) if reverse else range(T)
    hcur = np.zeros((N, B, h), dtype=dt)
    for t in steps:
        hprev_all[:, :, t] = hcur
        zr = _sigmoid(pre_zr[:, :, t] + np.matmul(hcur, U))
        z, r = zr[:, :, :h], zr[:, :, h:]
        n = np.tanh(pre_n[:, :, t] + np.matmul(r * hcur, Uh))
        h_new = (1.0 - z) * hcur + z * n
        if mask is None:
            hcur = h_new
            out[:, :, t] = h_new
        else:
            v = mask[None, :, t, None]
            hcur = np.where(v, h_new, hcur)
            out[:, :, t] = np.where(v, h_new, 0.0)
        z_all[:, :, t], r_all[:, :, t], n_all[:, :, t] = z, r, n

    parents = [x]
    for p in params:
        parents.extend((p.W_z, p.U_z, p.b_z, p.W_r, p.U_r, p.b_r, p.W_h, p.U_h, p.b_h))

    def bwd(og_in):
        og = np.ascontiguousarray(og_in.transpose(1, 0, 2, 3))  # (N, B, T, h)
        da_zr = np.empty((N, B, T, 2 * h), dtype=dt)
        da_n = np.empty((N, B, T, h), dtype=dt)
        dh = np.zeros((N, B, h), dtype=dt)
        for t in reversed(list(steps)):
            z, r, n, hp = z_all[:, :, t], r_all[:, :, t], n_all[:, :, t], hprev_all[:, :, t]
            if mask is None:
                dhn = dh + og[:, :, t]
                dcarry = 0.0
            else:
                v = mask[None, :, t, None]
                dhn = np.where(v, dh + og[:, :, t], 0.0)
                dcarry = np.where(v, 0.0, dh)
            dz = dhn * (n - hp)
            dn = dhn * z
            dhp = dhn * (1.0 - z) + dcarry
            dan = dn * (1.0 - n * n)
            drh = np.matmul(dan, Uh.transpose(0, 2, 1))
            dr = drh * hp
            dhp = dhp + drh * r
            dzr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=2)
            dhp = dhp + np.matmul(dzr, U.transpose(0, 2, 1))
            da_zr[:, :, t], da_n[:, :, t] = dzr, dan
            dh = dhp

        flat_zr = da_zr.reshape(N, B * T, 2 * h)
        flat_n = da_n.reshape(N, B * T, h)
        xT = xc.transpose(0, 2, 1)
        dW = np.matmul(xT, flat_zr)
        dWh = np.matmul(xT, flat_n)
        hpT = hprev_all.reshape(N, B * T, h).transpose(0, 2, 1)
        dU = np.matmul(hpT, flat_zr)
        dUh = np.matmul((r_all * hprev_all).reshape(N, B * T, h).transpose(0, 2, 1), flat_n)
        db = flat_zr.sum(axis=1)
        dbh = flat_n.sum(axis=1)
        dx = (np.matmul(flat_zr, W.transpose(0, 2, 1)) + np.matmul(flat_n, Wh.transpose(0, 2, 1)))
        accumulate_grad(x, dx.reshape(N, B, T, d_in).transpose(1, 0, 2, 3))
        for i, p in enumerate(params):
            accumulate_grad(p.W_z, dW[i, :, :h])
            accumulate_grad(p.W_r, dW[i, :, h:])
            accumulate_grad(p.W_h, dWh[i])
            accumulate_grad(p.U_z, dU[i, :, :h])
            accumulate_grad(p.U_r, dU[i, :, h:])
            accumulate_grad(p.U_h, dUh[i])
            accumulate_grad(p.b_z, db[i, :h])
            accumulate_grad(p.b_r, db[i, h:])
            accumulate_grad(p.b_h, dbh[i])

    return make_node(np.ascontiguousarray(out.transpose(1, 0, 2, 3)), parents, bwd)


@dataclass
class BiGruStack:
    """Stacked bidirectional GRU; output feature dim is 2 * hidden."""

    layers: list  # [(fwd: GruDirParams, bwd: GruDirParams), ...]
    input_dim: int
    hidden: int
    dropout: float

    @classmethod
    def create(cls, rng, d_in: int, hidden: int = 256, n_layers: int = 2,
               dropout: float = 0.3, dtype=np.float32) -> "BiGruStack":
        layers = []
        dim = d_in
        for _ in range(n_layers):
            layers.append(
                (GruDirParams.create(rng, dim, hidden, dtype), GruDirParams.create(rng, dim, hidden, dtype))
            )
            dim = 2 * hidden
        return cls(layers=layers, input_dim=d_in, hidden=hidden, dropout=dropout)

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def parameters(self) -> dict:
        out = {}
        for i, (fwd, bwd) in enumerate(self.layers):
            out.update(fwd.named(f"layer{i}.fwd"))
            out.update(bwd.named(f"layer{i}.bwd"))
        return out


def bigru_forward(x: Tensor, mask: np.ndarray | None, stack: BiGruStack,
                  training: bool = False, rng=None) -> Tensor:
    """Run the stack over (B, T, d_in) (or a single (T, d_in) utterance).

    Inter-layer dropout fires only when ``training``; the rng is required
    in that case so runs stay reproducible.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).reshape(1, -1)
    if x.shape[1] < 1:
        raise ShapeError("bigru_forward: empty sequence")
    if training and stack.dropout > 0.0 and rng is None:
        raise ValueError("training with dropout requires an rng")

    cur = x
    for i, (fwd, bwd) in enumerate(stack.layers):
        f = gru_scan(cur, fwd, mask=mask, reverse=False)
        r = gru_scan(cur, bwd, mask=mask, reverse=True)
        cur = concat([f, r], axis=2)
        if training and i + 1 < len(stack.layers):
            cur = dropout(cur, stack.dropout, rng, training)
    return cur.reshape(*cur.shape[1:]) if squeeze else cur


# ----------------------------------------------------------------------
# multi-head self-attention pooling


@dataclass
class AttentionHead:
    W_Q: Tensor  # (1, d_head)
    W_K: Tensor  # (d_head, d_in)
    W_V: Tensor  # (d_head, d_in)


@dataclass
class MhsaParams:
    heads: list
    d_head: int

    @classmethod
    def create(cls, rng, d_in: int, n_heads: int = 8, d_head: int = 64, dtype=np.float32) -> "MhsaParams":
        heads = [
            AttentionHead(
                W_Q=uniform_init(rng, (1, d_head), d_head, dtype),
                W_K=uniform_init(rng, (d_head, d_in), d_in, dtype),
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
        for j, head in enumerate(self.heads):
            out[f"head{j}.W_Q"] = head.W_Q
            out[f"head{j}.W_K"] = head.W_K
            out[f"head{j}.W_V"] = head.W_V
        return out


def attention_scores(flat: Tensor, head: AttentionHead, d_head: int) -> Tensor:
    """Scaled scores for a flattened (P, d_in) position matrix -> (P, 1)."""
    keys = flat @ head.W_K.transpose()  # (P, d_head)
    return (keys @ head.W_Q.transpose()) * (1.0 / np.sqrt(d_head))


def mhsa_pool(x: Tensor, mask: np.ndarray | None, params: MhsaParams,
              return_weights: bool = False):
    """Pool (B, m, d_in) into (B, n_heads * d_head) attention summaries."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).reshape(1, -1)
    B, m, d_in = x.shape
    flat = x.reshape(B * m, d_in)
    outs = []
    weights = []
    for head in params.heads:
        scores = attention_scores(flat, head, params.d_head).reshape(B, m)
        alpha = softmax(scores, axis=1, mask=mask)
        values = (flat @ head.W_V.transpose()).reshape(B, m, params.d_head)
        weighted = values * broadcast_to(alpha.reshape(B, m, 1), (B, m, params.d_head))
        outs.append(weighted.sum(axis=1))
        weights.append(alpha)
    v = concat(outs, axis=1)
    if squeeze:
        v = v.reshape(v.shape[1])
        weights = [w.reshape(m) for w in weights]
    if return_weights:
        return v, weights
    return v


# ----------------------------------------------------------------------
# classifier head and loss


@dataclass
class ClassifierHead:
    W: Tensor  # (d_in, n_classes)
    b: Tensor  # (n_classes,)

    @classmethod
    def create(cls, rng, d_in: int, n_classes: int, dtype=np.float32) -> "ClassifierHead":
        return cls(W=uniform_init(rng, (d_in, n_classes), d_in, dtype), b=zeros_param(n_classes, dtype))

    def logits(self, v: Tensor) -> Tensor:
        squeeze = v.ndim == 1
        if squeeze:
            v = v.reshape(1, -1)
        out = add_bias(v @ self.W, self.b)
        return out.reshape(out.shape[1]) if squeeze else out

    def parameters(self) -> dict:
        return {"W": self.W, "b": self.b}


def classify(v: Tensor, head: ClassifierHead) -> Tensor:
    """Class probability vector(s) for pooled representation(s)."""
    logits = head.logits(v)
    return softmax(logits, axis=-1)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer targets against class logits.

    Computed through log-sum-exp; identical to -log(softmax(logits)[target])
    but stays finite for extreme logits.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (B, C) logits, got {logits.shape}")
    t = np.asarray(targets)
    B, C = logits.shape
    if t.shape != (B,):
        raise ShapeError(f"cross_entropy: {B} rows but {t.shape} targets")
    x = logits.data
    mx = x.max(axis=1, keepdims=True)
    e = np.exp(x - mx)
    lse = np.log(e.sum(axis=1)) + mx[:, 0]
    loss = (lse - x[np.arange(B), t]).mean()

    def bwd(og):
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(B), t] -= 1.0
        accumulate_grad(logits, og * p / B)

    return make_node(np.asarray(loss, dtype=x.dtype), (logits,), bwd)
