"""Whole-model gradient checking against central finite differences.

Builds a small 64-bit instance of any configured model kind, evaluates a
cross-entropy loss on fixed random inputs, and compares every parameter's
analytic gradient with central differences.  A deliberate adjoint
corruption mode exists as a negative control for CI.
"""

from __future__ import annotations

import numpy as np

from ctaser.config import ModelConfig
from ctaser.fusion import build_model
from ctaser.layers import cross_entropy
from ctaser.tensor import Tensor, accumulate_grad, finite_diff_check, make_node

DEFAULT_DIMS = {
    "N": 3,        # embedding channels / blocks
    "m": 5,        # timesteps
    "d_e": 4,      # embedding feature dim
    "hidden": 4,   # GRU hidden per direction (d_h = 2 * hidden)
    "heads": 2,
    "head_dim": 4,
    "classes": 3,
    "batch": 2,
}


def parse_dims(text: str | None) -> dict:
    dims = dict(DEFAULT_DIMS)
    if text:
        for item in text.split(","):
            key, _, value = item.partition("=")
            key = key.strip()
            if key not in dims:
                raise ValueError(f"unknown dim {key!r}; known: {sorted(dims)}")
            dims[key] = int(value)
    return dims


def _corrupted_identity(t: Tensor) -> Tensor:
    """Identity with a wrong adjoint (scales gradients by 1.5); negative control."""
    return make_node(t.data.copy(), (t,), lambda og: accumulate_grad(t, og * 1.5))


def build_toy(kind: str, dims: dict, seed: int):
    """64-bit toy model + frozen batch + targets for the given model kind."""
    rng = np.random.default_rng(seed)
    n, m, d_e, b = dims["N"], dims["m"], dims["d_e"], dims["batch"]
    cfg = ModelConfig(
        model=kind,
        streams=["spectrogram", "text"] if kind == "lf" else
                (["spectrogram"] if kind == "rnn" else ["embeddings"]),
        hidden=dims["hidden"],
        layers=2,
        dropout=0.0,
        heads=dims["heads"],
        head_dim=dims["head_dim"],
    )
    stream_dims = {
        "embeddings": (n, d_e),
        "spectrogram": (1, d_e),
        "text": (1, d_e + 1),
    }
    model = build_model(cfg, stream_dims, dims["classes"], rng, dtype=np.float64)

    mask = np.ones((b, m), dtype=bool)
    if m > 1:
        mask[-1, -1] = False  # exercise the masked paths
    batch = {
        "embeddings": (Tensor(rng.standard_normal((b, n, m, d_e)), dtype=np.float64), mask),
        "spectrogram": (Tensor(rng.standard_normal((b, m, d_e)), dtype=np.float64), mask),
        "text": (Tensor(rng.standard_normal((b, m + 2, d_e + 1)), dtype=np.float64),
                 np.ones((b, m + 2), dtype=bool)),
    }
    targets = rng.integers(0, dims["classes"], size=b)
    return model, batch, targets


def run_gradcheck(kind: str, dims: dict | None = None, seed: int = 0,
                  corrupt_adjoint: bool = False, eps: float = 1e-4) -> float:
    """Max relative gradient error over every parameter of the toy model.

    The default step is coarser than the per-primitive sweeps use: a whole
    model maps many near-cancelling paths onto single parameters, so some
    gradient components sit near 1e-8 where central differences at 1e-5 are
    dominated by float64 roundoff of the loss itself.  Truncation error at
    1e-4 is still ~1e-8 relative, far below the 1e-4 acceptance bar.
    """
    dims = dict(DEFAULT_DIMS if dims is None else dims)
    model, batch, targets = build_toy(kind, dims, seed)

    def loss_fn():
        loss = cross_entropy(model.forward(batch, training=False).logits, targets)
        if corrupt_adjoint:
            loss = _corrupted_identity(loss)
        return loss

    return finite_diff_check(loss_fn, model.parameters(), eps=eps)
