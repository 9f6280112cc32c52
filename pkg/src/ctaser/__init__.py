"""Sequence-classification toolkit with factorized channel/temporal attention.

Builds fixed-length utterance representations from stacks of per-layer
encoder embeddings (or single feature streams) and classifies them, with
a reverse-mode autodiff core, an LMFB feature frontend, multi-stream
fusion baselines, and a leave-one-speaker-out cross-validation harness.
"""

from ctaser.tensor import Tensor, no_grad, finite_diff_check

__version__ = "0.1.0"

__all__ = ["Tensor", "no_grad", "finite_diff_check", "__version__"]
