"""Forward-time comparison of factorized vs flat global attention pooling."""

from __future__ import annotations

import contextlib
import time

import numpy as np

from ctaser.cta import CtaParams, cta_attend, flat_global_attention
from ctaser.layers import MhsaParams
from ctaser.tensor import Tensor, no_grad


def _single_threaded_blas():
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:
        return contextlib.nullcontext()


def bench_attention(n_list, m: int = 200, d_h: int = 64, n_heads: int = 8,
                    d_head: int = 64, batch: int = 8, reps: int = 11, inner: int = 2,
                    seed: int = 0) -> list:
    """Time cta_attend vs flat_global_attention per channel count.

    Returns one row per N: {"N", "m", "d_h", "heads", "flat_ms", "cta_ms",
    "ratio"}.  The two directions are timed interleaved and the minimum over
    repetitions is reported, so scheduler noise (which only ever adds time)
    cancels out of the comparison; BLAS is pinned to one thread while timing.
    """
    rng = np.random.default_rng(seed)
    rows = []
    with _single_threaded_blas():
        for n in n_list:
            h = Tensor(rng.standard_normal((batch, n, m, d_h)).astype(np.float32))
            mask = np.ones((batch, m), dtype=bool)
            mhsa = MhsaParams.create(rng, d_h, n_heads, d_head)
            cta = CtaParams.create(rng, d_h, n_heads, d_head)
            flat_best, cta_best = np.inf, np.inf
            with no_grad():
                for rep in range(reps + 1):
                    t0 = time.perf_counter()
                    for _ in range(inner):
                        flat_global_attention(h, mask, mhsa)
                    t1 = time.perf_counter()
                    for _ in range(inner):
                        cta_attend(h, mask, cta)
                    t2 = time.perf_counter()
                    if rep == 0:
                        continue  # warm-up
                    flat_best = min(flat_best, (t1 - t0) / inner)
                    cta_best = min(cta_best, (t2 - t1) / inner)
            rows.append(
                {
                    "N": int(n),
                    "m": int(m),
                    "d_h": int(d_h),
                    "heads": int(n_heads),
                    "flat_ms": flat_best * 1e3,
                    "cta_ms": cta_best * 1e3,
                    "ratio": flat_best / cta_best,
                }
            )
    return rows


def format_table(rows) -> str:
    header = "N\tm\td_h\theads\tflat_ms\tcta_ms\tratio"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['N']}\t{r['m']}\t{r['d_h']}\t{r['heads']}"
            f"\t{r['flat_ms']:.3f}\t{r['cta_ms']:.3f}\t{r['ratio']:.3f}"
        )
    return "\n".join(lines) + "\n"
