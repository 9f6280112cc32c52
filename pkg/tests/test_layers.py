"""GRU cell/scan semantics, MHSA pooling oracles, classifier head."""

import math

import numpy as np
import pytest

from ctaser.layers import (
    BiGruStack,
    ClassifierHead,
    GruDirParams,
    MhsaParams,
    bigru_forward,
    classify,
    cross_entropy,
    dropout,
    gru_cell,
    gru_scan,
    mhsa_pool,
)
from ctaser.tensor import ShapeError, Tensor, finite_diff_check


def f64_params(rng, d_in, hidden):
    return GruDirParams.create(rng, d_in, hidden, dtype=np.float64)


def zero_params(d_in, hidden, dtype=np.float64):
    z = lambda *s: Tensor(np.zeros(s), requires_grad=True, dtype=dtype)
    return GruDirParams(
        W_z=z(d_in, hidden), U_z=z(hidden, hidden), b_z=z(hidden),
        W_r=z(d_in, hidden), U_r=z(hidden, hidden), b_r=z(hidden),
        W_h=z(d_in, hidden), U_h=z(hidden, hidden), b_h=z(hidden),
    )


class TestGruCell:
    def test_all_zero_params_keep_zero_state(self):
        p = zero_params(3, 2)
        x = Tensor(np.ones((1, 3)), dtype=np.float64)
        h = Tensor(np.zeros((1, 2)), dtype=np.float64)
        out = gru_cell(x, h, p)
        np.testing.assert_allclose(out.data, 0.0)  # z=0.5, candidate=0

    def test_saturated_update_gate_carries_state(self):
        rng = np.random.default_rng(0)
        p = f64_params(rng, 3, 2)
        p.b_z.data[:] = -50.0  # z -> 0, so h' -> h
        x = Tensor(rng.standard_normal((1, 3)), dtype=np.float64)
        h = Tensor(rng.standard_normal((1, 2)), dtype=np.float64)
        out = gru_cell(x, h, p)
        np.testing.assert_allclose(out.data, h.data, atol=1e-6)

    def test_matches_scalar_arithmetic_oracle(self):
        rng = np.random.default_rng(1)
        p = f64_params(rng, 2, 2)
        x = rng.standard_normal(2)
        h = rng.standard_normal(2)

        def sig(v):
            return 1.0 / (1.0 + math.exp(-v))

        def affine(W, U, b, i, hvec):
            return (
                sum(x[k] * W.data[k, i] for k in range(2))
                + sum(hvec[k] * U.data[k, i] for k in range(2))
                + b.data[i]
            )

        z = np.array([sig(affine(p.W_z, p.U_z, p.b_z, i, h)) for i in range(2)])
        r = np.array([sig(affine(p.W_r, p.U_r, p.b_r, i, h)) for i in range(2)])
        cand = np.array([math.tanh(affine(p.W_h, p.U_h, p.b_h, i, r * h)) for i in range(2)])
        expect = (1 - z) * h + z * cand

        got = gru_cell(Tensor(x.reshape(1, 2), dtype=np.float64), Tensor(h.reshape(1, 2), dtype=np.float64), p)
        np.testing.assert_allclose(got.data[0], expect, atol=1e-12)

    def test_shape_mismatch(self):
        p = zero_params(3, 2)
        with pytest.raises(ShapeError):
            gru_cell(Tensor(np.ones(3)), Tensor(np.ones((1, 2))), p)


class TestGruScan:
    def test_matches_composed_cells_forward(self):
        rng = np.random.default_rng(2)
        p = f64_params(rng, 3, 4)
        x = Tensor(rng.standard_normal((2, 5, 3)), dtype=np.float64)
        out = gru_scan(x, p)
        h = Tensor(np.zeros((2, 4)), dtype=np.float64)
        for t in range(5):
            xt = x.narrow(1, t, 1).reshape(2, 3)
            h = gru_cell(xt, h, p)
            np.testing.assert_allclose(out.data[:, t], h.data, atol=1e-12)

    def test_matches_composed_cells_reverse(self):
        rng = np.random.default_rng(3)
        p = f64_params(rng, 3, 4)
        x = Tensor(rng.standard_normal((1, 4, 3)), dtype=np.float64)
        out = gru_scan(x, p, reverse=True)
        h = Tensor(np.zeros((1, 4)), dtype=np.float64)
        for t in (3, 2, 1, 0):
            h = gru_cell(x.narrow(1, t, 1).reshape(1, 3), h, p)
            np.testing.assert_allclose(out.data[:, t], h.data, atol=1e-12)

    def test_masked_steps_emit_zero_and_carry(self):
        rng = np.random.default_rng(4)
        p = f64_params(rng, 3, 4)
        x = Tensor(rng.standard_normal((1, 5, 3)), dtype=np.float64)
        mask = np.array([[True, True, True, False, False]])
        out = gru_scan(x, p, mask=mask)
        np.testing.assert_array_equal(out.data[0, 3:], 0.0)
        # valid prefix identical to scanning the unpadded sequence
        short = gru_scan(Tensor(x.data[:, :3].copy(), dtype=np.float64), p)
        np.testing.assert_array_equal(out.data[0, :3], short.data[0])

    def test_adjoints_match_finite_differences(self):
        rng = np.random.default_rng(5)
        p = f64_params(rng, 2, 3)
        x = Tensor(rng.standard_normal((2, 4, 2)), requires_grad=True, dtype=np.float64)
        mask = np.array([[True, True, True, False], [True, True, False, False]])
        read = rng.uniform(-1, 1, size=(2, 4, 3))
        params = [x] + list(p.named("p").values())
        for kwargs in ({}, {"reverse": True}, {"mask": mask}, {"mask": mask, "reverse": True}):
            err = finite_diff_check(lambda: (gru_scan(x, p, **kwargs) * read).sum(), params)
            assert err < 1e-4, f"gru_scan{kwargs}: {err}"


class TestGruScanMulti:
    def test_matches_per_channel_scans(self):
        from ctaser.layers import gru_scan_multi

        rng = np.random.default_rng(30)
        params = [f64_params(rng, 3, 4) for _ in range(3)]
        x = Tensor(rng.standard_normal((2, 3, 5, 3)), dtype=np.float64)
        mask = np.array([[True] * 5, [True, True, True, False, False]])
        for kwargs in ({}, {"reverse": True}, {"mask": mask}, {"mask": mask, "reverse": True}):
            multi = gru_scan_multi(x, params, **kwargs)
            for i in range(3):
                single = gru_scan(x.narrow(1, i, 1).reshape(2, 5, 3), params[i], **kwargs)
                np.testing.assert_allclose(multi.data[:, i], single.data, atol=1e-12)

    def test_adjoints(self):
        from ctaser.layers import gru_scan_multi

        rng = np.random.default_rng(31)
        params = [f64_params(rng, 2, 3) for _ in range(2)]
        x = Tensor(rng.standard_normal((1, 2, 4, 2)), requires_grad=True, dtype=np.float64)
        mask = np.array([[True, True, True, False]])
        read = rng.uniform(-1, 1, size=(1, 2, 4, 3))
        everything = [x]
        for p in params:
            everything.extend(p.named("p").values())
        err = finite_diff_check(
            lambda: (gru_scan_multi(x, params, mask=mask, reverse=True) * read).sum(), everything
        )
        assert err < 1e-4

    def test_channel_count_checked(self):
        from ctaser.layers import gru_scan_multi

        rng = np.random.default_rng(32)
        params = [f64_params(rng, 2, 3)]
        x = Tensor(rng.standard_normal((1, 2, 4, 2)), dtype=np.float64)
        with pytest.raises(ShapeError, match="parameter sets"):
            gru_scan_multi(x, params)


class TestBiGru:
    def test_single_step_has_bidirectional_dim(self):
        rng = np.random.default_rng(6)
        stack = BiGruStack.create(rng, d_in=80)  # defaults: 2 layers, 256 hidden
        x = Tensor(rng.standard_normal((1, 80)).astype(np.float32))
        out = bigru_forward(x, None, stack)
        assert out.shape == (1, 512)

    def test_padded_batch_matches_unbatched_runs(self):
        rng = np.random.default_rng(7)
        stack = BiGruStack.create(rng, d_in=3, hidden=4, n_layers=2, dtype=np.float64)
        a = rng.standard_normal((5, 3))
        b = rng.standard_normal((3, 3))
        padded = np.zeros((2, 5, 3))
        padded[0], padded[1, :3] = a, b
        mask = np.array([[True] * 5, [True] * 3 + [False] * 2])
        batch_out = bigru_forward(Tensor(padded, dtype=np.float64), mask, stack)
        for seq, valid, row in ((a, 5, 0), (b, 3, 1)):
            solo = bigru_forward(Tensor(seq, dtype=np.float64), None, stack)
            np.testing.assert_allclose(batch_out.data[row, :valid], solo.data, atol=1e-5)

    def test_inference_is_deterministic(self):
        rng = np.random.default_rng(8)
        stack = BiGruStack.create(rng, d_in=4, hidden=3)
        x = Tensor(rng.standard_normal((2, 6, 4)).astype(np.float32))
        one = bigru_forward(x, None, stack, training=False)
        two = bigru_forward(x, None, stack, training=False)
        np.testing.assert_array_equal(one.data, two.data)

    def test_dropout_only_between_layers_and_seeded(self):
        rng = np.random.default_rng(9)
        stack = BiGruStack.create(rng, d_in=4, hidden=3, dropout=0.5)
        x = Tensor(rng.standard_normal((1, 6, 4)).astype(np.float32))
        a = bigru_forward(x, None, stack, training=True, rng=np.random.default_rng(42))
        b = bigru_forward(x, None, stack, training=True, rng=np.random.default_rng(42))
        c = bigru_forward(x, None, stack, training=True, rng=np.random.default_rng(43))
        np.testing.assert_array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_empty_sequence_rejected(self):
        rng = np.random.default_rng(10)
        stack = BiGruStack.create(rng, d_in=4, hidden=3)
        with pytest.raises(ShapeError):
            bigru_forward(Tensor(np.zeros((1, 0, 4))), None, stack)


def mhsa_oracle(H, params):
    """Direct dense evaluation of the per-head attention formulas."""
    vs = []
    for head in params.heads:
        scores = (head.W_Q.data @ (head.W_K.data @ H.T)) / np.sqrt(params.d_head)
        e = np.exp(scores - scores.max())
        alpha = (e / e.sum()).ravel()
        vs.append(head.W_V.data @ H.T @ alpha)
    return np.concatenate(vs)


class TestMhsaPool:
    def test_zero_query_gives_uniform_attention(self):
        rng = np.random.default_rng(11)
        params = MhsaParams.create(rng, d_in=5, n_heads=2, d_head=3, dtype=np.float64)
        for head in params.heads:
            head.W_Q.data[:] = 0.0
        H = rng.standard_normal((6, 5))
        v, weights = mhsa_pool(Tensor(H, dtype=np.float64), None, params, return_weights=True)
        for w in weights:
            np.testing.assert_allclose(w.data, 1 / 6, atol=1e-12)
        expect = np.concatenate([h.W_V.data @ H.mean(axis=0) for h in params.heads])
        np.testing.assert_allclose(v.data, expect, atol=1e-10)

    def test_single_position(self):
        rng = np.random.default_rng(12)
        params = MhsaParams.create(rng, d_in=4, n_heads=2, d_head=3, dtype=np.float64)
        H = rng.standard_normal((1, 4))
        v, weights = mhsa_pool(Tensor(H, dtype=np.float64), None, params, return_weights=True)
        for w in weights:
            np.testing.assert_array_equal(w.data, [1.0])
        expect = np.concatenate([h.W_V.data @ H[0] for h in params.heads])
        np.testing.assert_allclose(v.data, expect, atol=1e-12)

    def test_matches_direct_formula_oracle(self):
        rng = np.random.default_rng(13)
        params = MhsaParams.create(rng, d_in=4, n_heads=2, d_head=3, dtype=np.float64)
        H = rng.standard_normal((3, 4))
        v = mhsa_pool(Tensor(H, dtype=np.float64), None, params)
        np.testing.assert_allclose(v.data, mhsa_oracle(H, params), atol=1e-10)

    def test_padding_invariance(self):
        rng = np.random.default_rng(14)
        params = MhsaParams.create(rng, d_in=4, n_heads=2, d_head=3, dtype=np.float64)
        H = rng.standard_normal((5, 4))
        base = mhsa_pool(Tensor(H, dtype=np.float64), np.ones(5, dtype=bool), params)
        padded = np.vstack([H, rng.standard_normal((3, 4))])
        mask = np.array([True] * 5 + [False] * 3)
        ext = mhsa_pool(Tensor(padded, dtype=np.float64), mask, params)
        assert np.max(np.abs(base.data - ext.data)) < 1e-6

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(15)
        params = MhsaParams.create(rng, d_in=4, n_heads=3, d_head=2)
        H = Tensor(rng.standard_normal((2, 7, 4)).astype(np.float32))
        mask = np.array([[True] * 7, [True] * 4 + [False] * 3])
        _, weights = mhsa_pool(H, mask, params, return_weights=True)
        for w in weights:
            assert np.all(w.data >= 0)
            np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-6)
            np.testing.assert_array_equal(w.data[1, 4:], 0.0)


class TestClassifier:
    def test_zero_weights_give_uniform(self):
        head = ClassifierHead(W=Tensor(np.zeros((5, 4)), requires_grad=True), b=Tensor(np.zeros(4), requires_grad=True))
        probs = classify(Tensor(np.ones(5)), head)
        np.testing.assert_allclose(probs.data, 0.25, atol=1e-7)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(16)
        head = ClassifierHead.create(rng, d_in=6, n_classes=3)
        probs = classify(Tensor(rng.standard_normal((4, 6)).astype(np.float32)), head)
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-6)

    def test_uniform_prediction_crossentropy_is_log_k(self):
        logits = Tensor(np.zeros((2, 5)), requires_grad=True, dtype=np.float64)
        loss = cross_entropy(logits, np.array([0, 3]))
        assert abs(loss.item() - math.log(5)) < 1e-12

    def test_crossentropy_adjoint(self):
        rng = np.random.default_rng(17)
        logits = Tensor(rng.standard_normal((3, 4)), requires_grad=True, dtype=np.float64)
        targets = np.array([0, 2, 3])
        assert finite_diff_check(lambda: cross_entropy(logits, targets), [logits]) < 1e-4


def test_every_parameter_gets_a_checked_gradient():
    """BiGRU + MHSA + classifier toy pipeline passes a full gradient check."""
    rng = np.random.default_rng(18)
    stack = BiGruStack.create(rng, d_in=3, hidden=2, n_layers=2, dropout=0.0, dtype=np.float64)
    params = MhsaParams.create(rng, d_in=4, n_heads=2, d_head=3, dtype=np.float64)
    head = ClassifierHead.create(rng, d_in=6, n_classes=3, dtype=np.float64)
    x = Tensor(rng.standard_normal((2, 4, 3)), dtype=np.float64)
    mask = np.array([[True] * 4, [True, True, True, False]])
    targets = np.array([0, 2])

    def f():
        h = bigru_forward(x, mask, stack, training=False)
        v = mhsa_pool(h, mask, params)
        return cross_entropy(head.logits(v), targets)

    everything = {**{f"gru.{k}": v for k, v in stack.parameters().items()},
                  **{f"att.{k}": v for k, v in params.parameters().items()},
                  **{f"cls.{k}": v for k, v in head.parameters().items()}}
    assert finite_diff_check(f, everything) < 1e-4


def test_dropout_scales_preserved_in_expectation():
    rng = np.random.default_rng(19)
    x = Tensor(np.ones((200, 50), dtype=np.float32))
    y = dropout(x, 0.3, rng, training=True)
    assert abs(y.data.mean() - 1.0) < 0.02
    np.testing.assert_array_equal(dropout(x, 0.3, rng, training=False).data, x.data)
