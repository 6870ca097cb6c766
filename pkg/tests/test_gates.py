import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gendropout.errors import ContractError, DimensionError, NumericError
from gendropout.gates import (GateGranularity, GateMode, GateParams, apply_gate, clip, gate_backward,
                              read_gates_csv, sample_mask, write_gates_csv)
from gendropout.oracle import binomial_check, finite_diff, relative_error

PU, PC, PA = GateGranularity.PER_UNIT, GateGranularity.PER_CHANNEL, GateGranularity.PER_ACTIVATION
TRAIN, EVAL, HEAVI = GateMode.TRAIN, GateMode.EVAL, GateMode.HEAVISIDE


def gp(k, gran=PU, site="fc1"):
    return GateParams(np.asarray(k, dtype=float), gran, site)


class TestClip:
    @pytest.mark.parametrize("x, want", [(1.2, 1.0), (-0.3, 0.0), (0.7, 0.7), (0.0, 0.0), (1.0, 1.0)])
    def test_examples(self, x, want):
        assert clip(x) == want

    def test_nan(self):
        with pytest.raises(NumericError):
            clip(float("nan"))

    @given(st.floats(allow_nan=False, allow_infinity=True))
    def test_range(self, x):
        assert 0.0 <= clip(x) <= 1.0


class TestSampleMask:
    def test_degenerate_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            np.testing.assert_array_equal(sample_mask(gp([1, 1, 1]), TRAIN, rng), [1, 1, 1])

    def test_heaviside_ties_to_one(self):
        np.testing.assert_array_equal(sample_mask(gp([0.7, 0.3, 0.5]), HEAVI), [1, 0, 1])

    def test_eval_gives_none(self):
        assert sample_mask(gp([0.3]), EVAL) is None

    def test_train_needs_rng(self):
        with pytest.raises(ContractError):
            sample_mask(gp([0.3]), TRAIN)

    def test_binomial_interval(self):
        rng = np.random.default_rng(0)
        draws = np.array([sample_mask(gp([0.3]), TRAIN, rng)[0] for _ in range(10_000)])
        assert 0.286 <= draws.mean() <= 0.314

    def test_values_are_binary(self):
        m = sample_mask(gp(np.linspace(0, 1, 101)), TRAIN, np.random.default_rng(1))
        assert set(np.unique(m)) <= {0.0, 1.0}

    def test_one_variate_per_gate_in_order(self):
        k = np.linspace(0.05, 0.95, 12).reshape(3, 2, 2)
        m = sample_mask(gp(k, PA, "input"), TRAIN, np.random.default_rng(9))
        u = np.random.default_rng(9).random(12).reshape(3, 2, 2)
        np.testing.assert_array_equal(m, (u < k).astype(float))

    def test_reproducible(self):
        p = gp(np.full(50, 0.4))
        a = sample_mask(p, TRAIN, np.random.default_rng(3))
        b = sample_mask(p, TRAIN, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_eval_and_heaviside_consume_no_randomness(self):
        rng = np.random.default_rng(4)
        sample_mask(gp([0.4, 0.6]), EVAL, rng)
        sample_mask(gp([0.4, 0.6]), HEAVI, rng)
        assert rng.random() == np.random.default_rng(4).random()

    @pytest.mark.parametrize("p", [0.0, 0.1, 0.3, 0.5, 0.9, 1.0])
    def test_binomial_check(self, p):
        m = sample_mask(gp(np.full(10_000, p)), TRAIN, np.random.default_rng(11))
        assert binomial_check(m, p)


class TestApplyGate:
    def test_mask(self):
        np.testing.assert_array_equal(apply_gate([2.0, 3.0], gp([0.2, 0.9]), np.array([1.0, 0.0]), TRAIN), [2, 0])

    def test_eval_rescales(self):
        np.testing.assert_array_equal(apply_gate([2.0, 3.0], gp([0.5, 1.0]), None, EVAL), [1.0, 3.0])

    def test_per_channel_broadcast(self):
        out = apply_gate(np.ones((2, 4, 4)), gp([0.0, 1.0], PC, "conv1"), None, EVAL)
        assert not out[0].any() and np.all(out[1] == 1.0)

    def test_per_channel_batched(self):
        out = apply_gate(np.ones((3, 2, 4, 4)), gp([0.25, 1.0], PC, "conv1"), None, EVAL)
        assert np.all(out[:, 0] == 0.25) and np.all(out[:, 1] == 1.0)

    def test_per_activation_elementwise(self):
        k = np.arange(8.0).reshape(2, 2, 2) / 8
        out = apply_gate(np.ones((5, 2, 2, 2)), gp(k, PA, "input"), None, EVAL)
        np.testing.assert_array_equal(out[3], k)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            apply_gate(np.ones((4, 3)), gp([1.0, 1.0]), None, EVAL)
        with pytest.raises(DimensionError):
            apply_gate(np.ones((3, 4, 4)), gp([1.0, 1.0], PC, "conv1"), None, EVAL)

    def test_mask_presence_contract(self):
        with pytest.raises(ContractError):
            apply_gate([1.0], gp([0.5]), None, TRAIN)
        with pytest.raises(ContractError):
            apply_gate([1.0], gp([0.5]), np.ones(1), EVAL)

    @pytest.mark.parametrize("k", [0.0, 1.0])
    def test_degenerate_train_equals_eval(self, k):
        a = np.random.default_rng(0).uniform(-1, 1, (4, 6))
        p = gp(np.full(6, k))
        m = sample_mask(p, TRAIN, np.random.default_rng(1))
        np.testing.assert_array_equal(apply_gate(a, p, m, TRAIN), apply_gate(a, p, None, EVAL))

    def test_expected_train_output_is_eval_output(self):
        rng = np.random.default_rng(5)
        k = np.array([0.1, 0.3, 0.5, 0.8, 0.95])
        a = rng.uniform(0.5, 2.0, 5)
        p = gp(k)
        outs = np.array([apply_gate(a, p, sample_mask(p, TRAIN, rng), TRAIN) for _ in range(10_000)])
        sigma = a * np.sqrt(k * (1 - k) / len(outs))
        assert np.all(np.abs(outs.mean(axis=0) - apply_gate(a, p, None, EVAL)) <= 4 * sigma)


class TestGateBackward:
    @pytest.mark.parametrize("mode", [TRAIN, HEAVI, EVAL])
    def test_straight_through(self, mode):
        p = gp([0.4, 0.6])
        mask = None if mode is EVAL else sample_mask(p, mode, np.random.default_rng(0))
        _, gk = gate_backward([1.0, 1.0], [2.0, 3.0], mask, p, mode)
        np.testing.assert_array_equal(gk, [2.0, 3.0])

    def test_mask_gradient(self):
        ga, _ = gate_backward([5.0, 7.0], [1.0, 1.0], np.array([0.0, 1.0]), gp([0.5, 0.5]), TRAIN)
        np.testing.assert_array_equal(ga, [0.0, 7.0])

    def test_eval_gradient_scales_by_k(self):
        ga, _ = gate_backward([5.0, 7.0], [1.0, 1.0], None, gp([0.2, 0.5]), EVAL)
        np.testing.assert_array_equal(ga, [1.0, 3.5])

    def test_per_channel_sums_space_and_batch(self):
        rng = np.random.default_rng(2)
        a, g = rng.uniform(-1, 1, (3, 2, 4, 4)), rng.uniform(-1, 1, (3, 2, 4, 4))
        _, gk = gate_backward(g, a, None, gp([0.5, 0.5], PC, "conv1"), EVAL)
        np.testing.assert_allclose(gk, (g * a).sum(axis=(0, 2, 3)), rtol=1e-13)

    def test_mode_independent_grad_k(self):
        rng = np.random.default_rng(3)
        a, g = rng.uniform(-1, 1, (4, 6)), rng.uniform(-1, 1, (4, 6))
        p = gp(rng.uniform(0, 1, 6))
        _, g_eval = gate_backward(g, a, None, p, EVAL)
        for mask in (sample_mask(p, TRAIN, rng), sample_mask(p, HEAVI)):
            np.testing.assert_array_equal(gate_backward(g, a, mask, p, TRAIN)[1], g_eval)

    @pytest.mark.parametrize("gran, shape, kshape", [(PU, (3, 5), (5,)), (PC, (3, 2, 4, 4), (2,)),
                                                     (PA, (3, 2, 4, 4), (2, 4, 4))])
    def test_eval_grad_k_matches_fd(self, gran, shape, kshape):
        rng = np.random.default_rng(4)
        a, w = rng.uniform(-1, 1, shape), rng.uniform(-1, 1, shape)
        k0 = rng.uniform(0.1, 0.9, kshape)

        def loss(k):
            y = apply_gate(a, gp(k, gran, "s"), None, EVAL)
            return float(np.sum(np.tanh(y) * w))

        y = apply_gate(a, gp(k0, gran, "s"), None, EVAL)
        _, gk = gate_backward(w * (1 - np.tanh(y) ** 2), a, None, gp(k0, gran, "s"), EVAL)
        assert relative_error(gk, finite_diff(loss, k0)) < 1e-4


class TestCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        gates = [gp(rng.uniform(0, 1, (1, 28, 28)), PA, "input"), gp(rng.uniform(0, 1, 7), PU, "fc1"),
                 gp(np.array([0.1 + 0.2, 1 / 3]), PC, "conv1")]
        path = tmp_path / "gates.csv"
        write_gates_csv(path, gates)
        back = read_gates_csv(path)
        assert list(back) == ["input", "fc1", "conv1"]
        for g in gates:
            np.testing.assert_array_equal(back[g.site], g.k.ravel())
        np.testing.assert_array_equal(back["input"].reshape(28, 28), gates[0].k[0])

    def test_header(self, tmp_path):
        write_gates_csv(tmp_path / "g.csv", [gp([0.5])])
        assert (tmp_path / "g.csv").read_text().splitlines() == ["layer_name,gate_index,k", "fc1,0,0.5"]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.5, 1.5), min_size=1, max_size=20), st.integers(0, 2**32 - 1))
def test_train_mask_respects_endpoints(ks, seed):
    k = np.asarray(ks)
    m = sample_mask(gp(k), TRAIN, np.random.default_rng(seed))
    assert np.all(m[k >= 1.0] == 1.0) and np.all(m[k <= 0.0] == 0.0)
