import numpy as np
import pytest

from gendropout.data import synthetic_blobs
from gendropout.errors import ContractError, PruneError
from gendropout.gates import GateMode
from gendropout.network import GateSpec, build, forward, lenet_spec, mlp_spec, param_count
from gendropout.prune import fold_gates, gate_histogram, prunable_sites, prune, select_threshold_by_gap
from gendropout.regularizers import preset
from gendropout.train import TrainConfig, train

PC, PU = GateSpec("per_channel", 1.0), GateSpec("per_unit", 1.0)


def _eval(net, x):
    return forward(net, x, GateMode.EVAL)[0]


class TestHistogram:
    def test_endpoints(self):
        np.testing.assert_array_equal(gate_histogram([0.0, 1.0], 2), [1, 1])

    def test_direct_binning(self):
        np.testing.assert_array_equal(gate_histogram([0.05, 0.07, 0.96], 10), [2, 0, 0, 0, 0, 0, 0, 0, 0, 1])

    def test_uniform(self):
        counts = gate_histogram(np.random.default_rng(0).uniform(0, 1, 10_000), 10)
        sigma = np.sqrt(10_000 * 0.1 * 0.9)
        assert np.all(np.abs(counts - 1000) <= 4 * sigma)

    def test_bins_contract(self):
        with pytest.raises(ContractError):
            gate_histogram([0.5], 1)


class TestGapThreshold:
    def test_unique_gap(self):
        assert select_threshold_by_gap([0.01, 0.03, 0.95, 0.97]) == pytest.approx(0.49)

    def test_degenerate(self):
        assert select_threshold_by_gap([0.5, 0.5, 0.5]) == 0.0

    def test_bimodal_fixture(self):
        rng = np.random.default_rng(0)
        k = rng.permutation(np.concatenate([rng.uniform(0, 0.1, 30), rng.uniform(0.9, 1.0, 10)]))
        t = select_threshold_by_gap(k)
        assert 0.1 < t < 0.9
        assert int((k >= t).sum()) == 10

    def test_needs_two(self):
        with pytest.raises(ContractError):
            select_threshold_by_gap([0.3])


class TestPrune:
    def test_manual_threshold(self):
        net = build(mlp_spec(4, [3], 2, PU), 0)
        net.gates["fc1"].k[:] = [0.9, 0.02, 0.6]
        pruned, report = prune(net, 0.5)
        assert report.layers[0].surviving_width == 2
        assert pruned.spec.architecture() == "2-2"
        np.testing.assert_array_equal(pruned.weights[0], net.weights[0][:, [0, 2]])
        np.testing.assert_array_equal(pruned.weights[1], net.weights[1][[0, 2]])
        np.testing.assert_array_equal(pruned.gates["fc1"].k, [0.9, 0.6])

    def test_lenet_pruned_to_11_33_38(self):
        net = build(lenet_spec(conv_gate=PC, dense_gate=PU), 0)
        for site, keep in (("conv1", 11), ("conv2", 33), ("fc1", 38)):
            net.gates[site].k[keep:] = 0.0
        pruned, report = prune(net, 0.5)
        assert pruned.spec.architecture() == "11-33-38-10"
        assert report.param_count_after == 29_886 == param_count(pruned.spec)
        assert report.param_count_before == 431_080
        assert [w.shape for w in pruned.weights] == [(11, 1, 5, 5), (33, 11, 5, 5), (528, 38), (38, 10)]

    @pytest.mark.parametrize("spec", [
        lenet_spec(conv_gate=GateSpec("per_channel", 0.9), dense_gate=GateSpec("per_unit", 0.8)),
        mlp_spec(20, [64, 33], 3, GateSpec("per_unit", 0.8)),
    ])
    def test_exact_zero_invariance(self, spec):
        net = build(spec, 1)
        rng = np.random.default_rng(0)
        for p in net.gates.values():
            p.k[:] = rng.uniform(0.3, 1.0, p.k.shape)
            p.k[rng.choice(p.k.size, 3, replace=False)] = 0.0
        x = rng.uniform(-1, 1, (100,) + spec.input_shape)
        pruned, report = prune(net, 1e-12)
        assert all(lp.surviving_width == lp.original_width - 3 for lp in report.layers)
        assert np.array_equal(_eval(net, x), _eval(pruned, x))

    def test_conv_to_dense_removes_spatial_block(self):
        net = build(lenet_spec((4, 3, 5, 2), conv_gate=PC, input_shape=(1, 16, 16)), 0)
        net.gates["conv2"].k[1] = 0.0
        pruned, _ = prune(net, {"conv2": 0.5})
        # conv2 output is 3 x 1 x 1 here, so one row per channel
        np.testing.assert_array_equal(pruned.weights[2], net.weights[2][[0, 2]])
        assert "conv1" in pruned.gates and pruned.gates["conv1"].k.size == 4

    def test_report_consistency(self):
        net = build(lenet_spec((6, 8, 30, 10), conv_gate=PC, dense_gate=PU), 0)
        rng = np.random.default_rng(1)
        for p in net.gates.values():
            p.k[:] = rng.uniform(0, 1, p.k.shape)
        pruned, report = prune(net, "auto")
        assert report.param_count_after == param_count(pruned.spec)
        for lp in report.layers:
            assert lp.surviving_width <= lp.original_width
            assert set(report.histograms) == {"conv1", "conv2", "fc1"}
        table = report.table("SAL", 0.05, 0.06)
        assert "Architecture" in table and "No. of Params" in table and "Error (%)" in table
        assert f"{report.param_count_after:,}" in table and "6.00" in table

    def test_histogram_csv(self):
        net = build(mlp_spec(4, [4], 2, PU), 0)
        net.gates["fc1"].k[:] = [0.0, 0.05, 0.5, 1.0]
        _, report = prune(net, 0.01, bins=4)
        lines = report.histogram_csv().splitlines()
        assert lines[0] == "layer_name,bin,bin_low,bin_high,count"
        assert lines[1:] == ["fc1,0,0.0,0.25,2", "fc1,1,0.25,0.5,0", "fc1,2,0.5,0.75,1", "fc1,3,0.75,1.0,1"]

    def test_refuses_zero_width(self):
        net = build(mlp_spec(4, [3], 2, PU), 0)
        net.gates["fc1"].k[:] = 0.1
        with pytest.raises(PruneError) as info:
            prune(net, 0.5)
        assert info.value.layer == "fc1"

    def test_requires_prunable_gates(self):
        with pytest.raises(PruneError):
            prune(build(lenet_spec(conv_gate=GateSpec("per_activation")), 0), "auto")
        with pytest.raises(PruneError):
            prune(build(mlp_spec(4, [3], 2, PU), 0), {"fc9": 0.5})

    def test_per_activation_sites_not_prunable(self):
        net = build(lenet_spec(conv_gate=GateSpec("per_activation"), dense_gate=PU,
                               input_gate=GateSpec("per_activation")), 0)
        assert prunable_sites(net) == ["fc1"]

    def test_approximate_bound(self):
        """Pruning gates below t = 1e-3 barely moves the logits of a trained toy net."""
        tr = synthetic_blobs(200, 2, 2, 10.0, seed=0)
        net = build(mlp_spec(2, [32], 2, GateSpec("per_unit", 0.5)), 0)
        train(net, tr, None, TrainConfig(epochs=60, regularizer=preset("sal", 100, s=0.005)))
        k = net.gates["fc1"].k
        assert np.any(k < 1e-3) and np.any(k >= 1e-3)
        pruned, _ = prune(net, 1e-3)
        diff = np.abs(_eval(net, tr.images) - _eval(pruned, tr.images)).max()
        scale = np.abs(_eval(net, tr.images)).max()
        # observed: max change 1.3e-5 against logits up to 63 (seed 0); tolerance leaves ~50x headroom
        assert diff <= 1e-5 * scale


class TestFold:
    def test_same_eval_output_no_gates(self):
        net = build(lenet_spec((4, 5, 6, 3), conv_gate=PC, dense_gate=PU, input_shape=(1, 16, 16)), 0)
        rng = np.random.default_rng(0)
        for p in net.gates.values():
            p.k[:] = rng.uniform(0.2, 1.0, p.k.shape)
        folded = fold_gates(net)
        assert not folded.gates and all(l.gate is None for l in folded.spec.layers)
        x = rng.uniform(0, 1, (5, 1, 16, 16))
        np.testing.assert_allclose(_eval(folded, x), _eval(net, x), rtol=1e-12, atol=1e-12)
