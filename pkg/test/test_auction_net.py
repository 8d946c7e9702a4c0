"""
拍卖网络测试: sparsemax 闭式解、hard_sigmoid、前向计算性质与梯度
"""

import os
import sys
import unittest
from dataclasses import replace

import numpy as np
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from auction.config.unified_config import AuctionConfig
from auction.models.auction_net import (
    AuctionModule, AuctionNet, DenseLayer, OutcomeAdjoints, as_bids_tensor, forward, gradients, hard_sigmoid,
    init_net, loss_gradients, sparsemax, sparsemax_jacobian, sparsemax_support, sparsemax_threshold,
    utility, zero_net,
)
from auction.exceptions import InvalidConfigurationError, ShapeMismatchError


def bisection_sparsemax(x: np.ndarray, iterations: int = 200) -> np.ndarray:
    """独立参照: 对阈值 tau 二分求解 Σ max(x − tau, 0) = 1"""
    lo = x.max(axis=-1, keepdims=True) - 1.0
    hi = x.max(axis=-1, keepdims=True)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        excess = np.maximum(x - mid, 0.0).sum(axis=-1, keepdims=True) - 1.0
        lo = np.where(excess > 0, mid, lo)
        hi = np.where(excess > 0, hi, mid)
    return np.maximum(x - 0.5 * (lo + hi), 0.0)


def kink_margin(net: AuctionNet, bids: np.ndarray) -> float:
    """到最近的不可微点（ReLU零点、sparsemax支撑集边界、hard_sigmoid断点）的距离"""
    cfg = net.config
    x = bids.reshape(-1)
    margins = []
    for layer in net.trunk:
        pre = layer.weights @ x + layer.biases
        margins.append(np.min(np.abs(pre)))
        x = np.maximum(pre, 0.0)
    scores = (net.allocation_head.weights @ x + net.allocation_head.biases).reshape(cfg.n_rows, cfg.n_items)
    for j in range(cfg.n_items):
        column = scores[:, j]
        margins.append(np.min(np.abs(column - sparsemax_threshold(column))))
    if cfg.ir_mode.value == "fractional":
        pre = net.payment_head.weights @ x + net.payment_head.biases
        margins.append(np.min(np.minimum(np.abs(pre - 2.0), np.abs(pre + 2.0))))
    return float(min(margins))


def perturbed(net: AuctionNet, layer_index: int, kind: str, index, delta: float) -> AuctionNet:
    layers = list(net.layers)
    layer = layers[layer_index]
    weights, biases = layer.weights.copy(), layer.biases.copy()
    if kind == "w":
        weights[index] += delta
    else:
        biases[index] += delta
    layers[layer_index] = DenseLayer(layer.name, weights, biases, layer.activation)
    return AuctionNet(net.config, tuple(layers[:-2]), layers[-2], layers[-1], net.clip_payments)


class TestSparsemax(unittest.TestCase):

    def test_matches_bisection_oracle(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for dim in range(2, 9):
            x = rng.normal(scale=2.0, size=(10000 // 7 + 1, dim))
            worst = max(worst, float(np.abs(sparsemax(x) - bisection_sparsemax(x)).max()))
        self.assertLessEqual(worst, 1e-6)

    def test_output_on_simplex(self):
        x = np.random.default_rng(1).normal(size=(500, 5))
        z = sparsemax(x)
        self.assertTrue(np.all(z >= 0.0))
        np.testing.assert_allclose(z.sum(axis=-1), 1.0, atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(scale=2.0, size=(1000, 4))
        shift = rng.uniform(-10.0, 10.0, size=(1000, 1))
        np.testing.assert_allclose(sparsemax(x + shift), sparsemax(x), atol=1e-10)

    def test_known_values(self):
        np.testing.assert_allclose(sparsemax([1.5, 0.3]), [1.0, 0.0])
        np.testing.assert_allclose(sparsemax([0.5, 0.5]), [0.5, 0.5])
        np.testing.assert_allclose(sparsemax([0.2, 0.1, -3.0]), [0.55, 0.45, 0.0])
        self.assertAlmostEqual(sparsemax_threshold([1.5, 0.3]), 0.5)

    def test_ties_count_in_support(self):
        # 阈值恰好落在坐标上时该坐标计入支撑集
        support = sparsemax_support([1.0, 0.0])
        self.assertTrue(support[0])
        self.assertTrue(support[1])

    def test_jacobian(self):
        jac = sparsemax_jacobian([0.2, 0.1, -3.0])
        expected = np.zeros((3, 3))
        expected[:2, :2] = np.eye(2) - 0.5
        np.testing.assert_allclose(jac, expected)

    def test_autograd_matches_jacobian(self):
        from auction.models.auction_net import sparsemax_tensor
        x = torch.tensor([0.3, 0.1, 0.25, -1.0], dtype=torch.float64, requires_grad=True)
        g = torch.tensor([1.0, -2.0, 0.5, 3.0], dtype=torch.float64)
        grad, = torch.autograd.grad((sparsemax_tensor(x) * g).sum(), x)
        np.testing.assert_allclose(grad.numpy(), sparsemax_jacobian(x.detach().numpy()).T @ g.numpy(), atol=1e-12)


class TestHardSigmoid(unittest.TestCase):

    def test_values(self):
        self.assertEqual(hard_sigmoid(-3.0), 0.0)
        self.assertEqual(hard_sigmoid(0.0), 0.5)
        self.assertEqual(hard_sigmoid(1.0), 0.75)
        self.assertEqual(hard_sigmoid(2.0), 1.0)
        self.assertEqual(hard_sigmoid(7.0), 1.0)


class TestForward(unittest.TestCase):

    def setUp(self):
        self.config = AuctionConfig(n_agents=2, n_items=3, trunk_widths=[8, 8])
        self.net = init_net(self.config, seed=3)
        self.bids = np.random.default_rng(4).random((50, 2, 3))

    def test_allocation_feasible(self):
        out = forward(self.net, self.bids)
        self.assertEqual(out.allocation.shape, (50, 2, 3))
        self.assertEqual(out.full_allocation.shape, (50, 3, 3))
        self.assertTrue(np.all(out.allocation >= 0.0))
        np.testing.assert_allclose(out.full_allocation.sum(axis=-2), 1.0, atol=1e-12)
        self.assertTrue(np.all(out.allocation.sum(axis=-2) <= 1.0 + 1e-12))

    def test_fractional_payment_individually_rational(self):
        out = forward(self.net, self.bids)
        value = (out.allocation * self.bids).sum(axis=-1)
        self.assertTrue(np.all(out.frac_payment >= 0.0) and np.all(out.frac_payment <= 1.0))
        self.assertTrue(np.all(out.payment <= value + 1e-12))
        np.testing.assert_allclose(out.utility, value - out.payment)

    def test_single_profile_matches_batch(self):
        batch = forward(self.net, self.bids)
        single = forward(self.net, self.bids[7])
        np.testing.assert_allclose(single.payment, batch.payment[7], rtol=1e-12)
        self.assertAlmostEqual(utility(single, self.bids[7], 1), batch.utility[7, 1], places=12)

    def test_zero_net_is_constant_mechanism(self):
        net = zero_net(AuctionConfig(n_agents=1, n_items=2, trunk_widths=[4]))
        bids = np.array([[0.4, 0.8]])
        out = forward(net, bids)
        np.testing.assert_allclose(out.allocation, [[0.5, 0.5]])
        np.testing.assert_allclose(out.payment, [0.5 * 0.5 * 1.2])

    def test_clipped_payments_within_value(self):
        config = AuctionConfig(n_agents=2, n_items=2, trunk_widths=[6], ir_mode="penalty_free")
        net = replace(init_net(config, seed=5), clip_payments=True)
        bids = np.random.default_rng(6).random((200, 2, 2))
        out = forward(net, bids)
        value = (out.allocation * bids).sum(axis=-1)
        self.assertTrue(np.all(out.payment >= 0.0))
        self.assertTrue(np.all(out.payment <= value + 1e-15))

    def test_clip_flag_rejected_for_fractional(self):
        with self.assertRaises(InvalidConfigurationError):
            replace(self.net, clip_payments=True)

    def test_bad_bid_shape(self):
        with self.assertRaises(ShapeMismatchError):
            forward(self.net, np.zeros((3, 2)))

    def test_utility_agent_range(self):
        out = forward(self.net, self.bids[0])
        with self.assertRaises(ShapeMismatchError):
            utility(out, self.bids[0], 2)

    def test_module_round_trip(self):
        module = AuctionModule.from_net(self.net)
        again = module.freeze()
        for a, b in zip(self.net.layers, again.layers):
            np.testing.assert_array_equal(a.weights, b.weights)
            np.testing.assert_array_equal(a.biases, b.biases)

    def test_layer_rejects_non_finite(self):
        with self.assertRaises(InvalidConfigurationError):
            DenseLayer("bad", [[np.inf]], [0.0], "relu")

    def test_bids_tensor_conversion(self):
        source = torch.tensor([[0.25, 0.5]], dtype=torch.float32)
        tensor = as_bids_tensor(source, requires_grad=True)
        self.assertEqual(tensor.dtype, torch.float64)
        self.assertTrue(tensor.requires_grad)
        self.assertFalse(source.requires_grad)
        self.assertFalse(as_bids_tensor(source).requires_grad)
        self.assertTrue(as_bids_tensor(np.array([[0.1, 0.2]]), requires_grad=True).requires_grad)
        tracked = torch.zeros(1, 2, dtype=torch.float64, requires_grad=True)
        self.assertIs(as_bids_tensor(tracked, requires_grad=True), tracked)


class TestGradients(unittest.TestCase):
    """反向模式梯度与中心差分比较（只取远离不可微点的样本）"""

    STEP = 1e-6

    @staticmethod
    def _loss_value(net, bids, ca, cp):
        out = forward(net, bids)
        return float((out.allocation * ca).sum() + (out.payment * cp).sum())

    def _check(self, config: AuctionConfig, seed: int, points: int):
        rng = np.random.default_rng(seed)
        net = init_net(config, seed=seed)
        shape = (config.n_agents, config.n_items)
        ca, cp = rng.normal(size=shape), rng.normal(size=config.n_agents)
        loss_fn = lambda out: (out.allocation * torch.from_numpy(ca)).sum() + (out.payment * torch.from_numpy(cp)).sum()

        checked = 0
        for _ in range(50 * points):
            if checked == points:
                break
            bids = rng.random(shape)
            if kink_margin(net, bids) < 1e-3:
                continue
            checked += 1
            grads = loss_gradients(net, bids, loss_fn)

            for i in range(shape[0]):
                for j in range(shape[1]):
                    up, down = bids.copy(), bids.copy()
                    up[i, j] += self.STEP
                    down[i, j] -= self.STEP
                    fd = (self._loss_value(net, up, ca, cp) - self._loss_value(net, down, ca, cp)) / (2 * self.STEP)
                    self.assertLessEqual(abs(grads.bids[i, j] - fd), 1e-4 * max(1.0, abs(fd)))

            for _ in range(4):
                li = int(rng.integers(len(net.layers)))
                layer = net.layers[li]
                if rng.random() < 0.7:
                    index = (int(rng.integers(layer.out_dim)), int(rng.integers(layer.in_dim)))
                    kind, analytic = "w", grads.weights[li][index]
                else:
                    index = int(rng.integers(layer.out_dim))
                    kind, analytic = "b", grads.biases[li][index]
                fd = (self._loss_value(perturbed(net, li, kind, index, self.STEP), bids, ca, cp)
                      - self._loss_value(perturbed(net, li, kind, index, -self.STEP), bids, ca, cp)) / (2 * self.STEP)
                self.assertLessEqual(abs(analytic - fd), 1e-4 * max(1.0, abs(fd)))
        self.assertEqual(checked, points)

    def test_fractional_network(self):
        self._check(AuctionConfig(n_agents=2, n_items=2, trunk_widths=[6, 6]), seed=11, points=50)

    def test_penalty_free_network(self):
        self._check(AuctionConfig(n_agents=1, n_items=3, trunk_widths=[6], ir_mode="penalty_free"), seed=12, points=50)

    def test_adjoints_match_loss_gradients(self):
        config = AuctionConfig(n_agents=2, n_items=2, trunk_widths=[5])
        net = init_net(config, seed=2)
        bids = np.random.default_rng(2).random((2, 2))
        adj_u = np.array([1.0, -0.5])
        via_adjoints = gradients(net, bids, OutcomeAdjoints(utility=adj_u))
        direct = loss_gradients(net, bids, lambda out: (out.utility * torch.from_numpy(adj_u)).sum())
        np.testing.assert_allclose(via_adjoints.bids, direct.bids)
        for a, b in zip(via_adjoints.weights, direct.weights):
            np.testing.assert_allclose(a, b)

    def test_frac_adjoint_rejected_in_penalty_free(self):
        net = init_net(AuctionConfig(n_agents=1, n_items=2, trunk_widths=[3], ir_mode="penalty_free"), seed=0)
        with self.assertRaises(InvalidConfigurationError):
            gradients(net, np.full((1, 2), 0.5), OutcomeAdjoints(frac_payment=[1.0]))


if __name__ == "__main__":
    unittest.main()
