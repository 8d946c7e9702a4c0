"""
认证测试: sparsemax KKT 编码、分支定界与按区域枚举的精确解对照、蒙特卡洛可靠性、批量认证
"""

import dataclasses
import itertools
import os
import sys
import unittest

import numpy as np
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from auction.config.unified_config import AuctionConfig, CertifyConfig
from auction.models.auction_net import forward, init_net, utility, zero_net
from auction.verification.bounds import compute_bounds
from auction.verification.branch_and_bound import BabStatus, branch_and_bound, mccormick_rows, select_branch
from auction.verification.certifier import (
    CERTIFICATE_COLUMNS, certificates_frame, certify_batch, certify_regret, misreport_box, with_bid,
)
from auction.verification.lp import Relation
from auction.verification.mip import MipBuilder, encode
from auction.exceptions import NotEncodableError, ShapeMismatchError, UnboundedNeuronError

# 测试里不需要经验遗憾和残差复核的快速配置
FAST = dict(empirical_steps=0, residual_check=False)


def polygon_max(A, r, c, c0):
    """max c·b + c0, s.t. A b ≤ r（二维有界多边形），枚举两两直线交点；空集返回 -inf"""
    A, r = np.asarray(A, dtype=np.float64), np.asarray(r, dtype=np.float64)
    i, j = np.triu_indices(len(A), 1)
    det = A[i, 0] * A[j, 1] - A[i, 1] * A[j, 0]
    ok = np.abs(det) > 1e-12
    i, j, det = i[ok], j[ok], det[ok]
    points = np.stack([(r[i] * A[j, 1] - r[j] * A[i, 1]) / det,
                       (A[i, 0] * r[j] - A[j, 0] * r[i]) / det], axis=1)
    feasible = np.all(points @ A.T <= r + 1e-9, axis=1)
    if not feasible.any():
        return -np.inf
    return float(np.max(points[feasible] @ c) + c0)


def region_oracle(net, valuation) -> float:
    """单买家两物品、单隐层、不裁剪的 penalty_free 网络：
    枚举 ReLU 激活模式 × 每列 sparsemax 支撑集，每个区域内效用是出价的仿射函数"""
    k = 2
    W1, b1 = net.trunk[0].weights, net.trunk[0].biases
    Wa, ba = net.allocation_head.weights, net.allocation_head.biases
    Wp, bp = net.payment_head.weights[0], net.payment_head.biases[0]
    box = [([-1.0, 0.0], 0.0), ([0.0, -1.0], 0.0), ([1.0, 0.0], 1.0), ([0.0, 1.0], 1.0)]

    best = -np.inf
    for mask in itertools.product([0.0, 1.0], repeat=W1.shape[0]):
        m = np.asarray(mask)
        sign = np.where(m == 1.0, -1.0, 1.0)
        rows = box + [(sign[i] * W1[i], -sign[i] * b1[i]) for i in range(len(m))]
        H, h0 = m[:, None] * W1, m * b1
        S, s0 = Wa @ H, Wa @ h0 + ba
        options = []
        for j in range(k):
            # d = s_0j − s_1j（买家行减虚拟行）
            d, d0 = S[j] - S[k + j], s0[j] - s0[k + j]
            options.append([
                (np.zeros(2), 1.0, [(-d, d0 - 1.0)]),
                (np.zeros(2), 0.0, [(d, -1.0 - d0)]),
                (d / 2.0, (d0 + 1.0) / 2.0, [(d, 1.0 - d0), (-d, 1.0 + d0)]),
            ])
        for choice in itertools.product(*options):
            c, c0 = -(Wp @ H), -(Wp @ h0 + bp)
            region = list(rows)
            for j, (zc, z0, cons) in enumerate(choice):
                c = c + valuation[j] * zc
                c0 = c0 + valuation[j] * z0
                region.extend(cons)
            best = max(best, polygon_max([a for a, _ in region], [b for _, b in region], c, c0))
    return best


def sampled_utilities(net, profile, agent, count=5000, seed=0):
    rng = np.random.default_rng(seed)
    bids = np.tile(profile, (count, 1, 1))
    bids[:, agent, :] = rng.random((count, profile.shape[1]))
    return utility(forward(net, bids), profile, agent)


class TestSparsemaxEncoding(unittest.TestCase):

    def solve_column(self, objective_sign, complementarity):
        builder = MipBuilder(complementarity=complementarity)
        s0 = builder.add_var("s[0]", 1.5, 1.5)
        s1 = builder.add_var("s[1]", 0.3, 0.3)
        scores = np.array([1.5, 0.3])
        z = builder.add_sparsemax_column([s0, s1], scores, scores, "sm")
        model = builder.build({z[1]: objective_sign})
        return z, branch_and_bound(model, tolerance=1e-9)

    def test_kkt_has_unique_solution(self):
        for mode in ("binary", "branch"):
            # z = [1, 0] 是唯一可行点：max z1 与 min z1 都等于 0
            z, high = self.solve_column(1.0, mode)
            _, low = self.solve_column(-1.0, mode)
            self.assertIs(high.status, BabStatus.OPTIMAL)
            self.assertAlmostEqual(high.upper_bound, 0.0, delta=1e-9)
            self.assertAlmostEqual(low.upper_bound, 0.0, delta=1e-9)
            np.testing.assert_allclose(high.incumbent_x[z], [1.0, 0.0], atol=1e-9)

    def test_infinite_bounds_rejected(self):
        builder = MipBuilder()
        with self.assertRaises(UnboundedNeuronError):
            builder.add_var("trunk_0.pre[3]", -np.inf, 1.0)

    def test_stable_relu_elided(self):
        builder = MipBuilder(elide_stable=True)
        pre = builder.add_var("pre", 0.5, 2.0)
        self.assertEqual(builder.add_relu(pre, 0.5, 2.0, "post"), pre)
        dead = builder.add_relu(builder.add_var("pre2", -2.0, -0.5), -2.0, -0.5, "post2")
        self.assertEqual((builder.lower[dead], builder.upper[dead]), (0.0, 0.0))
        self.assertEqual(builder.binaries, [])
        self.assertEqual(builder.stats["relu_stable"], 2)


class TestBranchingPrimitives(unittest.TestCase):

    def test_mccormick_envelope(self):
        lower, upper = np.array([0.0, 0.0, 0.0]), np.array([1.0, 2.0, 2.0])
        rows, relations, rhs = mccormick_rows([(2, 0, 1)], lower, upper, 3)

        def satisfied(point):
            lhs = rows @ point
            return all((lhs[i] >= rhs[i] - 1e-12) if rel is Relation.GE else (lhs[i] <= rhs[i] + 1e-12)
                       for i, rel in enumerate(relations))

        self.assertTrue(satisfied(np.array([1.0, 2.0, 2.0])))
        self.assertTrue(satisfied(np.array([0.5, 1.0, 0.5])))
        self.assertFalse(satisfied(np.array([1.0, 2.0, 1.5])))
        self.assertFalse(satisfied(np.array([0.0, 2.0, 0.5])))

    def test_branch_on_fractional_binary(self):
        builder = MipBuilder()
        pre = builder.add_var("pre", -1.0, 1.0)
        builder.add_relu(pre, -1.0, 1.0, "post")
        model = builder.build({})
        x = np.zeros(len(builder.names))
        delta = int(model.binaries[0])
        x[delta] = 0.5
        children = select_branch(model, x, model.lp.lower, model.lp.upper)
        self.assertEqual(len(children), 2)
        self.assertEqual(children[0][1][delta], 0.0)
        self.assertEqual(children[1][0][delta], 1.0)
        x[delta] = 1.0
        self.assertIsNone(select_branch(model, x, model.lp.lower, model.lp.upper))


class TestExactness(unittest.TestCase):

    def test_matches_region_enumeration(self):
        config = AuctionConfig(n_agents=1, n_items=2, trunk_widths=[6], ir_mode="penalty_free")
        certify = CertifyConfig(tolerance=1e-9, node_limit=100000, **FAST)
        rng = np.random.default_rng(3)
        for seed in range(20):
            net = init_net(config, seed=200 + seed)
            profile = rng.random((1, 2))
            expected = region_oracle(net, profile[0])
            bounds = compute_bounds(net, misreport_box(profile, 0), "planet")
            result = branch_and_bound(encode(net, profile, 0, bounds, certify), tolerance=1e-9, node_limit=100000)
            self.assertIs(result.status, BabStatus.OPTIMAL)
            self.assertAlmostEqual(result.upper_bound, expected, delta=1e-5, msg=f"seed {200 + seed}")
            # 上界不低于任何采样点
            self.assertGreaterEqual(result.upper_bound, float(np.max(sampled_utilities(net, profile, 0))) - 1e-9)

    def test_encoding_options_agree(self):
        config = AuctionConfig(n_agents=1, n_items=2, trunk_widths=[6], ir_mode="penalty_free")
        profile = np.array([[0.35, 0.7]])
        for seed in (300, 301, 302):
            net = init_net(config, seed=seed)
            values = [
                certify_regret(net, profile, 0, CertifyConfig(tolerance=1e-8, elide_stable=elide,
                                                              complementarity=mode, **FAST)).certified_max_utility
                for elide in (True, False) for mode in ("binary", "branch")
            ]
            np.testing.assert_allclose(values, values[0], atol=1e-6)

    def test_ibp_bounds_give_same_optimum(self):
        config = AuctionConfig(n_agents=1, n_items=2, trunk_widths=[6], ir_mode="penalty_free")
        net = init_net(config, seed=310)
        profile = np.array([[0.6, 0.2]])
        planet = certify_regret(net, profile, 0, CertifyConfig(tolerance=1e-8, **FAST))
        ibp = certify_regret(net, profile, 0, CertifyConfig(tolerance=1e-8, bound_method="ibp", **FAST))
        self.assertAlmostEqual(planet.certified_max_utility, ibp.certified_max_utility, delta=1e-6)
        self.assertLessEqual(planet.unstable_relus, ibp.unstable_relus)


class TestCertificates(unittest.TestCase):

    def test_zero_penalty_free_net_has_zero_regret(self):
        net = zero_net(AuctionConfig(n_agents=1, n_items=2, trunk_widths=[4], ir_mode="penalty_free"))
        cert = certify_regret(net, np.array([[0.4, 0.8]]), 0, CertifyConfig(tolerance=1e-8, **FAST))
        self.assertTrue(cert.complete)
        self.assertAlmostEqual(cert.certified_regret, 0.0, delta=1e-6)
        self.assertAlmostEqual(cert.truthful_utility, 0.6, places=12)

    def test_zero_fractional_net_regret(self):
        # 分配恒为0.5、支付 0.25·Σb：报 0 最优，遗憾 = 0.25·Σv
        net = zero_net(AuctionConfig(n_agents=1, n_items=2, trunk_widths=[4]))
        cert = certify_regret(net, np.array([[0.4, 0.8]]), 0, CertifyConfig(tolerance=1e-6, **FAST))
        self.assertAlmostEqual(cert.truthful_utility, 0.3, places=12)
        self.assertAlmostEqual(cert.certified_regret, 0.3, delta=1e-5)

    def test_fractional_bound_is_sound(self):
        config = AuctionConfig(n_agents=2, n_items=2, trunk_widths=[4])
        net = init_net(config, seed=400)
        profile = np.array([[0.3, 0.9], [0.7, 0.4]])
        for agent in range(2):
            cert = certify_regret(net, profile, agent, CertifyConfig(node_limit=300, **FAST))
            samples = sampled_utilities(net, profile, agent, seed=agent)
            self.assertLessEqual(float(np.max(samples)), cert.certified_max_utility + 1e-7)
            self.assertGreaterEqual(cert.certified_regret, 0.0)
            self.assertLessEqual(cert.incumbent_utility, cert.certified_max_utility + 1e-9)
            reached = utility(forward(net, with_bid(profile, agent, cert.incumbent_misreport)), profile, agent)
            self.assertAlmostEqual(reached, cert.incumbent_utility, delta=1e-9)

    def test_clipped_bound_is_sound(self):
        config = AuctionConfig(n_agents=1, n_items=2, trunk_widths=[6], ir_mode="penalty_free")
        net = dataclasses.replace(init_net(config, seed=410), clip_payments=True)
        profile = np.array([[0.5, 0.45]])
        cert = certify_regret(net, profile, 0, CertifyConfig(tolerance=1e-6, node_limit=3000, **FAST))
        samples = sampled_utilities(net, profile, 0)
        self.assertLessEqual(float(np.max(samples)), cert.certified_max_utility + 1e-7)
        self.assertAlmostEqual(cert.truthful_utility, utility(forward(net, profile), profile, 0), places=12)

    def test_consistency_residual(self):
        config = AuctionConfig(n_agents=1, n_items=2, trunk_widths=[6], ir_mode="penalty_free")
        for seed in (420, 421):
            cert = certify_regret(init_net(config, seed=seed), np.array([[0.25, 0.65]]), 0,
                                  CertifyConfig(tolerance=1e-6, empirical_steps=50))
            self.assertLessEqual(cert.consistency_residual, 1e-5)
            self.assertGreaterEqual(cert.certified_regret, cert.empirical_regret - 1e-6)

    def test_regretnet_head_not_encodable(self):
        net = init_net(AuctionConfig(n_agents=1, n_items=2, trunk_widths=[4], head_style="regretnet"), seed=0)
        with self.assertRaises(NotEncodableError):
            certify_regret(net, np.array([[0.5, 0.5]]), 0)

    def test_bad_arguments(self):
        net = zero_net(AuctionConfig(n_agents=1, n_items=2, trunk_widths=[4], ir_mode="penalty_free"))
        with self.assertRaises(ShapeMismatchError):
            certify_regret(net, np.array([[0.5, 0.5]]), 1)
        with self.assertRaises(ShapeMismatchError):
            certify_regret(net, np.array([0.5, 0.5, 0.5]), 0)


class TestBatchCertification(unittest.TestCase):

    def setUp(self):
        config = AuctionConfig(n_agents=2, n_items=2, trunk_widths=[4], ir_mode="penalty_free")
        self.net = init_net(config, seed=500)
        self.profiles = np.random.default_rng(5).random((2, 2, 2))
        self.config = CertifyConfig(tolerance=1e-6, node_limit=2000, **FAST)

    def test_order_and_ids(self):
        collected = []
        certs = certify_batch(self.net, self.profiles, config=self.config, profile_ids=[10, 11], results=collected)
        self.assertIs(certs, collected)
        self.assertEqual([(c.profile_id, c.agent) for c in certs], [(10, 0), (10, 1), (11, 0), (11, 1)])
        with self.assertRaises(ShapeMismatchError):
            certify_batch(self.net, self.profiles, config=self.config, profile_ids=[1])

    def test_deterministic_and_parallel_agree(self):
        first = certificates_frame(certify_batch(self.net, self.profiles, config=self.config))
        second = certificates_frame(certify_batch(self.net, self.profiles, config=self.config))
        self.assertTrue(first.drop(columns="seconds").equals(second.drop(columns="seconds")))
        parallel = certify_batch(self.net, self.profiles, config=dataclasses.replace(self.config, workers=2),
                                 deterministic=False)
        np.testing.assert_allclose([c.certified_max_utility for c in parallel],
                                   first["certified_max_utility"].to_numpy(), atol=1e-9)

    def test_parallel_run_restores_thread_count(self):
        original = torch.get_num_threads()
        try:
            torch.set_num_threads(3)
            certify_batch(self.net, self.profiles[0], config=dataclasses.replace(self.config, workers=2),
                          deterministic=False)
            self.assertEqual(torch.get_num_threads(), 3)
            with self.assertRaises(ShapeMismatchError):
                certify_batch(self.net, self.profiles[0], agents=[5],
                              config=dataclasses.replace(self.config, workers=2), deterministic=False)
            self.assertEqual(torch.get_num_threads(), 3)
        finally:
            torch.set_num_threads(original)

    def test_frame_columns(self):
        certs = certify_batch(self.net, self.profiles[0], agents=[1], config=self.config)
        frame = certificates_frame(certs)
        self.assertEqual(list(frame.columns), CERTIFICATE_COLUMNS)
        self.assertEqual(len(frame), 1)
        bid = np.array([float(v) for v in frame.loc[0, "truthful_bid"].split()])
        np.testing.assert_array_equal(bid, self.profiles[0][1])
        self.assertIn(frame.loc[0, "status"], ("optimal", "incomplete"))


if __name__ == "__main__":
    unittest.main()
