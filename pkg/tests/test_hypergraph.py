import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from segreid import tensor as T
from segreid.gradcheck import finite_diff_check
from segreid.hypergraph import (
    GlobalFusion,
    HypergraphConv,
    HypergraphInteraction,
    build_hyperedges,
    concat_modalities,
)
from segreid.rng import make_rng
from segreid.tensor import ContractError, NumericError, Tensor


def zero_chi(chi):
    for p in chi.parameters().values():
        p.data[...] = 0.0


class TestBuildHyperedges:
    def test_hand_example(self):
        h = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
        s = build_hyperedges(h, tau=0.5)
        assert s.hyperedges() == [{0, 1}, {0, 1}, {2}]

    def test_every_node_in_own_edge(self):
        h = make_rng(0).normal(size=(12, 5))
        s = build_hyperedges(h, tau=1.0 - 1e-9)
        assert all(i in e for i, e in enumerate(s.hyperedges()))

    def test_tau_minus_one_connects_everything(self):
        s = build_hyperedges(make_rng(1).normal(size=(6, 3)), tau=-1.0)
        assert s.membership.all()

    def test_zero_norm_token(self):
        h = np.ones((3, 4))
        h[1] = 0
        with pytest.raises(NumericError):
            build_hyperedges(h, 0.5)

    def test_tau_range(self):
        with pytest.raises(ValueError):
            build_hyperedges(np.ones((2, 2)), 1.5)

    def test_matches_threshold_oracle(self):
        rng = make_rng(2)
        for _ in range(20):
            h = rng.normal(size=(9, 4))
            tau = rng.uniform(-0.5, 0.8)
            assert build_hyperedges(h, tau).hyperedges() == oracles.hyperedges(h, tau)

    def test_batched(self):
        h = make_rng(3).normal(size=(2, 5, 4))
        s = build_hyperedges(h, 0.2)
        assert s.membership.shape == (2, 5, 5)
        assert s.hyperedges(1) == build_hyperedges(h[1], 0.2).hyperedges()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(-0.9, 0.9))
def test_membership_symmetric(seed, tau):
    s = build_hyperedges(make_rng(seed).normal(size=(8, 3)), tau)
    np.testing.assert_array_equal(s.membership, s.membership.T)


class TestHypergraphConv:
    def test_matches_loop_oracle(self):
        rng = make_rng(4)
        for _ in range(10):
            h = rng.normal(size=(15, 6))
            conv = HypergraphConv(15, 6)
            conv.edge_weight.data[...] = rng.normal(size=15)
            conv.node_bias.data[...] = rng.normal(size=(15, 6))
            s = build_hyperedges(h, 0.1)
            ours = conv(Tensor(h), s).data
            ref = oracles.hypergraph_conv(h, s.hyperedges(), conv.edge_weight.data, conv.node_bias.data)
            assert np.abs(ours - ref).max() < 1e-10

    def test_zero_parameters_are_identity(self):
        h = make_rng(5).normal(size=(2, 6, 4))
        conv = HypergraphConv(6, 4)
        conv.edge_weight.data[...] = 0.0
        out = conv(Tensor(h), build_hyperedges(h, 0.0))
        np.testing.assert_array_equal(out.data, h)

    def test_batched_matches_per_sample(self):
        rng = make_rng(6)
        h = rng.normal(size=(3, 6, 4))
        conv = HypergraphConv(6, 4)
        conv.node_bias.data[...] = rng.normal(size=(6, 4))
        s = build_hyperedges(h, 0.3)
        batched = conv(Tensor(h), s).data
        for b in range(3):
            single = conv(Tensor(h[b]), build_hyperedges(h[b], 0.3)).data
            np.testing.assert_allclose(batched[b], single, atol=1e-13)

    def test_empty_hyperedge_rejected(self):
        conv = HypergraphConv(2, 3)
        s = build_hyperedges(np.eye(2, 3), 0.5)
        s.membership[1] = False
        with pytest.raises(ContractError):
            conv(Tensor(np.eye(2, 3)), s)

    def test_node_count_mismatch(self):
        conv = HypergraphConv(4, 3)
        h = np.ones((5, 3))
        with pytest.raises(T.DimensionError):
            conv(Tensor(h), build_hyperedges(h, 0.5))

    def test_gradients_with_structure_fixed(self):
        rng = make_rng(7)
        h = Tensor(rng.normal(size=(2, 6, 4)), requires_grad=True)
        conv = HypergraphConv(6, 4)
        conv.node_bias.data[...] = rng.normal(size=(6, 4))
        s = build_hyperedges(h, 0.2)
        probe = Tensor(rng.normal(size=(2, 6, 4)))
        params = {"h": h, **conv.parameters()}
        report = finite_diff_check(lambda: T.sum_(T.mul(conv(h, s), probe)), params)
        assert report.passed, report.lines()


class TestInteraction:
    def test_concat_order(self):
        a, b, c = (Tensor(np.full((1, 2, 3), v)) for v in (1.0, 2.0, 3.0))
        out = concat_modalities(a, b, c).data
        np.testing.assert_array_equal(out[0, :, 0], [1, 1, 2, 2, 3, 3])

    def test_concat_shape_mismatch(self):
        with pytest.raises(T.DimensionError):
            concat_modalities(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))))

    @pytest.mark.parametrize("k", [0, 1, 4, 8])
    def test_shapes(self, k):
        n = 3 * (k + 1)
        chi = HypergraphInteraction(8, 2, n, make_rng(8))
        rng = make_rng(9)
        h_prime, u = chi(Tensor(rng.normal(size=(2, n, 8))), Tensor(rng.normal(size=(2, 3, 8))))
        assert h_prime.shape == (2, n, 8)
        assert u.shape == (2, 3, 8)

    def test_zero_parameters_reduce_to_identity(self):
        chi = HypergraphInteraction(8, 2, 9, make_rng(10), depth=2)
        zero_chi(chi)
        rng = make_rng(11)
        h, g = rng.normal(size=(3, 9, 8)), rng.normal(size=(3, 3, 8))
        h_prime, u = chi(Tensor(h), Tensor(g))
        np.testing.assert_array_equal(h_prime.data, h)
        np.testing.assert_array_equal(u.data, g)

    def test_structure_rebuilt_per_step(self):
        chi = HypergraphInteraction(4, 2, 6, make_rng(12), depth=2, tau=0.3)
        chi(Tensor(make_rng(13).normal(size=(1, 6, 4))), Tensor(np.ones((1, 3, 4))))
        assert len(chi.structures) == 2

    def test_fusion_width_check(self):
        fuse = GlobalFusion(8, 2, make_rng(0))
        with pytest.raises(T.DimensionError):
            fuse(Tensor(np.ones((3, 8))), Tensor(np.ones((6, 4))))
