import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segreid.masks import GeometryError, interaction_mask, patchify_mask, perturb
from segreid.rng import make_rng


class TestPatchifyMask:
    def test_top_left_patch(self):
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[:4, :4] = 1
        np.testing.assert_array_equal(patchify_mask(mask, 4), [1, 1, 0, 0, 0])

    def test_row_major_order(self):
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[:4, 4:] = 1
        np.testing.assert_array_equal(patchify_mask(mask, 4), [1, 0, 1, 0, 0])

    def test_fraction_at_threshold_counts(self):
        mask = np.zeros((4, 4), dtype=np.uint8)
        mask[:2, :] = 1
        assert patchify_mask(mask, 4, rho=0.5)[1] == 1
        assert patchify_mask(mask, 4, rho=0.51)[1] == 0

    def test_empty_mask_keeps_class_token(self):
        np.testing.assert_array_equal(patchify_mask(np.zeros((8, 8)), 4), [1, 0, 0, 0, 0])

    def test_indivisible_geometry(self):
        with pytest.raises(GeometryError):
            patchify_mask(np.zeros((8, 6)), 4)

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            patchify_mask(np.full((4, 4), 2), 4)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.uint8, (8, 8), elements=st.integers(0, 1)))
    def test_length_and_binary(self, mask):
        m = patchify_mask(mask, 2)
        assert m.shape == (17,) and m[0] == 1 and set(m.tolist()) <= {0, 1}


class TestPerturb:
    def test_zero_probability_is_identity(self):
        m = np.array([1, 0, 1, 0, 0], dtype=np.uint8)
        np.testing.assert_array_equal(perturb(m, 0.0, make_rng(0)), m)

    def test_full_probability_all_foreground(self):
        m = np.array([1, 0, 0, 1], dtype=np.uint8)
        np.testing.assert_array_equal(perturb(m, 1.0, make_rng(0)), np.ones(4))

    def test_flip_rate(self):
        m = np.zeros(20001, dtype=np.uint8)
        rate = perturb(m, 0.3, make_rng(1))[1:].mean()
        assert abs(rate - 0.3) < 0.015

    def test_bad_probability(self):
        with pytest.raises(ValueError):
            perturb(np.ones(3), 1.5, make_rng(0))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(1, 4), st.integers(2, 12)), elements=st.integers(0, 1)),
           st.floats(0, 1), st.integers(0, 2**32))
    def test_foreground_only_grows(self, m, p, seed):
        out = perturb(m, p, make_rng(seed))
        assert (out >= m).all()
        assert (out[..., 0] == 1).all()


class TestInteractionMask:
    def test_outer_product(self):
        r = interaction_mask(np.array([1, 0, 1]))
        np.testing.assert_array_equal(r, [[1, 0, 1], [0, 0, 0], [1, 0, 1]])

    def test_batched_is_symmetric(self):
        m = make_rng(3).integers(0, 2, size=(5, 7))
        r = interaction_mask(m)
        assert r.shape == (5, 7, 7)
        np.testing.assert_array_equal(r, np.swapaxes(r, -1, -2))
