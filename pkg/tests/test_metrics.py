import numpy as np
import pytest

import oracles
from segreid.metrics import (
    average_precision,
    evaluate,
    pairwise_distances,
    rank_gallery,
    read_results,
    write_ranked_lists,
    write_results,
)
from segreid.rng import make_rng
from segreid.tensor import ContractError

# (query feature, gallery features, gallery labels, gallery cams, expected AP, expected first hit)
FIXTURES = [
    # ranks: id1, id2, id1 -> AP = (1/1 + 2/3) / 2
    ([[0.0]], [[1.0], [2.0], [3.0]], [1, 2, 1], [1, 1, 1], (1 / 1 + 2 / 3) / 2, 0),
    # same-camera positive at distance 0 is dropped; ranks: id2, id1 -> AP = 1/2
    ([[0.0]], [[0.0], [1.0], [2.0]], [1, 2, 1], [0, 1, 1], 1 / 2, 1),
    # tie at distance 1 broken by gallery index: id3 (idx 0) before id1 (idx 1)
    ([[0.0]], [[1.0], [-1.0], [2.0], [-2.0]], [3, 1, 1, 3], [1, 1, 1, 1], (1 / 2 + 2 / 3) / 2, 1),
]


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision([1, 1, 0, 0]) == 1.0

    def test_last(self):
        assert average_precision([0, 0, 0, 1]) == 0.25

    def test_no_relevant(self):
        with pytest.raises(ContractError):
            average_precision([0, 0])


class TestFixtures:
    @pytest.mark.parametrize("case", range(len(FIXTURES)))
    def test_hand_worked(self, case):
        q, g, gl, gc, ap, first = FIXTURES[case]
        res = evaluate(np.array(q), np.array(g), [1], gl, [0], gc)
        assert res.mAP == ap
        assert res.cmc[1] == float(first < 1)
        assert res.cmc[5] == 1.0

    def test_tie_break_order(self):
        q, g, gl, gc, *_ = FIXTURES[2]
        res = evaluate(np.array(q), np.array(g), [1], gl, [0], gc)
        np.testing.assert_array_equal(res.ranked[0], [0, 1, 2, 3])

    def test_missing_positive(self):
        with pytest.raises(ContractError):
            evaluate(np.zeros((1, 1)), np.ones((2, 1)), [1], [1, 2], [0], [0, 1])


class TestRandomGalleries:
    def test_matches_brute_force(self):
        rng = make_rng(0)
        for _ in range(20):
            q, g, ql, gl, qc, gc = random_gallery(rng)
            res = evaluate(q, g, ql, gl, qc, gc)
            m, cmc = oracles.retrieval(q, g, ql, gl, qc, gc)
            assert res.mAP == m
            assert res.cmc == cmc

    def test_cmc_monotone_and_bounded(self):
        rng = make_rng(1)
        for _ in range(20):
            res = evaluate(*random_gallery(rng))
            curve = res.cmc_curve()
            assert (np.diff(curve) >= 0).all()
            assert curve[-1] == 1.0
            assert 0.0 <= res.mAP <= 1.0
            assert res.cmc[1] == curve[0]

    def test_query_order_does_not_matter(self):
        q, g, ql, gl, qc, gc = random_gallery(make_rng(2))
        perm = make_rng(3).permutation(len(ql))
        a = evaluate(q, g, ql, gl, qc, gc)
        b = evaluate(q[perm], g, ql[perm], gl, qc[perm], gc)
        assert a.mAP == b.mAP and a.cmc == b.cmc


def random_gallery(rng, n_ids=4, n_query=6, n_gallery=14):
    """Integer features so distances (and their ties) are exact."""
    ql = rng.integers(0, n_ids, size=n_query)
    gl = np.concatenate([ql, rng.integers(0, n_ids, size=n_gallery - n_query)])
    qc = rng.integers(0, 2, size=n_query)
    gc = np.concatenate([1 - qc, rng.integers(0, 2, size=n_gallery - n_query)])
    q = rng.integers(-3, 4, size=(n_query, 3)).astype(float)
    g = rng.integers(-3, 4, size=(n_gallery, 3)).astype(float)
    return q, g, ql, gl, qc, gc


class TestDistances:
    def test_euclidean(self):
        d = pairwise_distances(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(d, [[5.0, 1.0]])

    def test_cosine(self):
        d = pairwise_distances(np.array([[1.0, 0.0]]), np.array([[2.0, 0.0], [0.0, 1.0]]), "cosine")
        np.testing.assert_allclose(d, [[0.0, 1.0]], atol=1e-15)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            pairwise_distances(np.ones((1, 2)), np.ones((1, 3)))

    def test_rank_gallery_respects_keep(self):
        order = rank_gallery(np.array([0.5, 0.1, 0.1, 0.2]), np.array([True, True, False, True]))
        np.testing.assert_array_equal(order, [1, 3, 0])


class TestFiles:
    def test_results_round_trip(self, tmp_path):
        res = evaluate(*random_gallery(make_rng(4)))
        write_results(res, tmp_path / "r.txt", {"feature": "U"})
        values = read_results(tmp_path / "r.txt")
        assert float(values["mAP"]) == pytest.approx(res.mAP, abs=1e-6)
        assert values["feature"] == "U"
        assert set(values) == {"mAP", "CMC@1", "CMC@5", "CMC@10", "feature"}

    def test_ranked_lists(self, tmp_path):
        q, g, ql, gl, qc, gc = random_gallery(make_rng(5))
        res = evaluate(q, g, ql, gl, qc, gc)
        write_ranked_lists(res, tmp_path / "ranked.tsv", np.arange(100, 106), np.arange(14))
        lines = (tmp_path / "ranked.tsv").read_text().splitlines()
        assert len(lines) == 6
        qid, ids = lines[0].split("\t")
        assert qid == "100"
        assert [int(x) for x in ids.split()] == res.ranked[0].tolist()
