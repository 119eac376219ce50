import json

import numpy as np
import pytest

from segreid.data import (
    GENERATOR_VERSION,
    check_manifest,
    generate_dataset,
    load_dataset,
    prototypes,
    split_of,
    text_embed_surrogate,
)
from segreid.rng import make_rng, restore_rng, rng_state


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    generate_dataset(root, num_ids=3, per_id=8, image_size=16, clutter=0.5, seed=4, text_dim=8)
    return root


class TestGenerator:
    def test_manifest(self, small):
        man = json.loads((small / "manifest.json").read_text())
        assert man["version"] == GENERATOR_VERSION
        assert len(man["samples"]) == 24
        assert man["samples"][5] == {**man["samples"][5], "identity": 0, "camera": 1}

    def test_shapes_and_dtypes(self, small):
        ds = load_dataset(small)
        assert ds.images["rgb"].shape == (24, 3, 16, 16) and ds.images["tir"].dtype == np.float32
        assert ds.masks.shape == (24, 16, 16) and ds.masks.dtype == np.uint8
        assert ds.text.shape == (24, 8)
        np.testing.assert_allclose(np.linalg.norm(ds.text, axis=1), 1.0, atol=1e-6)

    def test_mask_marks_the_blob(self, small):
        ds = load_dataset(small)
        assert (ds.masks.sum(axis=(1, 2)) == 64).all()

    def test_splits_disjoint_and_covering(self, small):
        ds = load_dataset(small)
        q, g = ds.indices("query"), ds.indices("gallery")
        assert not set(q) & set(g)
        assert set(ds.labels[q]) <= set(ds.labels[g])
        assert len(ds.indices("train")) == 12

    def test_deterministic(self, tmp_path):
        a = generate_dataset(tmp_path / "a", num_ids=2, per_id=4, image_size=8, seed=9, text_dim=4)
        b = generate_dataset(tmp_path / "b", num_ids=2, per_id=4, image_size=8, seed=9, text_dim=4)
        assert a == b
        for s in a["samples"]:
            assert (tmp_path / "a" / s["rgb"]).read_bytes() == (tmp_path / "b" / s["rgb"]).read_bytes()

    def test_seed_changes_data(self, tmp_path):
        generate_dataset(tmp_path / "a", num_ids=2, per_id=4, image_size=8, seed=1, text_dim=4)
        generate_dataset(tmp_path / "b", num_ids=2, per_id=4, image_size=8, seed=2, text_dim=4)
        a, b = load_dataset(tmp_path / "a"), load_dataset(tmp_path / "b")
        assert not np.array_equal(a.images["rgb"], b.images["rgb"])

    def test_clutter_scales_background(self, tmp_path):
        for c in (0.0, 0.8):
            generate_dataset(tmp_path / str(c), num_ids=2, per_id=4, image_size=16, clutter=c, seed=0, text_dim=4)
        quiet, noisy = load_dataset(tmp_path / "0.0"), load_dataset(tmp_path / "0.8")
        bg = quiet.masks[:, None] == 0
        assert np.abs(quiet.images["rgb"][np.broadcast_to(bg, quiet.images["rgb"].shape)]).max() == 0
        assert noisy.images["rgb"][np.broadcast_to(bg, noisy.images["rgb"].shape)].std() > 0.6

    @pytest.mark.parametrize("kw", [dict(num_ids=1), dict(per_id=2), dict(image_size=12),
                                    dict(clutter=1.5)])
    def test_bad_arguments(self, tmp_path, kw):
        with pytest.raises(ValueError):
            generate_dataset(tmp_path, **{**dict(num_ids=2, per_id=4, image_size=8), **kw})

    def test_manifest_overlap_rejected(self):
        samples = [{"index": 0, "identity": 0, "split": "query"},
                   {"index": 0, "identity": 0, "split": "gallery"}]
        with pytest.raises(ValueError):
            check_manifest({"samples": samples})


class TestPieces:
    def test_split_counts(self):
        splits = [split_of(j, 16) for j in range(16)]
        assert splits.count("train") == 8 and splits.count("query") == 2 and splits.count("gallery") == 6

    def test_prototype_range(self):
        p = prototypes(0, 5, 32)
        assert p["rgb"].shape == (5, 3, 16, 16)
        assert p["nir"].min() > 1 - 0.8 - 1e-12 and p["nir"].max() < 1 + 0.8 + 1e-12

    def test_identities_differ_across_modalities(self):
        p = prototypes(0, 2, 16)
        assert not np.allclose(p["rgb"][0], p["rgb"][1])
        assert not np.allclose(p["rgb"][0], p["tir"][0])

    def test_text_clean_vector(self):
        a = text_embed_surrogate(3, 0, 16)
        np.testing.assert_array_equal(a, text_embed_surrogate(3, 0, 16))
        assert np.linalg.norm(a) == pytest.approx(1.0)
        assert not np.allclose(a, text_embed_surrogate(4, 0, 16))

    def test_text_noise_needs_rng(self):
        with pytest.raises(ValueError):
            text_embed_surrogate(0, 0, 8, noise=0.1)


class TestRng:
    def test_streams_independent(self):
        assert make_rng(0, 1).random() != make_rng(0, 2).random()

    def test_state_round_trip(self):
        rng = make_rng(5, 3)
        rng.random(7)
        snap = json.loads(json.dumps(rng_state(rng)))
        np.testing.assert_array_equal(restore_rng(snap).random(5), rng.random(5))
