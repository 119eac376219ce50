import numpy as np
import pytest

from segreid import tensor as T
from segreid.checks import memoize_branches, micro_batch, pick_tau, run_grad_check, similarity_gap
from segreid.config import micro_config
from segreid.masks import GeometryError
from segreid.model import Batch, ReidModel
from segreid.reallocation import build_queries
from segreid.rng import make_rng
from segreid.tensor import Tensor


class TestShapes:
    @pytest.mark.parametrize("k", [0, 1, 4, 8])
    def test_contracts(self, k):
        cfg = micro_config(num_tokens=k)
        batch = micro_batch(cfg)
        model = ReidModel(cfg, 2)
        feats = model.forward(batch)
        b, d = len(batch), cfg.dim
        assert build_queries(model.realloc[0].queries, Tensor(batch.text)).shape == (b, k + 1, d)
        assert feats.H.shape == (b, 3 * (k + 1), d)
        assert feats.H_prime.shape == (b, 3 * (k + 1), d)
        assert feats.G.shape == (b, 3, d)
        assert feats.U.shape == (b, 3, d)

    def test_supervised_heads(self):
        cfg = micro_config()
        feats = ReidModel(cfg, 2).forward(micro_batch(cfg))
        sup = feats.supervised()
        assert {k: v.shape for k, v in sup.items()} == {"G": (4, 24), "U": (4, 24), "T": (4, 8)}

    def test_without_hypergraph(self):
        cfg = micro_config(chi_on=False)
        model = ReidModel(cfg, 2)
        feats = model.forward(micro_batch(cfg))
        assert feats.U is None and feats.H.shape == (4, 9, 8)
        np.testing.assert_array_equal(feats.retrieval(), feats.G.data.reshape(4, 24))
        assert "cls_U.weight" not in model.parameters()

    def test_baseline_has_no_modulation_or_tokens(self):
        cfg = micro_config(sfm_on=False, str_on=False, chi_on=False)
        model = ReidModel(cfg, 2)
        names = list(model.parameters())
        assert not any(n.endswith("alpha") or n.startswith("realloc") for n in names)
        assert model.forward(micro_batch(cfg)).H is None

    def test_geometry_checked(self):
        cfg = micro_config()
        batch = micro_batch(cfg)
        bad = Batch({m: v[:, :, :4, :4] for m, v in batch.images.items()}, batch.token_masks,
                    batch.text, batch.labels)
        with pytest.raises(GeometryError):
            ReidModel(cfg, 2).forward(bad)


class TestPerturbation:
    def test_eval_mode_is_deterministic(self):
        cfg = micro_config(perturb_p=0.5)
        batch = micro_batch(cfg)
        model = ReidModel(cfg, 2)
        for enc in model.encoders:
            enc.layers[0].alpha.data[...] = 1.0
        a = model.forward(batch, "eval").G.data
        b = model.forward(batch, "eval").G.data
        np.testing.assert_array_equal(a, b)

    def test_train_mode_draws_from_rng(self):
        cfg = micro_config(perturb_p=0.5, image_size=16, patch=4)
        batch = micro_batch(cfg)
        model = ReidModel(cfg, 2)
        for enc in model.encoders:
            enc.layers[0].alpha.data[...] = 1.0
        a = model.forward(batch, "train", make_rng(0)).G.data
        b = model.forward(batch, "train", make_rng(0)).G.data
        c = model.forward(batch, "train", make_rng(1)).G.data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestGradCheckHarness:
    def test_pick_tau_keeps_margin(self):
        sims = [np.array([[1.0, 0.5004], [0.5004, 1.0]])]
        tau = pick_tau(sims, 0.5)
        assert similarity_gap(sims, tau) >= 1e-3
        assert abs(tau - 0.5) == pytest.approx(0.01)

    def test_pick_tau_keeps_preferred_when_clear(self):
        assert pick_tau([np.array([[1.0, 0.9], [0.9, 1.0]])], 0.5) == 0.5

    def test_modulation_scalars_only(self):
        cfg = micro_config()
        model = ReidModel(cfg, 2)
        names = [n for n in model.parameters()
                 if n.rsplit(".", 2)[-1] in ("alpha", "beta") and n.rsplit(".", 2)[-2].isdigit()]
        report, _ = run_grad_check(cfg, only=names)
        assert report.passed, report.lines()
        assert len(report.params) == 6
        assert all(p.max_abs_grad > 0 for p in report.params)

    def test_all_foreground_gives_zero_beta_gradient(self):
        cfg = micro_config()
        with T.precision("float64"):
            batch = micro_batch(cfg)
            batch.token_masks[:] = 1
            model = ReidModel(cfg, 2)
            for p in model.parameters().values():
                if p.ndim == 0:
                    p.data[...] = 0.3
            T.backward(model.loss(batch, "eval"))
        for enc in model.encoders:
            assert enc.layers[0].beta.grad == 0.0
            assert enc.layers[0].alpha.grad != 0.0

    def test_memoized_model_is_exact(self):
        cfg = micro_config()
        batch = micro_batch(cfg)
        plain, memo = ReidModel(cfg, 2), memoize_branches(ReidModel(cfg, 2))
        assert list(plain.parameters()) == list(memo.parameters())
        with T.no_grad():
            assert float(memo.loss(batch, "eval").data) == float(plain.loss(batch, "eval").data)
            for model in (plain, memo):
                model.parameters()["encoders.1.patch_embed.weight"].data[0, 0] += 1e-3
            changed = float(memo.loss(batch, "eval").data)
            assert changed == float(plain.loss(batch, "eval").data)
            for model in (plain, memo):
                model.parameters()["encoders.1.patch_embed.weight"].data[0, 0] -= 1e-3
            assert float(memo.loss(batch, "eval").data) == float(plain.loss(batch, "eval").data)
            assert float(memo.loss(batch, "eval").data) != changed

    def test_memo_bypassed_when_recording(self):
        cfg = micro_config()
        model = memoize_branches(ReidModel(cfg, 2))
        T.backward(model.loss(micro_batch(cfg), "eval"))
        assert all(p.grad is not None for p in model.parameters().values())
