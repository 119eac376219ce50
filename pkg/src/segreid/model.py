"""Three-branch re-identification model: masked encoders, token reallocation, hypergraph fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import masks
from . import tensor as T
from .config import RunConfig
from .encoder import EncoderConfig, ModalityEncoder
from .hypergraph import HypergraphInteraction, concat_modalities
from .losses import Objective
from .masks import GeometryError
from .nn import Module
from .reallocation import TokenReallocation
from .rng import make_rng
from .tensor import Tensor

MODALITIES = ("rgb", "nir", "tir")


@dataclass
class Batch:
    images: dict[str, np.ndarray]  # modality -> [B, C, H, W]
    token_masks: np.ndarray  # [B, N+1] uint8
    text: np.ndarray  # [B, D]
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.size


def make_batch(dataset, index, cfg: RunConfig) -> Batch:
    """Slice ``dataset`` at ``index`` and tokenise its pixel masks."""
    index = np.asarray(index)
    tmasks = np.stack([masks.patchify_mask(m, cfg.patch, cfg.rho) for m in dataset.masks[index]])
    return Batch(
        images={m: dataset.images[m][index] for m in MODALITIES},
        token_masks=tmasks,
        text=dataset.text[index],
        labels=dataset.labels[index],
    )


@dataclass
class Features:
    G: Tensor  # [B, 3, D] class tokens
    T: Tensor  # [B, D] frozen text feature
    H: Tensor | None = None  # [B, 3(K+1), D] semantic tokens
    H_prime: Tensor | None = None
    U: Tensor | None = None  # [B, 3, D]

    def supervised(self) -> dict[str, Tensor]:
        b = self.G.shape[0]
        out = {"G": T.reshape(self.G, (b, -1))}
        if self.U is not None:
            out["U"] = T.reshape(self.U, (b, -1))
        out["T"] = self.T
        return out

    def retrieval(self) -> np.ndarray:
        src = self.U if self.U is not None else self.G
        return src.data.reshape(src.shape[0], -1)


class ReidModel(Module):
    def __init__(self, cfg: RunConfig, num_classes: int, rng: np.random.Generator | None = None):
        rng = make_rng(cfg.seed, 1) if rng is None else rng
        self.cfg = cfg
        self.num_classes = num_classes
        enc_cfg = EncoderConfig(cfg.image_size, cfg.patch, cfg.channels, cfg.depth,
                                cfg.heads, cfg.dim, modulate=cfg.sfm_on)
        self.encoders = [ModalityEncoder(enc_cfg, rng) for _ in MODALITIES]
        self.realloc = ([TokenReallocation(cfg.dim, cfg.heads, cfg.num_tokens, rng) for _ in MODALITIES]
                        if cfg.str_on else [])
        nodes = 3 * (cfg.num_tokens + 1)
        self.chi = (HypergraphInteraction(cfg.dim, cfg.heads, nodes, rng, cfg.chi_depth, cfg.tau)
                    if cfg.chi_on else None)
        heads = ("G", "U", "T") if cfg.chi_on else ("G", "T")
        self.objective = Objective(cfg.dim, num_classes, rng, cfg.label_smooth, cfg.margin, heads)

    def check_batch(self, batch: Batch) -> None:
        cfg = self.cfg
        for m in MODALITIES:
            shape = batch.images[m].shape[1:]
            if shape != (cfg.channels, cfg.image_size, cfg.image_size):
                raise GeometryError(
                    f"{m} images {shape} do not match model geometry "
                    f"({cfg.channels}, {cfg.image_size}, {cfg.image_size})"
                )
        if batch.text.shape[-1] != cfg.dim:
            raise GeometryError(f"text width {batch.text.shape[-1]} != model dim {cfg.dim}")

    def forward(self, batch: Batch, mode: str = "eval",
                rng: np.random.Generator | None = None) -> Features:
        self.check_batch(batch)
        tmask = batch.token_masks
        if mode == "train" and self.cfg.sfm_on and self.cfg.perturb_p > 0:
            # one draw per triplet, shared by the three branches
            tmask = masks.perturb(tmask, self.cfg.perturb_p, rng)
        dtype = T.float_dtype()
        tokens = [enc(batch.images[m].astype(dtype), tmask, mode)
                  for enc, m in zip(self.encoders, MODALITIES)]
        b = len(batch)
        g = T.stack([T.take(f, (slice(None), 0)) for f in tokens], axis=1)
        text = Tensor(batch.text.astype(dtype))
        feats = Features(G=g, T=text)
        if self.realloc:
            semantic = [blk(T.take(f, (slice(None), slice(1, None))), text)
                        for blk, f in zip(self.realloc, tokens)]
            feats.H = concat_modalities(*semantic)
        if self.chi is not None:
            feats.H_prime, feats.U = self.chi(feats.H, g)
        assert feats.G.shape == (b, 3, self.cfg.dim)
        return feats

    def loss(self, batch: Batch, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
        return self.objective(self.forward(batch, mode, rng).supervised(), batch.labels)

    def extract(self, dataset, index, chunk: int = 64) -> np.ndarray:
        """Retrieval features (flattened U, or G when the hypergraph is off) in eval mode."""
        out = []
        with T.no_grad():
            for start in range(0, len(index), chunk):
                batch = make_batch(dataset, index[start:start + chunk], self.cfg)
                out.append(self.forward(batch, "eval").retrieval())
        return np.concatenate(out, axis=0)
