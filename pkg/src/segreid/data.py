"""Synthetic tri-modal identity datasets and the frozen text-embedding surrogate.

Each identity draws a latent vector; each modality maps it through its own
fixed random matrices to a per-channel blob colour plus a coarse 4x4 texture,
so the three modalities are correlated through the shared latent. A sample places the
prototype as a square blob at a random position, adds small foreground noise,
and fills the background with i.i.d. Gaussian noise scaled by ``clutter``.
The blob footprint is the sample's segmentation mask, shared by all three
modalities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import atomic_write_bytes, load_array, save_tensor
from .rng import make_rng

GENERATOR_VERSION = "segreid-synth/1"
MODALITIES = ("rgb", "nir", "tir")

# stream keys for make_rng(seed, key, ...)
_LATENT, _MIXING, _TEXT, _TEXT_NOISE, _SAMPLE = range(5)

LATENT_DIM = 6
GRID = 4
COLOUR_GAIN = 0.6
TEXTURE_GAIN = 0.2


@dataclass
class Dataset:
    """In-memory view of a generated dataset."""

    images: dict[str, np.ndarray]  # modality -> [S, C, H, W] float32
    masks: np.ndarray  # [S, H, W] uint8
    text: np.ndarray  # [S, D_text] float32
    labels: np.ndarray
    cameras: np.ndarray
    splits: np.ndarray
    manifest: dict

    def __len__(self) -> int:
        return self.labels.size

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.splits == split)

    @property
    def num_ids(self) -> int:
        return int(self.manifest["num_ids"])

    @property
    def image_size(self) -> int:
        return int(self.manifest["image_size"])


def blob_size(image_size: int) -> int:
    return image_size // 2


def prototypes(seed: int, num_ids: int, image_size: int, channels: int = 3) -> dict[str, np.ndarray]:
    """Clean foreground pattern per modality: ``[num_ids, C, b, b]`` with ``b = image_size // 2``."""
    b = blob_size(image_size)
    if b % GRID:
        raise ValueError(f"blob size {b} must be divisible by the {GRID}x{GRID} prototype grid")
    latents = np.stack([make_rng(seed, _LATENT, i).normal(size=LATENT_DIM) for i in range(num_ids)])
    out = {}
    for m_idx, m in enumerate(MODALITIES):
        mix_rng = make_rng(seed, _MIXING, m_idx)
        colour_mix = mix_rng.normal(size=(LATENT_DIM, channels))
        texture_mix = mix_rng.normal(size=(LATENT_DIM, channels * GRID * GRID))
        colour = np.tanh(latents @ colour_mix / np.sqrt(LATENT_DIM))
        texture = np.tanh(latents @ texture_mix / np.sqrt(LATENT_DIM))
        texture = texture.reshape(num_ids, channels, GRID, GRID)
        cell = np.ones((b // GRID, b // GRID))
        fine = np.stack([[np.kron(texture[i, c], cell) for c in range(channels)]
                         for i in range(num_ids)])
        out[m] = 1.0 + COLOUR_GAIN * colour[:, :, None, None] + TEXTURE_GAIN * fine
    return out


def text_embed_surrogate(identity: int, seed: int, dim: int = 64, noise: float = 0.0,
                         rng: np.random.Generator | None = None) -> np.ndarray:
    """Unit-norm pseudo text embedding keyed by identity, optionally jittered.

    The clean vector depends only on ``(seed, identity)``. With ``noise > 0``
    a Gaussian perturbation of that std (drawn from ``rng``) is added and the
    result re-normalised.
    """
    v = make_rng(seed, _TEXT, identity).normal(size=dim)
    v = v / np.linalg.norm(v)
    if noise > 0:
        if rng is None:
            raise ValueError("per-sample text noise needs an rng")
        v = v + rng.normal(0.0, noise, size=dim)
        v = v / np.linalg.norm(v)
    return v


def split_of(j: int, per_id: int) -> str:
    """Within-identity split: first half train, then ~1/4 of the rest query, remainder gallery."""
    n_train = per_id // 2
    n_query = max(1, (per_id - n_train) // 4)
    if j < n_train:
        return "train"
    return "query" if j < n_train + n_query else "gallery"


def render_sample(protos: dict[str, np.ndarray], identity: int, image_size: int, clutter: float,
                  rng: np.random.Generator, fg_noise: float = 0.1) -> tuple[dict[str, np.ndarray], np.ndarray]:
    b = blob_size(image_size)
    top, left = rng.integers(0, image_size - b + 1, size=2)
    mask = np.zeros((image_size, image_size), dtype=np.uint8)
    mask[top:top + b, left:left + b] = 1
    images = {}
    for m in MODALITIES:
        proto = protos[m][identity]
        img = clutter * rng.normal(size=(proto.shape[0], image_size, image_size))
        img[:, top:top + b, left:left + b] = proto + fg_noise * rng.normal(size=proto.shape)
        images[m] = img.astype(np.float32)
    return images, mask


def generate_dataset(out_dir, num_ids: int = 8, per_id: int = 16, image_size: int = 32,
                     clutter: float = 0.5, seed: int = 0, channels: int = 3, text_dim: int = 64,
                     text_noise: float = 0.05) -> dict:
    """Write a dataset under ``out_dir`` and return its manifest."""
    if num_ids < 2 or per_id < 4:
        raise ValueError(f"need num_ids >= 2 and per_id >= 4, got {num_ids} x {per_id}")
    if image_size < 8 or blob_size(image_size) % GRID:
        raise ValueError(f"image size {image_size} must be >= 8 with a blob divisible by {GRID}")
    if not 0.0 <= clutter <= 1.0:
        raise ValueError(f"clutter must lie in [0, 1], got {clutter}")
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    protos = prototypes(seed, num_ids, image_size, channels)
    samples = []
    for identity in range(num_ids):
        for j in range(per_id):
            index = identity * per_id + j
            rng = make_rng(seed, _SAMPLE, index)
            images, mask = render_sample(protos, identity, image_size, clutter, rng)
            text = text_embed_surrogate(identity, seed, text_dim, text_noise,
                                        make_rng(seed, _TEXT_NOISE, index))
            entry = {"index": index, "identity": identity, "camera": j % 2,
                     "split": split_of(j, per_id)}
            stem = f"samples/{index:05d}"
            for m in MODALITIES:
                save_tensor(images[m], out_dir / f"{stem}_{m}.stt")
                entry[m] = f"{stem}_{m}.stt"
            save_tensor(mask, out_dir / f"{stem}_mask.stt")
            save_tensor(text.astype(np.float32), out_dir / f"{stem}_text.stt")
            entry["mask"] = f"{stem}_mask.stt"
            entry["text"] = f"{stem}_text.stt"
            samples.append(entry)
    manifest = {
        "version": GENERATOR_VERSION,
        "seed": seed,
        "num_ids": num_ids,
        "per_id": per_id,
        "image_size": image_size,
        "channels": channels,
        "clutter": clutter,
        "text_dim": text_dim,
        "text_noise": text_noise,
        "samples": samples,
    }
    check_manifest(manifest)
    atomic_write_bytes(out_dir / "manifest.json", json.dumps(manifest, indent=1).encode())
    return manifest


def check_manifest(manifest: dict) -> None:
    samples = manifest["samples"]
    query = {s["index"] for s in samples if s["split"] == "query"}
    gallery = {s["index"] for s in samples if s["split"] == "gallery"}
    if query & gallery:
        raise ValueError("query and gallery share samples")
    gallery_ids = {s["identity"] for s in samples if s["split"] == "gallery"}
    missing = {s["identity"] for s in samples if s["split"] == "query"} - gallery_ids
    if missing:
        raise ValueError(f"query identities {sorted(missing)} absent from gallery")


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    check_manifest(manifest)
    samples = manifest["samples"]
    images = {m: np.stack([load_array(root / s[m], dtype=np.float32, rank=3) for s in samples])
              for m in MODALITIES}
    return Dataset(
        images=images,
        masks=np.stack([load_array(root / s["mask"], dtype=np.uint8, rank=2) for s in samples]),
        text=np.stack([load_array(root / s["text"], dtype=np.float32, rank=1) for s in samples]),
        labels=np.array([s["identity"] for s in samples], dtype=np.int64),
        cameras=np.array([s["camera"] for s in samples], dtype=np.int64),
        splits=np.array([s["split"] for s in samples]),
        manifest=manifest,
    )
