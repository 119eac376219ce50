"""Training, evaluation and ablation drivers."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import apply_params, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, save_config
from .data import Dataset
from .masks import GeometryError
from .metrics import EvalResult, evaluate, write_ranked_lists, write_results
from .model import ReidModel, make_batch
from .optim import Adam, linear_lr
from .rng import make_rng

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "loss", "lr", "mAP", "CMC@1", "CMC@5", "CMC@10")

# Full-scale RGBNT201 ablation rows (mAP, Rank-1), reference only.
FULL_SCALE_REFERENCE = {"A": (70.3, 72.1), "B": (76.1, 78.1), "C": (78.1, 80.9), "D": (81.2, 83.4)}
ABLATION_VARIANTS = {
    "A": dict(sfm_on=False, str_on=False, chi_on=False),
    "B": dict(sfm_on=True, str_on=False, chi_on=False),
    "C": dict(sfm_on=True, str_on=True, chi_on=False),
    "D": dict(sfm_on=True, str_on=True, chi_on=True),
}


class TrainingError(RuntimeError):
    pass


class IdentitySampler:
    """Draws ``P`` identities x ``S`` samples from the training split, without replacement."""

    def __init__(self, dataset: Dataset, ids_per_batch: int, samples_per_id: int):
        train = dataset.indices("train")
        self.by_id = {int(i): train[dataset.labels[train] == i] for i in np.unique(dataset.labels[train])}
        self.P, self.S = ids_per_batch, samples_per_id
        if len(self.by_id) < self.P:
            raise ConfigError(f"sampler needs {self.P} identities, training split has {len(self.by_id)}")
        short = [i for i, idx in self.by_id.items() if idx.size < self.S]
        if short:
            raise ConfigError(f"identities {short} have fewer than {self.S} training samples")
        self.ids = np.array(sorted(self.by_id))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        chosen = rng.choice(self.ids, size=self.P, replace=False)
        return np.concatenate([rng.choice(self.by_id[int(i)], size=self.S, replace=False) for i in chosen])


def check_geometry(cfg: RunConfig, dataset: Dataset) -> None:
    man = dataset.manifest
    if man["image_size"] != cfg.image_size or man["channels"] != cfg.channels:
        raise GeometryError(
            f"dataset images {man['channels']}x{man['image_size']}^2 vs config "
            f"{cfg.channels}x{cfg.image_size}^2"
        )
    if man["text_dim"] != cfg.dim:
        raise GeometryError(f"dataset text_dim {man['text_dim']} != model dim {cfg.dim}")


def evaluate_model(model: ReidModel, dataset: Dataset) -> EvalResult:
    q, g = dataset.indices("query"), dataset.indices("gallery")
    qf, gf = model.extract(dataset, q), model.extract(dataset, g)
    return evaluate(qf, gf, dataset.labels[q], dataset.labels[g], dataset.cameras[q],
                    dataset.cameras[g], metric=model.cfg.metric)


@dataclass
class TrainResult:
    model: ReidModel
    log: list[dict]
    final: EvalResult | None
    checkpoint: Path | None


def _eval_due(cfg: RunConfig, step: int) -> bool:
    return step == cfg.steps or (cfg.eval_every > 0 and step % cfg.eval_every == 0)


def train(cfg: RunConfig, dataset: Dataset, out_dir=None, resume=None) -> TrainResult:
    """Train from scratch (or from ``resume``) for ``cfg.steps`` total steps.

    Every logged number is a function of (config, dataset) alone; resuming from
    a checkpoint continues the same random streams and reproduces the log.
    """
    check_geometry(cfg, dataset)
    out_dir = Path(out_dir) if out_dir is not None else None
    with T.precision(cfg.precision):
        dtype = T.float_dtype()
        model = ReidModel(cfg, dataset.num_ids).cast(dtype)
        params = model.parameters()
        opt = Adam(params)
        rng = make_rng(cfg.seed, 2)
        rows: list[dict] = []
        start = 0
        if resume is not None:
            state = load_checkpoint(resume)
            if state.config != cfg:
                raise ConfigError("resume config differs from the checkpoint's config")
            apply_params(model, state.params)
            opt.m = {k: v.copy() for k, v in state.adam_m.items()}
            opt.v = {k: v.copy() for k, v in state.adam_v.items()}
            opt.step_count = state.adam_step
            rng, rows, start = state.rng, list(state.log), state.step
        sampler = IdentitySampler(dataset, cfg.ids_per_batch, cfg.samples_per_id)
        result = None
        for step in range(start, cfg.steps):
            lr = linear_lr(step, cfg.steps, cfg.lr, cfg.lr_final)
            batch = make_batch(dataset, sampler.sample(rng), cfg)
            model.zero_grad()
            loss = model.loss(batch, "train", rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step + 1}")
            T.backward(loss)
            opt.step(lr)
            row = {"step": step + 1, "loss": value, "lr": lr}
            if _eval_due(cfg, step + 1):
                result = evaluate_model(model, dataset)
                row.update(result.as_dict())
                log.info("step %d loss %.4f mAP %.4f", step + 1, value, result.mAP)
            rows.append(row)
            if out_dir is not None and cfg.save_every > 0 and (step + 1) % cfg.save_every == 0:
                save_checkpoint(out_dir / "checkpoints" / f"step_{step + 1:06d}", cfg, model, opt,
                                rng, rows, step + 1)
        if result is None:
            result = evaluate_model(model, dataset)
        ckpt = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            ckpt = save_checkpoint(out_dir / "checkpoint", cfg, model, opt, rng, rows, cfg.steps)
            save_config(cfg, out_dir / "config.txt")
            write_log(rows, out_dir / "metrics.tsv")
    return TrainResult(model, rows, result, ckpt)


def write_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for row in rows:
            writer.writerow(["" if k not in row else repr(row[k]) for k in LOG_FIELDS])


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items() if v != ""}
                for r in reader]


def load_model(checkpoint) -> ReidModel:
    state = load_checkpoint(checkpoint)
    with T.precision(state.config.precision):
        model = ReidModel(state.config, state.num_classes).cast(T.float_dtype())
    apply_params(model, state.params)
    return model


def evaluate_checkpoint(checkpoint, dataset: Dataset, out_dir=None) -> EvalResult:
    """Evaluate a saved model; writes ``results.txt`` and ``ranked.tsv`` under ``out_dir``."""
    model = load_model(checkpoint)
    check_geometry(model.cfg, dataset)
    with T.precision(model.cfg.precision):
        result = evaluate_model(model, dataset)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        feature = "U" if model.cfg.chi_on else "G"
        write_results(result, out_dir / "results.txt",
                      {"feature": feature, "queries": len(result.ranked)})
        write_ranked_lists(result, out_dir / "ranked.tsv", dataset.indices("query"),
                           dataset.indices("gallery"))
    return result


def ablate(cfg: RunConfig, dataset: Dataset, out_dir=None) -> list[dict]:
    """Train variants A-D with identical seed and budget; rows of (variant, switches, mAP, R-1)."""
    table = []
    for name, switches in ABLATION_VARIANTS.items():
        sub = cfg.replace(**switches)
        sub_dir = Path(out_dir) / f"variant_{name}" if out_dir is not None else None
        res = train(sub, dataset, sub_dir)
        table.append({"variant": name, **{k: int(v) for k, v in switches.items()},
                      "mAP": res.final.mAP, "R-1": res.final.cmc[1]})
        log.info("ablation %s mAP %.4f R-1 %.4f", name, res.final.mAP, res.final.cmc[1])
    if out_dir is not None:
        write_ablation(table, Path(out_dir) / "ablation.tsv")
    return table


def write_ablation(table: list[dict], path) -> None:
    cols = ("variant", "sfm_on", "str_on", "chi_on", "mAP", "R-1")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(cols)
        for row in table:
            writer.writerow([f"{row[c]:.6f}" if isinstance(row[c], float) else row[c] for c in cols])
