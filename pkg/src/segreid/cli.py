"""Command-line entry points.

Every subcommand prints ``key=value`` lines on stdout and writes its files
(and figures) under ``--out``. Failures print a single line

    error: <ErrorClass>: <message>

on stderr and exit nonzero (2 for usage/config problems, 1 otherwise).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import plotting
from .checks import run_grad_check
from .config import ConfigError, RunConfig, micro_config, parse_config, save_config
from .data import generate_dataset, load_dataset
from .metrics import write_results
from .train import FULL_SCALE_REFERENCE, ablate, evaluate_checkpoint, train

class UsageError(Exception):
    pass


class GradientMismatch(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message.replace("\n", " "))


def _emit(**values) -> None:
    for k, v in values.items():
        if isinstance(v, float):
            v = f"{v:.6f}"
        print(f"{k}={v}")


def _config(args, base: RunConfig | None = None) -> RunConfig:
    values = base.to_dict() if base is not None else {}
    if args.config:
        values.update(parse_config(Path(args.config).read_text()))
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = value.strip()
    if args.seed is not None:
        values["seed"] = args.seed
    return RunConfig.from_dict(values)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> None:
    cfg = _config(args)
    out = _out(args)
    manifest = generate_dataset(out, num_ids=cfg.num_ids, per_id=cfg.per_id,
                                image_size=cfg.image_size, clutter=cfg.clutter, seed=cfg.seed,
                                channels=cfg.channels, text_dim=cfg.dim, text_noise=cfg.text_noise)
    splits = [s["split"] for s in manifest["samples"]]
    _emit(command="gen-data", out=out, samples=len(splits), train=splits.count("train"),
          query=splits.count("query"), gallery=splits.count("gallery"), version=manifest["version"])


def cmd_train(args) -> None:
    cfg = _config(args)
    out = _out(args)
    dataset = load_dataset(args.data)
    start = time.perf_counter()
    result = train(cfg, dataset, out, resume=args.resume)
    figure = plotting.plot_training(result.log, out / "train_curve.png")
    write_results(result.final, out / "results.txt")
    _emit(command="train", steps=cfg.steps, final_loss=result.log[-1]["loss"] if result.log else "",
          **result.final.as_dict(), checkpoint=result.checkpoint, log=out / "metrics.tsv",
          figure=figure, seconds=time.perf_counter() - start)


def cmd_eval(args) -> None:
    out = _out(args)
    result = evaluate_checkpoint(args.checkpoint, load_dataset(args.data), out)
    figure = plotting.plot_cmc(result.cmc_curve(), out / "cmc.png")
    _emit(command="eval", **result.as_dict(), results=out / "results.txt",
          ranked=out / "ranked.tsv", figure=figure)


def cmd_grad_check(args) -> None:
    cfg = _config(args, base=micro_config())
    start = time.perf_counter()
    report, tau = run_grad_check(cfg)
    seconds = time.perf_counter() - start
    if args.out:
        out = _out(args)
        (out / "gradcheck.txt").write_text("\n".join(report.lines()) + "\n")
        save_config(cfg, out / "config.txt")
    worst = max(p.max_rel_err for p in report.params)
    _emit(command="grad-check", params=len(report.params),
          failed=len(report.offenders), max_rel_err=f"{worst:.3e}", tau=tau, seconds=seconds)
    if not report.passed:
        names = ",".join(p.name for p in report.offenders)
        raise GradientMismatch(f"{len(report.offenders)} parameters exceed tolerance: {names}")


def cmd_ablate(args) -> None:
    cfg = _config(args)
    out = _out(args)
    start = time.perf_counter()
    table = ablate(cfg, load_dataset(args.data), out)
    figure = plotting.plot_ablation(table, out / "ablation.png", FULL_SCALE_REFERENCE)
    for row in table:
        _emit(**{f"{row['variant']}.mAP": row["mAP"], f"{row['variant']}.R-1": row["R-1"]})
    gap = table[-1]["mAP"] - table[0]["mAP"]
    _emit(command="ablate", gap_D_minus_A=gap, table=out / "ablation.tsv", figure=figure,
          seconds=time.perf_counter() - start)


COMMANDS = {
    "gen-data": (cmd_gen_data, "write a synthetic tri-modal dataset"),
    "train": (cmd_train, "train a model and save a checkpoint"),
    "eval": (cmd_eval, "evaluate a checkpoint on the query/gallery split"),
    "grad-check": (cmd_grad_check, "finite-difference check of every parameter (micro geometry)"),
    "ablate": (cmd_ablate, "train variants A-D with a shared seed and budget"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segreid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", required=name != "grad-check")
        if name in ("train", "eval", "ablate"):
            p.add_argument("--data", required=True, help="dataset directory from gen-data")
        if name == "train":
            p.add_argument("--resume", help="checkpoint directory to continue from")
        if name == "eval":
            p.add_argument("--checkpoint", required=True)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s %(levelname)s %(message)s", stream=sys.stderr)
        COMMANDS[args.command][0](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI contract is one line per failure
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or repr(exc)


if __name__ == "__main__":
    sys.exit(main())
