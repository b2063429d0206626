"""Command-line interface: train, generate, evaluate, curve.

Every output is written atomically (no partial files on error), every random
choice takes an explicit seed, and report-producing commands render figures
next to their delimited outputs unless ``--no-figures`` is passed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .diffusion import DiffusionConfig, ancestral_sample, linear_schedule
from .figures import (
    save_bivariate_figure,
    save_curve_figure,
    save_loss_figure,
    save_marginal_figure,
)
from .ioutil import atomic_write_text
from .metrics import (
    bivariate_distribution,
    evaluate_populations,
    marginal_distribution,
    sampling_zero_curve,
)
from .network import NetworkConfig
from .schema import AttributeSchema, decode_batch, load_population_csv, save_population_csv
from .training import TrainConfig, run_training, save_loss_history

_DTYPES = {"float32": np.float32, "float64": np.float64}
_ERRORS = (ValueError, ArithmeticError, RuntimeError, OSError)


@dataclass
class RunConfig:
    network: NetworkConfig
    diffusion: DiffusionConfig
    training: TrainConfig
    dtype: type
    schema_path: Path | None


def _load_run_config(path: str) -> RunConfig:
    config_path = Path(path)
    obj = json.loads(config_path.read_text())
    if not isinstance(obj, dict):
        raise ValueError("config root must be a JSON object")
    known = {"network", "diffusion", "training", "dtype", "schema"}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"config: unknown field(s) {sorted(unknown)}")
    for section in ("network", "diffusion", "training"):
        if section in obj and not isinstance(obj[section], dict):
            raise ValueError(f"config: {section} must be a JSON object")
    dtype_name = obj.get("dtype", "float32")
    if dtype_name not in _DTYPES:
        raise ValueError(
            f"config: dtype must be one of {sorted(_DTYPES)}, got {dtype_name!r}"
        )
    schema_path = None
    if "schema" in obj:
        if not isinstance(obj["schema"], str):
            raise ValueError("config: schema must be a path string")
        schema_path = (config_path.parent / obj["schema"]).resolve()
    return RunConfig(
        network=NetworkConfig.from_dict(obj.get("network", {})),
        diffusion=DiffusionConfig.from_dict(obj.get("diffusion", {})),
        training=TrainConfig.from_dict(obj.get("training", {})),
        dtype=_DTYPES[dtype_name],
        schema_path=schema_path,
    )


def _write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_run_config(args.config)
    schema = None
    if config.schema_path is not None:
        schema = AttributeSchema.from_json(config.schema_path.read_text())
    data = load_population_csv(args.data, schema=schema)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    epochs = config.training.epochs
    stride = max(1, epochs // 10)

    def progress(stats):
        if not args.quiet and (stats.epoch % stride == 0 or stats.epoch == epochs - 1):
            print(
                f"epoch {stats.epoch + 1:>4}/{epochs}  "
                f"loss {stats.mean_loss:.6f}  lr {stats.lr:.3e}"
            )

    start = time.perf_counter()
    params, history = run_training(
        data,
        config.network,
        config.diffusion,
        config.training,
        dtype=config.dtype,
        progress=progress,
    )
    elapsed = time.perf_counter() - start
    save_checkpoint(
        out_dir,
        params,
        data.schema,
        config.diffusion,
        config.training,
        seed=config.training.seed,
        epoch=epochs,
    )
    save_loss_history(history, out_dir / "loss_history.csv")
    if not args.no_figures:
        save_loss_figure(history, out_dir / "loss_history.png")
    print(
        f"trained {epochs} epochs in {elapsed:.1f}s; "
        f"final mean loss {history[-1].mean_loss:.6f}; checkpoint in {out_dir}"
    )
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise ValueError("--n must be >= 1")
    ckpt = load_checkpoint(args.ckpt)
    schedule = linear_schedule(ckpt.diffusion_config)
    samples = ancestral_sample(ckpt.params, schedule, args.n, args.seed)
    population, dropped = decode_batch(samples, ckpt.schema, mode=args.mode)
    save_population_csv(population, args.out)
    print(f"wrote {len(population)} records to {args.out}")
    if args.mode == "global":
        print(f"discarded {dropped} undecodable samples")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    reference = load_population_csv(args.reference)
    generated = load_population_csv(args.generated, schema=reference.schema)
    training = None
    if args.training is not None:
        training = load_population_csv(args.training, schema=reference.schema)
    report = evaluate_populations(reference, generated, training)

    report_path = Path(args.report)
    atomic_write_text(report_path, report.to_json())
    stem = report_path.parent / report_path.stem
    _write_csv(
        Path(f"{stem}_pairs.csv"),
        ["attribute_a", "attribute_b", "srmse"],
        [[a, b, repr(v)] for a, b, v in report.bivariate_pairs],
    )
    if not args.no_figures:
        schema = reference.schema
        save_marginal_figure(
            marginal_distribution(reference),
            marginal_distribution(generated),
            schema,
            Path(f"{stem}_marginals.png"),
        )
        pair_data = []
        d = schema.num_attributes
        for i in range(d):
            for j in range(i + 1, d):
                pair_data.append(
                    (
                        schema.names[i],
                        schema.names[j],
                        bivariate_distribution(reference, i, j).proportions,
                        bivariate_distribution(generated, i, j).proportions,
                    )
                )
        if pair_data:
            save_bivariate_figure(pair_data, Path(f"{stem}_bivariate.png"))

    print(f"marginal SRMSE      {report.marginal_srmse:.6f}")
    if report.bivariate_srmse is not None:
        print(f"bivariate SRMSE     {report.bivariate_srmse:.6f}")
    print(f"precision           {report.precision:.6f}")
    print(f"recall              {report.recall:.6f}")
    print(f"F1                  {report.f1:.6f}")
    print(f"structural-zero rate {report.structural_zero_rate:.6f}")
    print(
        "unique combinations: "
        f"reference {report.unique_reference}, generated {report.unique_generated}"
        + (
            f", training {report.unique_training}"
            if report.unique_training is not None
            else ""
        )
    )
    if report.sampling_zero_count is not None:
        print(f"sampling-zero count {report.sampling_zero_count}")
    print(f"report written to {report_path}")
    return 0


def _parse_rates(text: str) -> list[float]:
    rates = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            raise ValueError(f"rate list {text!r} contains an empty entry")
        try:
            rates.append(float(token))
        except ValueError:
            raise ValueError(f"malformed rate {token!r}") from None
    return rates


def cmd_curve(args: argparse.Namespace) -> int:
    reference = load_population_csv(args.reference)
    rates = _parse_rates(args.rates)
    points = sampling_zero_curve(reference, rates, args.seed)
    out = Path(args.out)
    _write_csv(
        out,
        ["rate", "combination_share", "coverage"],
        [[repr(p.rate), repr(p.combination_share), repr(p.coverage)] for p in points],
    )
    if not args.no_figures:
        save_curve_figure(points, out.parent / f"{out.stem}.png")
    for p in points:
        print(
            f"rate {p.rate:g}: combination share {p.combination_share:.4f}, "
            f"coverage {p.coverage:.4f}"
        )
    print(f"curve written to {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popdiff",
        description=(
            "Learn the joint distribution of categorical population attributes "
            "with a denoising diffusion model, generate synthetic populations, "
            "and evaluate their similarity, feasibility, and diversity."
        ),
    )
    parser.add_argument("--version", action="version", version=f"popdiff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model on a population CSV")
    p_train.add_argument("--config", required=True, help="run-config JSON path")
    p_train.add_argument("--data", required=True, help="training population CSV")
    p_train.add_argument("--out", required=True, help="output directory for checkpoint")
    p_train.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p_train.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="sample synthetic records from a checkpoint")
    p_gen.add_argument("--ckpt", required=True, help="checkpoint directory")
    p_gen.add_argument("--n", required=True, type=int, help="number of samples")
    p_gen.add_argument("--seed", required=True, type=int, help="sampling seed")
    p_gen.add_argument(
        "--mode",
        choices=("masked", "global"),
        default="masked",
        help="argmax decoding mode (default: masked)",
    )
    p_gen.add_argument("--out", required=True, help="output population CSV")
    p_gen.set_defaults(func=cmd_generate)

    p_eval = sub.add_parser("evaluate", help="compare a generated population to a reference")
    p_eval.add_argument("--reference", required=True, help="reference population CSV")
    p_eval.add_argument("--generated", required=True, help="generated population CSV")
    p_eval.add_argument("--training", help="training population CSV (enables sampling-zero count)")
    p_eval.add_argument("--report", required=True, help="output report JSON path")
    p_eval.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p_eval.set_defaults(func=cmd_evaluate)

    p_curve = sub.add_parser("curve", help="subsample-variety curve of a reference population")
    p_curve.add_argument("--reference", required=True, help="reference population CSV")
    p_curve.add_argument("--rates", required=True, help="comma-separated rates in (0, 1]")
    p_curve.add_argument("--seed", required=True, type=int, help="subsampling seed")
    p_curve.add_argument("--out", required=True, help="output curve CSV")
    p_curve.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p_curve.set_defaults(func=cmd_curve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
