"""
Reproduction harness.

    python cli.py generate mushroom --n 2000 --m 200 --sigma 0.01 --seed 1 --out runs/data
    python cli.py train --dataset runs/data/dataset.npz --out runs/model
    python cli.py experiment mushroom --out runs/mushroom

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from core.config import settings
from core.constants import BaselineKind, DimensionRule, ExperimentName
from core.exceptions import LocaError, UsageError
from core.logging import get_logger, setup_logging
from ml.evaluation import export_distance_scatter, optimal_scale, procrustes_calibrate, stress
from ml.loca import decode, encode, estimate_embedding_dim, train_loca
from ml.serialization import (
    coords_frame,
    load_dataset,
    load_trained,
    read_points_csv,
    save_dataset,
    save_trained,
    spectral_summary,
)
from ml.spectral import adm_embed, dm_embed
from schemas.config import load_train_config
from schemas.experiment import load_experiment_spec
from services.bundle import RunBundle
from services.experiments import ExperimentRunner, generate_dataset

logger = get_logger("loca.cli")

GENERATORS = [
    ExperimentName.MUSHROOM,
    ExperimentName.FRAME_OOS,
    ExperimentName.FRAME_INTERP,
    ExperimentName.SPHERE,
    ExperimentName.WIFI,
]


def _add_schedule_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training schedule")
    group.add_argument("--config", type=Path, help="YAML file with training (or experiment) settings")
    group.add_argument("--max-epochs", type=int, help="Cap on epochs per learning-rate stage")
    group.add_argument("--patience", type=int, help="Epochs without improvement before a stage stops")
    group.add_argument("--eval-every", type=int, help="Epochs between validation checks")
    group.add_argument("--lr-schedule", type=float, nargs="+", help="Learning rates, one per stage")
    group.add_argument("--batch-clouds", type=int, help="Clouds per minibatch")


def _schedule_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "max_epochs_per_stage": args.max_epochs,
        "patience": args.patience,
        "eval_every": args.eval_every,
        "lr_schedule": args.lr_schedule,
        "batch_clouds": args.batch_clouds,
    }


def _add_generator_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("dataset")
    group.add_argument("--n", type=int, help="Anchor count")
    group.add_argument("--m", type=int, help="Points per burst")
    group.add_argument("--sigma", type=float, help="Burst scale in latent units")
    group.add_argument("--n-lattice", type=int, help="Fibonacci lattice size (sphere)")
    group.add_argument("--floor-plan", type=Path, help="YAML floor plan (wifi)")
    group.add_argument("--seed", type=int, help="Global seed")


def _generator_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "n": args.n,
        "m": args.m,
        "sigma": args.sigma,
        "n_lattice": args.n_lattice,
        "floor_plan": args.floor_plan,
        "seed": args.seed,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loca", description="Train and evaluate LOCA embeddings")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    parser.add_argument("--threads", type=int, help="Worker threads for kernel assembly")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="Generate a synthetic burst dataset")
    p.add_argument("name", choices=[g.value for g in GENERATORS])
    _add_generator_flags(p)
    p.add_argument("--out", type=Path, required=True, help="Output directory")

    p = sub.add_parser("train", help="Train LOCA on a dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float, help="Override the dataset's burst scale")
    _add_schedule_flags(p)

    p = sub.add_parser("embed", help="Encode points with a trained model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True, help="Dataset .npz (anchors) or CSV of points")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("decode", help="Decode embedding coordinates with a trained model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True, help="CSV of codes")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("baseline", help="Run Diffusion Maps or Anisotropic Diffusion Maps")
    p.add_argument("kind", choices=[k.value for k in BaselineKind])
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--d", type=int, default=2, help="Embedding dimension")
    p.add_argument("--t", type=int, default=1, help="Diffusion time")
    p.add_argument("--rank", type=int, help="Pseudo-inverse rank (adm)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="Stress and calibration of an embedding against dataset latents")
    p.add_argument("--embedding", type=Path, required=True, help="CSV with coord_* columns")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--scaled", action="store_true", help="Apply the optimal global scale")
    p.add_argument("--scatter-pairs", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("experiment", help="Run an end-to-end experiment")
    p.add_argument("name", choices=[e.value for e in ExperimentName])
    _add_generator_flags(p)
    _add_schedule_flags(p)
    p.add_argument("--out", type=Path, help="Output directory")

    p = sub.add_parser("dim-sweep", help="Estimate the embedding dimension")
    p.add_argument("--dataset", type=Path, help="Dataset .npz; generated from --source when omitted")
    p.add_argument("--source", choices=[ExperimentName.MUSHROOM.value, ExperimentName.SPHERE.value],
                   default=ExperimentName.MUSHROOM.value)
    p.add_argument("--d-max", type=int, default=4)
    p.add_argument("--dim-rule", choices=[r.value for r in DimensionRule], default=DimensionRule.RAW_LOSS.value)
    p.add_argument("--seed", type=int)
    _add_schedule_flags(p)
    p.add_argument("--out", type=Path, required=True)
    return parser


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    spec = load_experiment_spec(args.name, output_dir=args.out, **_generator_overrides(args))
    with RunBundle(args.out, f"generate {args.name}", spec.seed, spec.model_dump(mode="json", exclude={"output_dir"})) as bundle:
        dataset = generate_dataset(spec)
        bundle.register(save_dataset(dataset, bundle.path("dataset.npz")))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    overrides = _schedule_overrides(args)
    overrides.update(seed=args.seed, sigma=args.sigma)
    config = load_train_config(args.config, **overrides).with_output_dim(dataset.ambient_dim)
    with RunBundle(args.out, "train", config.seed, config.model_dump(mode="json")) as bundle:
        trained = train_loca(dataset, config)
        for path in save_trained(trained, args.out).values():
            bundle.register(path)
    return 0


def _read_points(path: Path) -> np.ndarray:
    if path.suffix == ".npz":
        return load_dataset(path).anchors
    return read_points_csv(path)


def cmd_embed(args: argparse.Namespace) -> int:
    model = load_trained(args.model)
    points = _read_points(args.input)
    with RunBundle(args.out, "embed", model.seed, {"model": args.model, "input": args.input}) as bundle:
        bundle.write_frame("codes.csv", coords_frame(encode(model, points)))
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    model = load_trained(args.model)
    codes = read_points_csv(args.input)
    with RunBundle(args.out, "decode", model.seed, {"model": args.model, "input": args.input}) as bundle:
        bundle.write_frame("points.csv", coords_frame(decode(model, codes)))
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    kind = BaselineKind(args.kind)
    if kind is BaselineKind.DM:
        embedding = dm_embed(dataset.anchors, args.d, args.t)
    else:
        embedding = adm_embed(dataset, args.d, args.t, rank=args.rank)
    arguments = {"dataset": args.dataset, "d": args.d, "t": args.t, "rank": args.rank}
    with RunBundle(args.out, f"baseline {kind.value}", 0, arguments) as bundle:
        bundle.write_frame(f"{kind.value}_embedding.csv", coords_frame(embedding.coords))
        bundle.write_json(f"{kind.value}_spectrum.json", spectral_summary(embedding))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    if dataset.latents is None:
        raise UsageError(f"dataset {args.dataset} has no latents to evaluate against")
    embedding = read_points_csv(args.embedding)
    scale = optimal_scale(embedding, dataset.latents, seed=args.seed) if args.scaled else 1.0
    report: Dict[str, Any] = {"stress": stress(embedding, dataset.latents, scale=scale, seed=args.seed).to_dict()}
    if embedding.shape[1] == dataset.latents.shape[1]:
        report["calibration"] = procrustes_calibrate(embedding, dataset.latents).to_dict()
    arguments = {"embedding": args.embedding, "dataset": args.dataset, "scaled": args.scaled}
    with RunBundle(args.out, "evaluate", args.seed, arguments) as bundle:
        bundle.write_json("evaluation.json", report)
        bundle.write_frame(
            "scatter.csv",
            export_distance_scatter(embedding, dataset.latents, scale, args.scatter_pairs, args.seed),
        )
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    spec = load_experiment_spec(
        args.name,
        path=args.config,
        train_overrides=_schedule_overrides(args),
        output_dir=args.out or Path("results") / args.name,
        **_generator_overrides(args),
    )
    ExperimentRunner(spec).run()
    return 0


def cmd_dim_sweep(args: argparse.Namespace) -> int:
    if args.dataset is None:
        spec = load_experiment_spec(
            ExperimentName.DIM_SWEEP.value,
            path=args.config,
            train_overrides=_schedule_overrides(args),
            output_dir=args.out,
            sweep_source=args.source,
            d_max=args.d_max,
            dim_rule=args.dim_rule,
            seed=args.seed,
        )
        ExperimentRunner(spec).run()
        return 0

    dataset = load_dataset(args.dataset)
    overrides = _schedule_overrides(args)
    overrides["seed"] = args.seed
    config = load_train_config(args.config, **overrides).with_output_dim(dataset.ambient_dim)
    with RunBundle(args.out, "dim-sweep", config.seed, {"dataset": args.dataset, "d_max": args.d_max}) as bundle:
        estimate = estimate_embedding_dim(dataset, args.d_max, config, rule=DimensionRule(args.dim_rule))
        bundle.write_json(
            "dim_sweep.json",
            {
                "rule": estimate.rule.value,
                "selected_dim": estimate.selected_dim,
                "raw_loss_dim": estimate.raw_loss_dim,
                "rank_score_dim": estimate.rank_score_dim,
                "burst_rank": estimate.burst_rank,
                "whitening_losses": estimate.whitening_losses,
                "scores": estimate.scores,
                "failed_dims": list(estimate.failed_dims),
            },
        )
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "embed": cmd_embed,
    "decode": cmd_decode,
    "baseline": cmd_baseline,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "dim-sweep": cmd_dim_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    setup_logging(args.log_level)
    if args.threads is not None:
        settings.LOCA_THREADS = args.threads

    try:
        return COMMANDS[args.command](args)
    except LocaError as e:
        logger.error(f"{e.code}: {e.detail}")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
