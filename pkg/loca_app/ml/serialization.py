"""
On-disk formats for networks, trained models and burst datasets.

Networks and datasets are `.npz` archives whose `header` entry is a JSON
document carrying a magic string and format version; trained models are
directories holding both networks, a JSON summary and the loss history
as CSV.
"""

import json
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd

from core.constants import DATASET_MAGIC, FORMAT_VERSION, MODEL_MAGIC, Activation, LossKind, Split
from core.exceptions import ModelFormatError, UsageError
from core.logging import get_logger
from ml.datasets import BurstDataset
from ml.loca import LossRecord, TrainedLoca
from ml.nn import MLPModel
from ml.spectral import SpectralEmbedding

logger = get_logger(__name__)

PathLike = Union[str, Path]

ENCODER_FILE = "encoder.npz"
DECODER_FILE = "decoder.npz"
TRAINING_FILE = "training.json"
HISTORY_FILE = "loss_history.csv"


def _npz_path(path: PathLike) -> Path:
    path = Path(path)
    return path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")


def _read_archive(path: PathLike, magic: str) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"file not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {key: archive[key] for key in archive.files}
    except (OSError, ValueError) as exc:
        raise ModelFormatError(f"{path} is not a readable archive: {exc}")
    if "header" not in arrays:
        raise ModelFormatError(f"{path} has no header")
    try:
        header = json.loads(str(arrays.pop("header")))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path} has a corrupt header: {exc}")
    if header.get("magic") != magic:
        raise ModelFormatError(f"{path} is not a {magic} file (magic {header.get('magic')!r})")
    if header.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path} has unsupported format version {header.get('version')!r}")
    arrays["header"] = header
    return arrays


# ----------------------------------------------------------------------------
# Networks
# ----------------------------------------------------------------------------

def save_mlp(model: MLPModel, path: PathLike) -> Path:
    path = _npz_path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "magic": MODEL_MAGIC,
        "version": FORMAT_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "activation": model.activation.value,
        "linear_tail": model.linear_tail,
    }
    arrays = {}
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{layer}"] = w
        arrays[f"b{layer}"] = b
    np.savez(path, header=np.array(json.dumps(header)), **arrays)
    return path


def load_mlp(path: PathLike) -> MLPModel:
    arrays = _read_archive(path, MODEL_MAGIC)
    header = arrays["header"]
    n_layers = len(header["layer_sizes"]) - 1
    try:
        weights = tuple(arrays[f"W{layer}"] for layer in range(n_layers))
        biases = tuple(arrays[f"b{layer}"] for layer in range(n_layers))
        activation = Activation(header["activation"])
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"{path} is missing model data: {exc}")
    return MLPModel(tuple(header["layer_sizes"]), weights, biases, activation, int(header["linear_tail"]))


# ----------------------------------------------------------------------------
# Trained models
# ----------------------------------------------------------------------------

def save_trained(model: TrainedLoca, directory: PathLike) -> Dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {
        "encoder": save_mlp(model.encoder, directory / ENCODER_FILE),
        "decoder": save_mlp(model.decoder, directory / DECODER_FILE),
    }
    summary = {
        "sigma_used": model.sigma_used,
        "seed": model.seed,
        "embedding_dim": model.embedding_dim,
        "best_validation": list(model.best_validation),
        "validation_indices": list(model.validation_indices),
    }
    written["training"] = directory / TRAINING_FILE
    written["training"].write_text(json.dumps(summary, indent=2, sort_keys=True))
    written["history"] = directory / HISTORY_FILE
    model.history_frame().to_csv(written["history"], index=False)
    logger.info(f"Saved trained model to {directory}")
    return written


def load_trained(directory: PathLike) -> TrainedLoca:
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"model directory not found: {directory}")
    encoder = load_mlp(directory / ENCODER_FILE)
    decoder = load_mlp(directory / DECODER_FILE)
    try:
        summary = json.loads((directory / TRAINING_FILE).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read {directory / TRAINING_FILE}: {exc}")
    history = ()
    history_path = directory / HISTORY_FILE
    if history_path.exists():
        frame = pd.read_csv(history_path)
        history = tuple(
            LossRecord(int(row.epoch), Split(row.split), LossKind(row.loss_kind), float(row.value))
            for row in frame.itertuples(index=False)
        )
    return TrainedLoca(
        encoder=encoder,
        decoder=decoder,
        sigma_used=float(summary["sigma_used"]),
        loss_history=history,
        seed=int(summary["seed"]),
        embedding_dim=int(summary["embedding_dim"]),
        best_validation=tuple(summary.get("best_validation", ())),
        validation_indices=tuple(summary.get("validation_indices", ())),
    )


# ----------------------------------------------------------------------------
# Datasets
# ----------------------------------------------------------------------------

def save_dataset(dataset: BurstDataset, path: PathLike) -> Path:
    path = _npz_path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "magic": DATASET_MAGIC,
        "version": FORMAT_VERSION,
        "N": dataset.n_clouds,
        "M": dataset.cloud_size,
        "D": dataset.ambient_dim,
        "d": dataset.latent_dim,
        "sigma": dataset.sigma,
    }
    arrays = {"anchors": dataset.anchors, "clouds": dataset.clouds}
    if dataset.latents is not None:
        arrays["latents"] = dataset.latents
    np.savez(path, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    logger.info(f"Saved dataset {dataset.clouds.shape} to {path}")
    return path


def load_dataset(path: PathLike) -> BurstDataset:
    arrays = _read_archive(path, DATASET_MAGIC)
    header = arrays["header"]
    try:
        dataset = BurstDataset(
            anchors=arrays["anchors"],
            clouds=arrays["clouds"],
            sigma=header.get("sigma"),
            latents=arrays.get("latents"),
        )
    except KeyError as exc:
        raise ModelFormatError(f"{path} is missing dataset array {exc}")
    expected = (header.get("N"), header.get("M"), header.get("D"))
    if dataset.clouds.shape != expected:
        raise ModelFormatError(f"{path} header says {expected} but clouds are {dataset.clouds.shape}")
    return dataset


# ----------------------------------------------------------------------------
# Tables
# ----------------------------------------------------------------------------

def coords_frame(coords: np.ndarray) -> pd.DataFrame:
    """Embedding rows as a table with columns index, coord_1..coord_d."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    frame = pd.DataFrame(coords, columns=[f"coord_{k + 1}" for k in range(coords.shape[1])])
    frame.insert(0, "index", np.arange(coords.shape[0]))
    return frame


def read_points_csv(path: PathLike) -> np.ndarray:
    """Points from a CSV; an `index` column, if present, is dropped."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"file not found: {path}")
    frame = pd.read_csv(path)
    if "index" in frame.columns:
        frame = frame.drop(columns="index")
    return frame.to_numpy(dtype=np.float64)


def spectral_summary(embedding: SpectralEmbedding) -> Dict[str, Any]:
    return {
        "epsilon": embedding.epsilon,
        "eigenvalues": embedding.eigenvalues.tolist(),
        "t": embedding.t,
    }
