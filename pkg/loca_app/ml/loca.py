"""
LOCA: training an encoder whose embedded bursts are whitened, together
with a decoder that inverts it.

Run `train_loca(dataset, config)` to get a TrainedLoca; `encode` and
`decode` are the out-of-sample extension and its inverse.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from core.constants import DimensionRule, LossKind, Split
from core.exceptions import (
    ConfigurationError,
    EstimationError,
    LocaError,
    NumericError,
    ShapeError,
    TrainingDivergedError,
)
from core.logging import get_logger
from ml.datasets import BurstDataset
from ml.losses import batched_covariance, whitening_value
from ml.nn import AdamState, MLPModel, adam_step, backward, mlp_forward, mlp_init
from schemas.config import TrainConfig

logger = get_logger(__name__)

# clouds per forward pass when evaluating losses
EVAL_CHUNK_CLOUDS = 512

# eigenvalues below this fraction of the largest one do not count towards a burst's rank
BURST_RANK_REL_TOL = 0.05


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    split: Split
    loss_kind: LossKind
    value: float


@dataclass(frozen=True, eq=False)
class TrainedLoca:
    encoder: MLPModel
    decoder: MLPModel
    sigma_used: float
    loss_history: Tuple[LossRecord, ...]
    seed: int
    embedding_dim: int
    best_validation: Tuple[float, ...] = ()
    validation_indices: Tuple[int, ...] = ()

    def __post_init__(self):
        if not self.encoder.output_dim == self.decoder.input_dim == self.embedding_dim:
            raise ShapeError(
                f"encoder output {self.encoder.output_dim}, decoder input {self.decoder.input_dim} "
                f"and embedding_dim {self.embedding_dim} must agree"
            )
        if self.decoder.output_dim != self.encoder.input_dim:
            raise ShapeError(
                f"decoder output {self.decoder.output_dim} does not match ambient dim {self.encoder.input_dim}"
            )
        if not self.sigma_used > 0:
            raise ConfigurationError(f"sigma_used must be positive, got {self.sigma_used}")

    @property
    def ambient_dim(self) -> int:
        return self.encoder.input_dim

    def history_frame(self) -> pd.DataFrame:
        """Loss history as a table with columns epoch, split, loss_kind, value."""
        return pd.DataFrame(
            [(r.epoch, r.split.value, r.loss_kind.value, r.value) for r in self.loss_history],
            columns=["epoch", "split", "loss_kind", "value"],
        )

    def final_validation(self) -> Dict[LossKind, float]:
        """Last recorded validation value of each loss."""
        latest: Dict[LossKind, float] = {}
        for record in self.loss_history:
            if record.split is Split.VALIDATION:
                latest[record.loss_kind] = record.value
        return latest


@dataclass(frozen=True)
class DimensionEstimate:
    """Outcome of a dimension sweep; `selected_dim` follows `rule`."""

    selected_dim: int
    burst_rank: int
    rule: DimensionRule = DimensionRule.RAW_LOSS
    raw_loss_dim: Optional[int] = None
    rank_score_dim: Optional[int] = None
    whitening_losses: Dict[int, float] = field(default_factory=dict)
    scores: Dict[int, float] = field(default_factory=dict)
    failed_dims: Tuple[int, ...] = ()


# ----------------------------------------------------------------------------
# Loss evaluation
# ----------------------------------------------------------------------------

def _embed_clouds(encoder: MLPModel, clouds: np.ndarray) -> np.ndarray:
    n_clouds, m, dim = clouds.shape
    return mlp_forward(encoder, clouds.reshape(n_clouds * m, dim)).reshape(n_clouds, m, -1)


def whitening_loss(encoder: MLPModel, dataset: BurstDataset, sigma: float) -> float:
    """Mean over clouds of ||C(encoder(Y_i)) / sigma^2 - I||_F^2."""
    total, count = 0.0, 0
    for start in range(0, dataset.n_clouds, EVAL_CHUNK_CLOUDS):
        chunk = dataset.clouds[start:start + EVAL_CHUNK_CLOUDS]
        value, n = whitening_value(_embed_clouds(encoder, chunk), sigma)
        total += value
        count += n
    return total / count


def reconstruction_loss(encoder: MLPModel, decoder: MLPModel, dataset: BurstDataset) -> float:
    """Mean squared reconstruction error over all N*M cloud points."""
    if decoder.input_dim != encoder.output_dim or decoder.output_dim != dataset.ambient_dim:
        raise ShapeError(
            f"decoder {decoder.input_dim}->{decoder.output_dim} cannot invert encoder "
            f"{encoder.input_dim}->{encoder.output_dim}"
        )
    total = 0.0
    points = dataset.points()
    chunk_rows = EVAL_CHUNK_CLOUDS * dataset.cloud_size
    for start in range(0, points.shape[0], chunk_rows):
        chunk = points[start:start + chunk_rows]
        residual = mlp_forward(decoder, mlp_forward(encoder, chunk)) - chunk
        total += float(np.sum(residual ** 2))
    return total / points.shape[0]


def _burst_spectra(clouds: np.ndarray) -> np.ndarray:
    """Eigenvalues of each cloud's covariance, descending, B x k."""
    cov, _ = batched_covariance(clouds)
    return np.linalg.eigvalsh(cov)[:, ::-1]


def estimate_sigma2(dataset: BurstDataset) -> float:
    """Median over clouds of the largest eigenvalue of the ambient burst covariance."""
    top = _burst_spectra(dataset.clouds)[:, 0]
    top = top[top > 0]
    if top.size == 0:
        raise EstimationError("every burst has zero covariance; sigma cannot be estimated")
    sigma2 = float(np.median(top))
    logger.info(f"Estimated sigma^2 = {sigma2:.6g} from {top.size} bursts")
    return sigma2


def estimate_burst_rank(dataset: BurstDataset, rel_tol: float = BURST_RANK_REL_TOL) -> int:
    """Median number of significant eigenvalues of the ambient burst covariances."""
    spectra = _burst_spectra(dataset.clouds)
    top = spectra[:, :1]
    valid = top[:, 0] > 0
    if not np.any(valid):
        raise EstimationError("every burst has zero covariance; its rank is undefined")
    counts = np.sum(spectra[valid] > rel_tol * top[valid], axis=1)
    return int(round(float(np.median(counts))))


# ----------------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------------

def _resolve_sigma(dataset: BurstDataset, config: TrainConfig) -> float:
    if config.sigma is not None:
        return float(config.sigma)
    if dataset.sigma is not None:
        return dataset.sigma
    sigma = float(np.sqrt(estimate_sigma2(dataset)))
    logger.info(f"Dataset has no sigma; training with the estimate {sigma:.6g} (global scale is arbitrary)")
    return sigma


def _split_clouds(n_clouds: int, config: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    if n_clouds < 2:
        raise ConfigurationError("training needs at least two clouds for a train/validation split")
    train_idx, val_idx = train_test_split(
        np.arange(n_clouds),
        test_size=config.validation_fraction,
        random_state=config.seed,
        shuffle=True,
    )
    return np.sort(train_idx), np.sort(val_idx)


def _initial_models(
    dataset: BurstDataset,
    config: TrainConfig,
    initial: Optional[Tuple[MLPModel, MLPModel]],
    encoder_seed: np.random.SeedSequence,
    decoder_seed: np.random.SeedSequence,
) -> Tuple[MLPModel, MLPModel]:
    if initial is not None:
        encoder, decoder = initial
    else:
        encoder = mlp_init(
            [dataset.ambient_dim] + list(config.encoder_layers),
            config.encoder_activation,
            config.linear_tail,
            seed=int(encoder_seed.generate_state(1)[0]),
        )
        decoder = mlp_init(
            [config.encoder_layers[-1]] + list(config.decoder_layers),
            config.decoder_activation,
            config.linear_tail,
            seed=int(decoder_seed.generate_state(1)[0]),
        )
    if encoder.input_dim != dataset.ambient_dim:
        raise ShapeError(f"encoder input {encoder.input_dim} does not match ambient dim {dataset.ambient_dim}")
    if decoder.output_dim != dataset.ambient_dim:
        raise ConfigurationError(
            f"decoder must end with the ambient dimension {dataset.ambient_dim}, got {decoder.output_dim}"
        )
    if decoder.input_dim != encoder.output_dim:
        raise ShapeError(f"decoder input {decoder.input_dim} does not match encoder output {encoder.output_dim}")
    return encoder, decoder


def train_loca(
    dataset: BurstDataset,
    config: TrainConfig,
    *,
    initial: Optional[Tuple[MLPModel, MLPModel]] = None,
) -> TrainedLoca:
    """
    Train encoder and decoder with per-epoch alternation of the two losses.

    Each epoch runs one pass of whitening updates on the encoder followed by
    one pass of reconstruction updates on encoder and decoder, over the same
    minibatches of whole training clouds. Every `eval_every` epochs the sum
    of validation losses is checked; a learning-rate stage ends after
    `patience` epochs without improvement (or `max_epochs_per_stage`), and
    the best weights are restored before the next stage.
    """
    sigma = _resolve_sigma(dataset, config)
    train_idx, val_idx = _split_clouds(dataset.n_clouds, config)
    if config.batch_clouds > train_idx.size:
        raise ConfigurationError(
            f"batch_clouds={config.batch_clouds} exceeds the {train_idx.size} training clouds"
        )
    validation = dataset.subset(val_idx)

    encoder_seed, decoder_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(3)
    encoder, decoder = _initial_models(dataset, config, initial, encoder_seed, decoder_seed)
    rng = np.random.default_rng(shuffle_seed)

    history: List[LossRecord] = []
    best_trace: List[float] = []

    def evaluate(epoch: int, enc: MLPModel, dec: MLPModel, lr: float) -> float:
        white = whitening_loss(enc, validation, sigma)
        recon = reconstruction_loss(enc, dec, validation)
        if not (np.isfinite(white) and np.isfinite(recon)):
            raise TrainingDivergedError(epoch, lr, f"Non-finite validation loss at epoch {epoch}")
        history.append(LossRecord(epoch, Split.VALIDATION, LossKind.WHITENING, white))
        history.append(LossRecord(epoch, Split.VALIDATION, LossKind.RECONSTRUCTION, recon))
        return white + recon

    logger.info(
        f"Training LOCA: {train_idx.size} train / {val_idx.size} validation clouds, "
        f"M={dataset.cloud_size}, D={dataset.ambient_dim}, d={encoder.output_dim}, sigma={sigma:.6g}"
    )

    epoch = 0
    best_value = evaluate(epoch, encoder, decoder, config.lr_schedule[0])
    best_encoder, best_decoder = encoder, decoder
    best_trace.append(best_value)

    for stage, lr in enumerate(config.lr_schedule):
        encoder, decoder = best_encoder, best_decoder
        white_state = AdamState.zeros_like(encoder)
        recon_enc_state = AdamState.zeros_like(encoder)
        recon_dec_state = AdamState.zeros_like(decoder)
        last_improvement = epoch
        stage_epochs = 0
        evaluated = True

        while epoch - last_improvement < config.patience:
            if config.max_epochs_per_stage is not None and stage_epochs >= config.max_epochs_per_stage:
                break
            epoch += 1
            stage_epochs += 1
            order = rng.permutation(train_idx)
            batches = [order[i:i + config.batch_clouds] for i in range(0, order.size, config.batch_clouds)]

            try:
                white_sum = 0.0
                for batch in batches:
                    grads = backward(encoder, LossKind.WHITENING, dataset.clouds[batch], sigma=sigma)
                    if not np.isfinite(grads.loss):
                        raise TrainingDivergedError(epoch, lr)
                    white_sum += grads.loss * batch.size
                    white_state, encoder = adam_step(white_state, encoder, grads.encoder, lr)

                recon_sum = 0.0
                for batch in batches:
                    grads = backward(encoder, LossKind.RECONSTRUCTION, dataset.clouds[batch], decoder=decoder)
                    if not np.isfinite(grads.loss):
                        raise TrainingDivergedError(epoch, lr)
                    recon_sum += grads.loss * batch.size
                    recon_enc_state, encoder = adam_step(recon_enc_state, encoder, grads.encoder, lr)
                    recon_dec_state, decoder = adam_step(recon_dec_state, decoder, grads.decoder, lr)
            except TrainingDivergedError:
                raise
            except NumericError as exc:
                raise TrainingDivergedError(epoch, lr, f"{exc.detail} at epoch {epoch}") from exc

            history.append(LossRecord(epoch, Split.TRAIN, LossKind.WHITENING, white_sum / order.size))
            history.append(LossRecord(epoch, Split.TRAIN, LossKind.RECONSTRUCTION, recon_sum / order.size))

            evaluated = epoch % config.eval_every == 0
            if evaluated:
                value = evaluate(epoch, encoder, decoder, lr)
                if value < best_value:
                    best_value = value
                    best_encoder, best_decoder = encoder, decoder
                    last_improvement = epoch
                best_trace.append(best_value)
                logger.info(
                    f"epoch {epoch} lr={lr:g}: validation loss {value:.6g} (best {best_value:.6g})"
                )

        if not evaluated:
            value = evaluate(epoch, encoder, decoder, lr)
            if value < best_value:
                best_value = value
                best_encoder, best_decoder = encoder, decoder
            best_trace.append(best_value)

        logger.info(
            f"Stage {stage + 1}/{len(config.lr_schedule)} (lr={lr:g}) stopped after {stage_epochs} epochs, "
            f"best validation loss {best_value:.6g}"
        )

    return TrainedLoca(
        encoder=best_encoder,
        decoder=best_decoder,
        sigma_used=sigma,
        loss_history=tuple(history),
        seed=config.seed,
        embedding_dim=best_encoder.output_dim,
        best_validation=tuple(best_trace),
        validation_indices=tuple(int(i) for i in val_idx),
    )


# ----------------------------------------------------------------------------
# Inference
# ----------------------------------------------------------------------------

def encode(model: TrainedLoca, points: np.ndarray) -> np.ndarray:
    """Embed K x D points; extrapolation beyond the training data is permitted."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        return np.empty((0, model.embedding_dim))
    return mlp_forward(model.encoder, points)


def decode(model: TrainedLoca, codes: np.ndarray) -> np.ndarray:
    """Map K x d codes back to the ambient space."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.size == 0:
        return np.empty((0, model.ambient_dim))
    return mlp_forward(model.decoder, codes)


# ----------------------------------------------------------------------------
# Embedding dimension
# ----------------------------------------------------------------------------

def whitening_rank_score(embedded: np.ndarray, sigma: float, burst_rank: int) -> float:
    """
    Whitening deviation restricted to the directions a burst actually spans.

    Per cloud, the top min(d, k) eigenvalues of C / sigma^2 are compared with
    1 and each of the k - min(d, k) directions the embedding cannot hold adds
    a full unit of loss.
    """
    d = embedded.shape[2]
    q = min(d, burst_rank)
    spectra = _burst_spectra(embedded) / (sigma * sigma)
    per_cloud = np.sum((spectra[:, :q] - 1.0) ** 2, axis=1) + (burst_rank - q)
    return float(np.mean(per_cloud))


def select_dimension(values: Dict[int, float], tau: float = 2.0, atol: float = 0.0) -> int:
    """Smallest dimension whose value is at most max(tau * best, best + atol)."""
    if not values:
        raise EstimationError("no dimension to select from")
    if tau < 1:
        raise ConfigurationError(f"tau must be at least 1, got {tau}")
    best = min(values.values())
    threshold = max(tau * best, best + atol)
    return min(dim for dim, value in values.items() if value <= threshold)


def estimate_embedding_dim(
    dataset: BurstDataset,
    d_max: int,
    config: TrainConfig,
    *,
    rule: DimensionRule = DimensionRule.RAW_LOSS,
    tau: float = 2.0,
    atol: float = 0.05,
) -> DimensionEstimate:
    """
    Train LOCA for d = 1..d_max and pick an embedding dimension.

    The raw-loss rule takes the smallest d whose validation whitening loss
    is within a factor `tau` of the lowest one. The rank-score rule applies
    the same factor, widened by `atol`, to `whitening_rank_score`. Both
    choices are reported; `rule` decides which one is `selected_dim`.
    """
    if d_max < 1:
        raise ConfigurationError(f"d_max must be at least 1, got {d_max}")
    rule = DimensionRule(rule)
    sigma = _resolve_sigma(dataset, config)
    burst_rank = estimate_burst_rank(dataset)
    logger.info(f"Dimension sweep 1..{d_max}, burst rank {burst_rank}")

    losses: Dict[int, float] = {}
    scores: Dict[int, float] = {}
    failed: List[int] = []
    for dim in range(1, d_max + 1):
        dim_config = config.with_embedding_dim(dim).model_copy(update={"sigma": sigma})
        try:
            trained = train_loca(dataset, dim_config)
        except LocaError as exc:
            logger.warning(f"Skipping embedding dimension {dim}: {exc.detail}")
            failed.append(dim)
            continue
        validation = dataset.subset(trained.validation_indices)
        losses[dim] = whitening_loss(trained.encoder, validation, sigma)
        embedded = np.concatenate(
            [
                _embed_clouds(trained.encoder, validation.clouds[i:i + EVAL_CHUNK_CLOUDS])
                for i in range(0, validation.n_clouds, EVAL_CHUNK_CLOUDS)
            ]
        )
        scores[dim] = whitening_rank_score(embedded, sigma, burst_rank)
        logger.info(f"d={dim}: validation whitening loss {losses[dim]:.6g}, rank score {scores[dim]:.6g}")

    if not scores:
        raise EstimationError(f"training failed for every dimension 1..{d_max}")
    raw_loss_dim = select_dimension(losses, tau)
    rank_score_dim = select_dimension(scores, tau, atol)
    selected = raw_loss_dim if rule is DimensionRule.RAW_LOSS else rank_score_dim
    logger.info(
        f"Selected embedding dimension {selected} by {rule.value} "
        f"(raw loss: {raw_loss_dim}, rank score: {rank_score_dim})"
    )
    return DimensionEstimate(
        selected_dim=selected,
        burst_rank=burst_rank,
        rule=rule,
        raw_loss_dim=raw_loss_dim,
        rank_score_dim=rank_score_dim,
        whitening_losses=losses,
        scores=scores,
        failed_dims=tuple(failed),
    )


def embedded_covariances(model: TrainedLoca, clouds: Sequence[np.ndarray]) -> np.ndarray:
    """Covariances of the embedded clouds, B x d x d."""
    cov, _ = batched_covariance(_embed_clouds(model.encoder, np.asarray(clouds, dtype=np.float64)))
    return cov
