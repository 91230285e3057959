from typing import Any, Optional


class LocaError(Exception):
    exit_code = 1
    default_detail = 'Error occurred while computing the embedding'
    default_code = 'loca_error'

    def __init__(self, detail: Optional[str] = None, **context: Any):
        self.detail = detail or self.default_detail
        self.code = self.default_code
        self.context = context
        super().__init__(self.detail)


class ConfigurationError(LocaError):
    exit_code = 2
    default_detail = 'Invalid configuration'
    default_code = 'configuration_error'


class UsageError(ConfigurationError):
    default_detail = 'Invalid command line usage'
    default_code = 'usage_error'


class ShapeError(LocaError):
    default_detail = 'Array dimensions do not match'
    default_code = 'shape_error'


class NumericError(LocaError):
    default_detail = 'Non-finite value encountered'
    default_code = 'numeric_error'

    def __init__(self, detail: Optional[str] = None, location: Optional[str] = None, **context: Any):
        super().__init__(detail, location=location, **context)
        self.location = location


class TrainingDivergedError(NumericError):
    default_detail = 'Training diverged'
    default_code = 'training_diverged'

    def __init__(self, epoch: int, learning_rate: float, detail: Optional[str] = None):
        super().__init__(
            detail or f'Non-finite loss at epoch {epoch} with learning rate {learning_rate:g}',
            location=f'epoch {epoch}',
            epoch=epoch,
            learning_rate=learning_rate,
        )
        self.epoch = epoch
        self.learning_rate = learning_rate


class DegenerateCloudError(LocaError):
    default_detail = 'A burst needs at least two points'
    default_code = 'degenerate_cloud'


class EstimationError(LocaError):
    default_detail = 'Could not estimate the requested quantity'
    default_code = 'estimation_error'


class RegionError(LocaError):
    default_detail = 'Could not sample the requested region'
    default_code = 'region_error'


class SingularityError(LocaError):
    default_detail = 'Point lies on a singularity of the map'
    default_code = 'singularity'


class DegenerateBandwidthError(LocaError):
    default_detail = 'All nearest-neighbour distances are zero'
    default_code = 'degenerate_bandwidth'


class DegenerateEmbeddingError(LocaError):
    default_detail = 'All embedded distances are zero'
    default_code = 'degenerate_embedding'


class CalibrationError(LocaError):
    default_detail = 'Calibration points are rank deficient'
    default_code = 'calibration_error'


class ModelFormatError(LocaError):
    default_detail = 'File is not a recognised model or dataset'
    default_code = 'model_format'


class OutputLockedError(LocaError):
    default_detail = 'Output directory is in use by another run'
    default_code = 'output_locked'


class ExperimentStageError(LocaError):
    default_detail = 'Experiment stage failed'
    default_code = 'experiment_failed'

    def __init__(self, stage: str, detail: Optional[str] = None, exit_code: int = 1):
        super().__init__(detail or f'Stage {stage!r} failed', stage=stage)
        self.stage = stage
        self.exit_code = exit_code
