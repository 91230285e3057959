from enum import Enum


class Activation(str, Enum):
    TANH = "tanh"
    LEAKY_RELU = "leaky_relu"


class LossKind(str, Enum):
    WHITENING = "whitening"
    RECONSTRUCTION = "reconstruction"


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"


class RegionKind(str, Enum):
    UNIT_SQUARE = "unit_square"
    FRAME = "frame"
    RECTANGLE = "rectangle"


class MapKind(str, Enum):
    LINEAR = "linear"
    F1 = "f1"
    STEREOGRAPHIC = "stereographic"


class BaselineKind(str, Enum):
    DM = "dm"
    ADM = "adm"


class ExperimentName(str, Enum):
    MUSHROOM = "mushroom"
    FRAME_OOS = "frame_oos"
    FRAME_INTERP = "frame_interp"
    SPHERE = "sphere"
    WIFI = "wifi"
    DIM_SWEEP = "dim_sweep"
    LEMMA1 = "lemma1"


class DimensionRule(str, Enum):
    RAW_LOSS = "raw_loss"
    RANK_SCORE = "rank_score"


# leaky_relu negative slope
LEAKY_SLOPE = 0.01

# ADAM defaults
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

MODEL_MAGIC = "LOCA-MLP"
DATASET_MAGIC = "LOCA-BURSTS"
FORMAT_VERSION = 1

# Points closer than this to the north pole cannot be projected
POLE_TOLERANCE = 1e-9

MAX_REJECTION_ATTEMPTS = 1_000_000
