"""Treatment-response models: the balanced encoder/decoder and comparators."""

from .crn import CrnConfig, CrnDecoder, CrnEncoder, CrnModel
from .baselines import RnnBaseline, RnnConfig
from .msm import LinearBaseline, MsmModel, stabilized_weights
from .rmsn import RmsnModel

__all__ = [
    "CrnConfig", "CrnEncoder", "CrnDecoder", "CrnModel",
    "RnnBaseline", "RnnConfig",
    "LinearBaseline", "MsmModel", "stabilized_weights",
    "RmsnModel",
]
