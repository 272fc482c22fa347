"""Federated self-supervised encoders for modulation classification on synthetic I/Q frames."""

__version__ = "0.1.0"

from .classify import SvmModel
from .encoder import EncoderConfig, EncoderParams
from .estimators import FederatedTripletEncoder, LinearSVMClassifier, TripletEncoder
from .signal import ChannelLaw, FrameSet, Modulation

__all__ = [
    "ChannelLaw",
    "EncoderConfig",
    "EncoderParams",
    "FederatedTripletEncoder",
    "FrameSet",
    "LinearSVMClassifier",
    "Modulation",
    "SvmModel",
    "TripletEncoder",
    "__version__",
]
