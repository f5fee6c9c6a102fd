"""Recurrent neural channel codes with convolutional-code baselines.

Subpackages: ``autodiff`` (tape-based reverse mode), ``channels``, ``conv``
(codes and Viterbi), ``neural`` (Channel AE and LEARN), ``training``,
``evaluation``, ``config`` and ``cli``.
"""

from .channels import ChannelSpec, NoiseStream, apply_channel, snr_to_sigma
from .errors import (
    ConfigurationError,
    DegenerateEncoderError,
    DivergenceError,
    InputError,
    LearnCodesError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelSpec", "NoiseStream", "apply_channel", "snr_to_sigma",
    "ConfigurationError", "DegenerateEncoderError", "DivergenceError", "InputError",
    "LearnCodesError", "UsageError", "__version__",
]
