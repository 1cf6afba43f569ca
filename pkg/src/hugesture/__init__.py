"""Ultrasonic pulse-Doppler micro hand-gesture recognition on synthetic echoes."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .params import FrameParams, default_params, derive  # noqa: E402

__all__ = ["BACKEND", "FrameParams", "default_params", "derive", "__version__"]
