"""Sequential cardiac motion tracking with bi-directional state-space scanning."""

from .encoder import WindowSpec, pair_images
from .model import MCM, predict_motion

__version__ = "0.1.0"

__all__ = ["MCM", "WindowSpec", "pair_images", "predict_motion"]
