"""2D-pose-to-3D-mesh lifting on a coarse-to-fine mesh-graph hierarchy."""

from meshlift.tensor import Tape, Tensor, backward, gradient_check

__all__ = ["Tape", "Tensor", "backward", "gradient_check"]

__version__ = "0.1.0"
