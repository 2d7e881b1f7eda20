"""Dual-region visual augmentation for imitation-learning datasets.

Splits each observation into a task-relevant region (augmented with
domain-driven transforms) and its complement (aggressively randomized by
mixing procedurally generated fractal textures), composites the two streams,
and measures how much the resulting policies and encoders generalize via a
random-network-distillation gap metric and saliency analysis.
"""

from .imgcore import Image, Mask, composite, complement, hadamard

__version__ = "0.1.0"

__all__ = ["Image", "Mask", "composite", "complement", "hadamard", "__version__"]
