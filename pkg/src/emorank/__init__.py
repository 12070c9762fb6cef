"""Emotion-recognition training toolkit with ranking-based co-training.

Synthesizes compound-expression images by blending pairs of basic-expression
images, trains a small classifier with a focal + margin-ranking objective,
pseudo-labels unlabeled data behind per-class dynamic confidence thresholds,
and reports calibration (ECE / MCE / AECE) and compound top-2 accuracy.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
