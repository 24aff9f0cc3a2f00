"""Semi-supervised image classification toolkit.

Implements MixMatch and FixMatch training, transfer-learning and
fully-supervised baselines, and a realistic evaluation protocol
(balanced label subsampling, shared backbone, best-validation-loss
checkpoint selection, two-stage hyperparameter sweeps).
"""

__version__ = "0.1.0"
