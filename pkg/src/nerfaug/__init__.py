"""Dual-NeRF dataset augmentation: learn an appearance field and a
density-supervised mask field from a few posed images, then synthesize a
large pose-labeled dataset with randomized viewpoints and appearances while
preserving scene geometry."""

__version__ = "0.1.0"
