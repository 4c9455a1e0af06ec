"""Hybrid convolutional lumbar-degeneration classifier with pseudo-Newton
feature refinement, L1 gate sparsity and an attention head."""

__version__ = "0.1.0"
