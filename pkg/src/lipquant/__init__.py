"""Layer-wise Lipschitz-aware weight quantization for adversarially trained networks."""

__version__ = "0.1.0"
