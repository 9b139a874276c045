"""SCCAM: supervised-contrastive convolutional attention for interpretable fault diagnosis."""

__version__ = "0.1.0"
