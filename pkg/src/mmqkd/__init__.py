"""Multi-matrix LDPC reconciliation for QKD post-processing."""

__version__ = "0.1.0"
