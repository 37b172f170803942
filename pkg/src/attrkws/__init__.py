"""Language-universal spoken keyword recognition with articulatory attribute tokens."""

__version__ = "0.1.0"
