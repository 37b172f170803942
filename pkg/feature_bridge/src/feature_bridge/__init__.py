"""Bridge from pretrained self-supervised audio models to KWSP feature files."""

__version__ = "0.1.0"
