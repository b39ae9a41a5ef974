"""Few-shot speech emotion transfer with siamese metric learning."""

__version__ = "0.1.0"
