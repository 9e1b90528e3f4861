"""Training and evaluation harness for domain generalization with
self-distilled vision transformers."""

__version__ = "0.1.0"
