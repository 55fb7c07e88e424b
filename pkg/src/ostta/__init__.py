"""Open-set classifier training with unknown-logit activation and a
training-free online rejection stage operating on normalized embeddings."""

__version__ = "0.1.0"
