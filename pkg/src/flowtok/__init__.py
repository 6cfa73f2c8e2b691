"""Flow-matching structure tokenizer for protein backbones."""

__version__ = "0.1.0"
