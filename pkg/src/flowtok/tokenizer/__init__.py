"""Structure tokenizer: encoder, FSQ bottleneck, and flow-matching decoder."""

from .config import PRESETS, TokenizerConfig, preset
from .fsq import FSQ
from .inference import decode_codes, reconstruct
from .model import ConfigMismatchError, Tokenizer

__all__ = ["TokenizerConfig", "PRESETS", "preset", "FSQ", "Tokenizer", "ConfigMismatchError", "decode_codes", "reconstruct"]
