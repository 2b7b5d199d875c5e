"""Encoder-decoder transformer for code-edit prediction with statement-aware
relative position encoding."""

from .attention import AttentionMasks, ConfigError, clip, multi_head, scaled_dot_attention
from .codeprep import Vocabulary, abstract, build_vocab, deabstract, statement_boundaries, tokenize
from .model import Batch, ModelConfig, Transformer
from .stmtmask import mask_naive, mask_vectorized
from .tensor import Tensor, check_gradients, no_grad

__version__ = "0.1.0"

__all__ = [
    "AttentionMasks", "Batch", "ConfigError", "ModelConfig", "Tensor", "Transformer", "Vocabulary",
    "abstract", "build_vocab", "check_gradients", "clip", "deabstract", "mask_naive",
    "mask_vectorized", "multi_head", "no_grad", "scaled_dot_attention", "statement_boundaries",
    "tokenize",
]
