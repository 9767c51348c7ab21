"""Bilingual contextual-biasing ASR testbed.

A small, fully self-contained stack: float64 tensors with reverse-mode
differentiation, an encoder/predictor/decoder speech model with a
cross-lingual biasing insert and a hotword biasing branch, synthetic
bilingual corpora, bias-aware error-rate scoring, and a CLI for the
train/eval/ablate workflow.
"""

from .data import CorpusConfig, HotwordList, Lang, Token, Utterance, Vocabulary
from .metrics import EvalReport
from .model import InferenceMode, ModelConfig
from .tensor import Tensor, backward, no_grad
from .training import LossBreakdown, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "CorpusConfig",
    "EvalReport",
    "HotwordList",
    "InferenceMode",
    "Lang",
    "LossBreakdown",
    "ModelConfig",
    "Tensor",
    "Token",
    "TrainConfig",
    "Utterance",
    "Vocabulary",
    "backward",
    "no_grad",
    "__version__",
]
