from .mlp import MLP_INPUT_DIM, MLP_SIZES, MlpClassifier, accuracy, nll_loss
from .seq2seq import Seq2seqAttention, Seq2seqConfig, ce_loss
from .transformer import TinyTransformerEncoder, TransformerConfig, impute, mlm_loss

__all__ = [
    "MLP_INPUT_DIM",
    "MLP_SIZES",
    "MlpClassifier",
    "Seq2seqAttention",
    "Seq2seqConfig",
    "TinyTransformerEncoder",
    "TransformerConfig",
    "accuracy",
    "ce_loss",
    "impute",
    "mlm_loss",
    "nll_loss",
]
