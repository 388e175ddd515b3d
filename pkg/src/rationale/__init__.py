"""Token-level rationale extraction for long-document classification.

A desk-scale library and CLI for training and evaluating soft-attention
rationale extractors: weighted and ranked token supervision over a windowed
long-document encoder, and a compositional variant that encodes sentences
independently and pools them with a ranked soft attention layer.  Includes
uniform-random and attention-top-k baselines, token/document metrics, a
synthetic rationale-planting data harness, and HTML highlight reports.
"""

from .data import Dataset, Document, SynthSpec, ged_preset, sentiment_preset, synth_generate
from .encoder import EncoderConfig, Vocab
from .head import HeadConfig, Prediction, SoftAttentionParams
from .metrics import EvalReport
from .tensor import Tensor, finite_difference_grad
from .training import Model, TrainConfig, load_checkpoint, predict_dataset, run_training

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Document",
    "EncoderConfig",
    "EvalReport",
    "HeadConfig",
    "Model",
    "Prediction",
    "SoftAttentionParams",
    "SynthSpec",
    "Tensor",
    "TrainConfig",
    "Vocab",
    "finite_difference_grad",
    "ged_preset",
    "load_checkpoint",
    "predict_dataset",
    "run_training",
    "sentiment_preset",
    "synth_generate",
    "__version__",
]
