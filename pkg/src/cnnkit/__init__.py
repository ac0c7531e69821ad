"""cnnkit: a from-scratch CNN training and benchmarking engine.

Core pieces: numpy NCHW kernels with exact backward passes
(:mod:`cnnkit.tensor_ops`), stateful layers (:mod:`cnnkit.layers`), the
compact 3-block classifier (:mod:`cnnkit.model`), Adam plus LR/stopping
state machines (:mod:`cnnkit.optim`), a deterministic stratified data
pipeline (:mod:`cnnkit.data`), macro metrics (:mod:`cnnkit.metrics`), and
the training harness and CLI (:mod:`cnnkit.train`, :mod:`cnnkit.cli`).
"""

from .data import AugmentConfig, scan_dataset, stratified_split
from .metrics import ConfusionMatrix, MetricsReport
from .model import CustomCNN, ModelConfig, buffer_count, model_size_mb, param_count
from .optim import Adam, EarlyStopper, ReduceLROnPlateau
from .train import RunArtifacts, TrainConfig, run_eval, run_train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AugmentConfig",
    "ConfusionMatrix",
    "CustomCNN",
    "EarlyStopper",
    "MetricsReport",
    "ModelConfig",
    "ReduceLROnPlateau",
    "RunArtifacts",
    "TrainConfig",
    "buffer_count",
    "model_size_mb",
    "param_count",
    "run_eval",
    "run_train",
    "scan_dataset",
    "stratified_split",
    "__version__",
]
