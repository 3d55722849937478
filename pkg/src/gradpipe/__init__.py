"""gradpipe: module-parallel neural-network training with delayed gradients.

A feedforward network is split into K contiguous modules. Forward passes run
sequentially across modules; backward passes run in parallel, each module
applying the gradient of the sample it forwarded K-k iterations earlier,
reconstructed exactly from snapshotted weights and activations. Includes SGD
and Adam update rules, a single-threaded reference executor, a thread-parallel
executor that must match it bitwise, and an empirical lab for the associated
non-convex convergence bounds.
"""

__version__ = "0.1.0"

from .config import RunConfig
from .data import BatchSampler, Dataset, load_idx, next_batch, synth_blobs
from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    GradpipeError,
    IdxParseError,
    NumericError,
    ScheduleError,
    ShapeError,
)
from .layers import (
    Affine,
    LayerState,
    MseHead,
    Relu,
    SoftmaxCrossEntropyHead,
    Tanh,
    full_backprop,
    init_network,
    loss_and_prediction,
)
from .optim import (
    AdamOptimizer,
    DiminishingSchedule,
    FixedSchedule,
    OptimizerConfig,
    SgdOptimizer,
)
from .partition import Partition, is_warmup, make_partition, source_iteration
from .pipeline import EmulatedPipeline, ParallelPipeline, build_pipeline
from .tensor import RandomSource, matmul
from .training import TrainResult, evaluate, train

__all__ = [
    "__version__",
    "RunConfig",
    "BatchSampler",
    "Dataset",
    "load_idx",
    "next_batch",
    "synth_blobs",
    "GradpipeError",
    "ConfigError",
    "ContractError",
    "DomainError",
    "IdxParseError",
    "NumericError",
    "ScheduleError",
    "ShapeError",
    "Affine",
    "Relu",
    "Tanh",
    "SoftmaxCrossEntropyHead",
    "MseHead",
    "LayerState",
    "init_network",
    "full_backprop",
    "loss_and_prediction",
    "SgdOptimizer",
    "AdamOptimizer",
    "OptimizerConfig",
    "FixedSchedule",
    "DiminishingSchedule",
    "Partition",
    "make_partition",
    "is_warmup",
    "source_iteration",
    "EmulatedPipeline",
    "ParallelPipeline",
    "build_pipeline",
    "RandomSource",
    "matmul",
    "TrainResult",
    "train",
    "evaluate",
]
