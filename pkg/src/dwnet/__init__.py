"""dwnet: double-weight neural networks with a benchmark comparison harness.

A double-weight dense layer learns two weight matrices whose element-wise
product forms the effective weight; this package trains such networks from
scratch (float64 numpy, no autodiff framework) and measures them against
standard networks with a multi-seed protocol and Welch's t-test.
"""

from .data import BatchIterator, Dataset, FormatError, load_cifar10, load_idx, \
    make_synthetic_digits, make_toy_dataset, one_hot
from .layers import activation_apply, activation_grad, conv2d_backward, \
    conv2d_forward, dense_backward, dense_forward, loss_and_grad
from .network import ConvSpec, DenseSpec, Model, NetworkSpec, SpecError, \
    build_network, gradient_check, preset
from .stats import AccuracyCurve, ComparisonReport, DegenerateInputError, \
    SeedSummary, run_comparison, summarize_run, welch_t_test
from .tensor import DimensionError, Rng, argmax_row, derive_seed, \
    draw_truncated_normal, hadamard, matmul
from .training import Adam, TrainingDiverged, evaluate_accuracy, load_checkpoint, \
    save_checkpoint, train

__version__ = "0.1.0"
