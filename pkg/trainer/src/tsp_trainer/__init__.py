"""Supervised trainer for sparse TSP heatmap networks.

Builds mixed-size labeled datasets, fits the gated graph convolution
network with a bidirectional heat loss, verifies gradients by central
differences, and exports weights in the solver's binary format. All
exchange with the solver happens through files and its command line.
"""

from .data import LabeledCase, build_mixed_dataset, counts_for_mix, prepare_case
from .gradcheck import GradCheckReport, deviation_sweep, gradient_check
from .labels import LabelError, held_karp_perm, pseudo_label_perms
from .loss import SlotLabels, batch_loss, bidirectional_loss, make_labels
from .model import HeatmapNet
from .train import TrainConfig, TrainRecord, TrainResult, cosine_lr, train

__all__ = [
    "GradCheckReport",
    "HeatmapNet",
    "LabelError",
    "LabeledCase",
    "SlotLabels",
    "TrainConfig",
    "TrainRecord",
    "TrainResult",
    "batch_loss",
    "bidirectional_loss",
    "build_mixed_dataset",
    "cosine_lr",
    "counts_for_mix",
    "deviation_sweep",
    "gradient_check",
    "held_karp_perm",
    "make_labels",
    "prepare_case",
    "pseudo_label_perms",
    "train",
]

__version__ = "0.1.0"
