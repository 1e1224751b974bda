"""Noise-compensated ANN training and lossless conversion to integrate-and-fire SNNs."""

from snnforge.activation import QuantActParams, act_backward, nq_forward, qcfs_forward
from snnforge.ann import LayerSpec, NetworkDef, TrainConfig, ann_forward, build_network
from snnforge.calibrate import (
    CalibrationConfig,
    ResidualStats,
    induce_noise,
    measure_residual,
    split_validation,
    train_with_compensation,
)
from snnforge.convert import convert
from snnforge.snn import SpikingNetwork, eq5_audit, snn_forward, theoretical_phi
from snnforge.tensor import RandomSource

__version__ = "0.1.0"

__all__ = [
    "CalibrationConfig",
    "LayerSpec",
    "NetworkDef",
    "QuantActParams",
    "RandomSource",
    "ResidualStats",
    "SpikingNetwork",
    "TrainConfig",
    "act_backward",
    "ann_forward",
    "build_network",
    "convert",
    "eq5_audit",
    "induce_noise",
    "measure_residual",
    "nq_forward",
    "qcfs_forward",
    "snn_forward",
    "split_validation",
    "theoretical_phi",
    "train_with_compensation",
]
