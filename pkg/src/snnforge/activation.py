"""Quantized activations for conversion-ready ANNs.

QCFS is the quantize-clip-floor-shift staircase whose levels coincide with the
average postsynaptic potentials an IF neuron can reach in ``L`` steps. NQ adds
per-layer Gaussian noise of intensity ``delta`` on top of QCFS so the ANN is
trained against a model of the SNN's residual error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from snnforge.errors import ShapeMismatch
from snnforge.tensor import DTYPE, RandomSource, check_finite, gaussian

LAMBDA_MIN = 1e-3
LAMBDA_INIT = 8.0


def _f32(value: float) -> float:
    return float(np.float32(value))


@dataclass
class QuantActParams:
    """Per-layer activation parameters.

    ``lam`` is the trainable clipping threshold (copied to the SNN threshold on
    conversion), ``L`` the number of quantization levels and ``delta`` the noise
    intensity. ``lam`` and ``delta`` are always stored as float32-representable
    values so the ANN and the converted SNN see identical numbers.
    """

    lam: float = LAMBDA_INIT
    L: int = 4
    delta: float = 0.0

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L}")
        self.L = int(self.L)
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        self.lam = _f32(self.lam)
        self.delta = _f32(self.delta)

    def set_lambda(self, value: float) -> None:
        self.lam = _f32(max(value, LAMBDA_MIN))

    def set_delta(self, value: float) -> None:
        if not value >= 0:
            raise ValueError(f"delta must be nonnegative, got {value}")
        self.delta = _f32(value)


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(z, dtype=DTYPE), DTYPE(0))


def qcfs_forward(z: np.ndarray, p: QuantActParams) -> np.ndarray:
    """``lam * clip(floor(z*L/lam + 0.5) / L, 0, 1)`` elementwise, in float32."""
    z = np.asarray(z, dtype=DTYPE)
    check_finite(z, "activation input")
    lam = DTYPE(p.lam)
    L = DTYPE(p.L)
    steps = np.floor(z * L / lam + DTYPE(0.5))
    return lam * np.clip(steps / L, DTYPE(0), DTYPE(1))


def nq_forward(z: np.ndarray, p: QuantActParams, rs: RandomSource) -> np.ndarray:
    """QCFS plus ``delta * G`` with fresh standard-normal ``G`` per element.

    Noise is always drawn, so with ``delta == 0`` the result is QCFS bit for bit
    while the random stream still advances the same way.
    """
    q = qcfs_forward(z, p)
    noise = gaussian(rs, q.shape)
    return q + DTYPE(p.delta) * noise


def act_backward(z: np.ndarray, p: QuantActParams, grad_out: np.ndarray) -> tuple[np.ndarray, float]:
    """Straight-through gradient of the quantizer viewed as ``clip(z, 0, lam)``.

    Returns ``(grad_z, grad_lambda)``; the additive noise contributes nothing.
    """
    z = np.asarray(z, dtype=DTYPE)
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if z.shape != grad_out.shape:
        raise ShapeMismatch(f"z {z.shape} and grad_out {grad_out.shape} differ")
    lam = DTYPE(p.lam)
    inside = (z > 0) & (z < lam)
    grad_z = np.where(inside, grad_out, DTYPE(0))
    grad_lambda = float(np.sum(grad_out[z >= lam], dtype=np.float64))
    return grad_z, grad_lambda
