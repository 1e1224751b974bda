"""Integrate-and-fire simulation with reset-by-subtraction.

A :class:`SpikingNetwork` is a list of stages. Each stage is a run of linear
layers (dense/conv/avgpool/flatten) followed either by a layer of IF neurons
with threshold ``theta`` or, for the last stage, by a non-spiking accumulator
whose time-averaged potential is the readout. All stages advance one step per
global tick; within a step each neuron charges, fires if ``u >= theta`` and
subtracts ``theta`` when it fires.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from snnforge.ann import LayerSpec, linear_forward
from snnforge.errors import ShapeMismatch
from snnforge.tensor import DTYPE, check_finite


@dataclass
class IFLayerState:
    v: np.ndarray
    theta: float
    spike_count: np.ndarray
    v0: np.ndarray | None = None

    @classmethod
    def fresh(cls, shape, theta: float) -> "IFLayerState":
        v0 = np.full(shape, DTYPE(theta) / DTYPE(2), dtype=DTYPE)
        return cls(v0.copy(), theta, np.zeros(shape, dtype=np.int32), v0)


def if_step(state: IFLayerState, input_current: np.ndarray) -> np.ndarray:
    """Advance one step in place and return the binary spike tensor."""
    current = np.asarray(input_current, dtype=DTYPE)
    if current.shape != state.v.shape:
        raise ShapeMismatch(f"current {current.shape} vs membrane {state.v.shape}")
    theta = DTYPE(state.theta)
    u = state.v + current
    check_finite(u, "membrane potential")
    fired = u >= theta
    state.v = np.where(fired, u - theta, u)
    state.spike_count += fired
    return fired.astype(DTYPE)


@dataclass
class Stage:
    layers: list[LayerSpec]
    theta: float | None  # None marks the output accumulator

    def apply(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = linear_forward(layer, x)
        return x


@dataclass
class SpikingNetwork:
    stages: list[Stage]
    input_shape: tuple[int, ...]
    class_count: int
    dataset: str = ""
    states: list[IFLayerState] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if not self.stages or self.stages[-1].theta is not None:
            raise ValueError("last stage must be the non-spiking readout")
        if any(st.theta is None or not st.theta > 0 for st in self.stages[:-1]):
            raise ValueError("every hidden stage needs a positive threshold")

    @property
    def thetas(self) -> list[float]:
        return [st.theta for st in self.stages[:-1]]

    def reset(self, batch: int = 1) -> None:
        """Restore v(0) = theta/2 and zero spike counts for a batch of inputs."""
        self.states = []
        h = np.zeros((batch,) + self.input_shape, dtype=DTYPE)
        for st in self.stages[:-1]:
            h = st.apply(h)
            self.states.append(IFLayerState.fresh(h.shape, st.theta))


class SNNOutput(NamedTuple):
    logits: np.ndarray  # time-averaged readout potential
    phi: list[np.ndarray]  # average postsynaptic potential per IF layer
    v_final: list[np.ndarray]
    v_init: list[np.ndarray]
    spike_counts: list[np.ndarray]


def phi_from_counts(count: np.ndarray, theta: float, T: int) -> np.ndarray:
    """Average postsynaptic potential ``sum_t s(t)*theta / T`` from spike counts."""
    return DTYPE(theta) * (count.astype(DTYPE) / DTYPE(T))


def snn_forward(net: SpikingNetwork, x: np.ndarray, T: int) -> SNNOutput:
    """Simulate ``T`` steps with ``x`` injected as constant analog current.

    Accepts one sample or a batch; state is reset first, so repeated calls are
    independent.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    x = np.asarray(x, dtype=DTYPE)
    single = x.shape == net.input_shape
    if single:
        x = x[None]
    elif x.shape[1:] != net.input_shape:
        raise ShapeMismatch(f"input {x.shape} does not match network input {net.input_shape}")
    net.reset(len(x))
    first_current = net.stages[0].apply(x)
    readout = None
    for _ in range(T):
        post = None
        for k, stage in enumerate(net.stages):
            current = first_current if k == 0 else stage.apply(post)
            if stage.theta is None:
                readout = current.astype(np.float64) if readout is None else readout + current
            else:
                spikes = if_step(net.states[k], current)
                post = spikes * DTYPE(stage.theta)
    logits = (readout / T).astype(DTYPE)
    phi = [phi_from_counts(s.spike_count, s.theta, T) for s in net.states]
    out = SNNOutput(
        logits,
        phi,
        [s.v for s in net.states],
        [s.v0 for s in net.states],
        [s.spike_count for s in net.states],
    )
    if single:
        out = SNNOutput(*(o[0] if isinstance(o, np.ndarray) else [a[0] for a in o] for o in out))
    return out


def eq5_audit(net: SpikingNetwork, x: np.ndarray, T: int, out: SNNOutput | None = None) -> list[np.ndarray]:
    """Per-layer conservation residual of the simulator.

    For every IF layer, ``A(phi_prev) - (v(T) - v(0)) / T - phi`` where ``A`` is
    the stage's affine map and ``phi_prev`` the previous layer's average
    postsynaptic potential (the analog input for the first layer). Zero in exact
    arithmetic; float32 rounding leaves a few ulps.
    """
    if out is None:
        out = snn_forward(net, x, T)
    prev = np.asarray(x, dtype=DTYPE)
    single = prev.shape == net.input_shape
    if single:
        prev = prev[None]
    residuals = []
    for k, stage in enumerate(net.stages[:-1]):
        phi = out.phi[k][None] if single else out.phi[k]
        v_t = out.v_final[k][None] if single else out.v_final[k]
        v_0 = out.v_init[k][None] if single else out.v_init[k]
        z_hat = stage.apply(prev).astype(np.float64)
        r = z_hat - (v_t.astype(np.float64) - v_0) / T - phi
        residuals.append(r[0] if single else r)
        prev = phi
    return residuals


def theoretical_phi(z_hat, theta: float, v0: float, T: int) -> np.ndarray:
    """Closed form for constant input: ``theta * clip(floor((z*T + v0)/theta)/T, 0, 1)``."""
    z = np.asarray(z_hat, dtype=DTYPE)
    theta32 = DTYPE(theta)
    k = np.floor((z * DTYPE(T) + DTYPE(v0)) / theta32)
    return theta32 * np.clip(k / DTYPE(T), DTYPE(0), DTYPE(1))
