"""ANN to SNN conversion: same weights, ``theta = lambda``, ``v(0) = theta/2``."""

from __future__ import annotations

import numpy as np

from snnforge.ann import LayerSpec, NetworkDef
from snnforge.errors import UnfinalizedParams
from snnforge.snn import IFLayerState, SpikingNetwork, Stage

__all__ = ["convert", "SpikingNetwork", "IFLayerState", "Stage"]


def _copy_layer(layer: LayerSpec) -> LayerSpec:
    return LayerSpec(
        layer.kind,
        weight=None if layer.weight is None else np.array(layer.weight, copy=True),
        bias=None if layer.bias is None else np.array(layer.bias, copy=True),
        stride=layer.stride,
        pad=layer.pad,
        size=layer.size,
    )


def convert(ann: NetworkDef) -> SpikingNetwork:
    """Map a trained ANN onto IF neurons.

    Each activation layer becomes an IF layer whose threshold is the layer's
    ``lambda``; the linear layers between two activations become that layer's
    synaptic map, with biases injected as constant current every step. The noise
    intensity ``delta`` is dropped. Layers after the last activation form the
    non-spiking readout.
    """
    stages: list[Stage] = []
    pending: list[LayerSpec] = []
    for layer in ann.layers:
        if layer.kind == "activation":
            p = layer.act
            if p is None or not p.lam > 0 or p.L < 1:
                raise UnfinalizedParams(f"activation layer has invalid parameters {p}")
            stages.append(Stage(pending, p.lam))
            pending = []
        else:
            pending.append(_copy_layer(layer))
    stages.append(Stage(pending, None))
    snn = SpikingNetwork(stages, ann.input_shape, ann.class_count, ann.dataset)
    snn.reset(1)
    return snn
