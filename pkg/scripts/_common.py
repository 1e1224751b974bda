"""Shared bits for the experiment scripts."""

from snnforge.cli import resolve_data
from snnforge.io import load_digits8

# spirals inputs have unit radius, so a threshold starting at 8 never moves
WORKLOADS = {
    "spirals": dict(arch="mlp-64-64", lambda_init=1.0),
    "digits": dict(arch="cnn-8-16-f32", lambda_init=8.0),
}


def load(name, seed):
    if name == "digits":
        return load_digits8(seed)
    return resolve_data(f"synth:{name}", seed)
