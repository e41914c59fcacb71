import numpy as np
import pytest

from zenosde.system import spec_from_dict


def make_spec(**overrides):
    """Single-regime linear system with no jumps; override fields as needed."""
    cfg = {
        "drift": {"kind": "linear-per-regime", "values": [-1.0]},
        "diffusion": {"kind": "linear-per-regime", "values": [0.0]},
        "jump": {"kind": "zero"},
        "schedule": {"kind": "explicit-list", "times": []},
        "xi_generator": {"q": [[0.0]]},
        "eta_transition": {"p": [[1.0]]},
        "initial": {"x0": [10.0], "y0": 1, "h0": 1},
        "horizon": 1.0,
    }
    for key, val in overrides.items():
        if isinstance(val, dict) and key in cfg and isinstance(cfg[key], dict):
            cfg[key] = {**cfg[key], **val}
        else:
            cfg[key] = val
    return spec_from_dict(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)
