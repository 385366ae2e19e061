"""Fall detection on tri-axial accelerometer windows.

Thin python surface over the C++ core: tensor ops, the model zoo
(ensemble + five baselines), the synthetic data pipeline, and
leave-one-subject-out evaluation.
"""

import json as _json

from ._core import (
    Model,
    SeededRng,
    confusion,
    conv2d,
    gradcheck_suite,
    gru_step,
    loso_json,
    matmul,
    maxpool2d,
    metrics,
    model_names,
    relu,
    resample_linear,
    sigmoid,
    softmax,
    synth_segments,
    tanh,
)

__all__ = [
    "Model",
    "SeededRng",
    "confusion",
    "conv2d",
    "gradcheck_suite",
    "gru_step",
    "loso",
    "loso_json",
    "matmul",
    "maxpool2d",
    "metrics",
    "model_names",
    "relu",
    "resample_linear",
    "sigmoid",
    "softmax",
    "synth_segments",
    "tanh",
]

__version__ = "0.1.0"


def loso(model, x, y, subjects, **kwargs):
    """Leave-one-subject-out evaluation; returns the report as a dict."""
    return _json.loads(loso_json(model, x, y, subjects, **kwargs))
