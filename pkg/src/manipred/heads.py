"""Input projection, action classifier head and force regressor head."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .numerics import argmax_lowest, softmax


def _affine(W, b, x, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W.shape[1]:
        raise InvalidArgument(f"{what}: input dim {x.shape[-1]} != {W.shape[1]}")
    return x @ W.T + b


@dataclass
class ProjectionParams:
    W: np.ndarray  # (n_out, n_in)
    b: np.ndarray

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]


@dataclass
class ClassifierHead:
    W: np.ndarray  # (N, n)
    b: np.ndarray

    def __post_init__(self):
        if self.W.shape[0] < 2:
            raise InvalidArgument("a classifier head needs at least 2 labels")

    @property
    def n_labels(self):
        return self.W.shape[0]


@dataclass
class RegressorHead:
    W: np.ndarray  # (M, n)
    b: np.ndarray

    @property
    def n_channels(self):
        return self.W.shape[0]


def project(p, x):
    return _affine(p.W, p.b, x, "project")


def classify_frame(head, h):
    """Belief over action labels for hidden state(s) ``h``."""
    return softmax(_affine(head.W, head.b, h, "classify_frame"))


def predict_label(d):
    return int(argmax_lowest(d)) if np.ndim(d) == 1 else argmax_lowest(d)


def nll_loss(predictions, labels):
    """Summed negative log-likelihood of ``labels`` under per-frame beliefs."""
    p = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.shape[0] != y.shape[0]:
        raise InvalidArgument(f"{p.shape[0]} predictions vs {y.shape[0]} labels")
    if np.any(y < 0) or np.any(y >= p.shape[1]):
        raise InvalidArgument(f"label out of range [0, {p.shape[1]})")
    with np.errstate(divide="ignore"):
        return float(-np.sum(np.log(p[np.arange(len(y)), y])))


def regress_forces(head, h):
    """Affine force estimate; unbounded (clamping is a reporting concern)."""
    return _affine(head.W, head.b, h, "regress_forces")


def l2_loss(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise InvalidArgument(f"shape mismatch {pred.shape} vs {truth.shape}")
    r = pred - truth
    return float(np.sum(r * r))
