"""Streaming per-frame inference over a trained model.

A Session keeps only the recurrent state and a short ring of recent labels,
so its memory does not grow with the stream. Offline helpers evaluate whole
sequences with exactly the same per-frame arithmetic, so streamed and
offline beliefs agree bit for bit.
"""

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .forcesignal import ForceTrace
from .numerics import argmax_lowest, normalized_entropy, softmax
from .recurrent import CellState, forward_sequence, _step

DEFAULT_WINDOW = 5


def _project_row(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise InvalidArgument(f"frame dim {x.shape[-1]} != model input dim {model.input_dim}")
    p = model.projection
    return x[None] @ p.W.T + p.b


def _belief_row(model, h):
    head = model.classifier
    probs = softmax(h @ head.W.T + head.b)[0]
    return probs, float(normalized_entropy(probs)), int(argmax_lowest(probs))


def _forces_row(model, h):
    head = model.regressor
    return (h @ head.W.T + head.b)[0]


@dataclass
class BeliefTrajectory:
    probs: np.ndarray  # (T, N)
    uncertainty: np.ndarray  # (T,)
    labels: np.ndarray  # (T,)

    def __len__(self):
        return len(self.labels)

    def records(self):
        for t in range(len(self)):
            yield trajectory_record(t, self.probs[t], self.uncertainty[t], self.labels[t])


def trajectory_record(frame, probs, uncertainty, label):
    """One line-delimited JSON record for plotting or piping."""
    return json.dumps({"frame": int(frame), "probs": [float(p) for p in probs],
                       "uncertainty": float(uncertainty), "label": int(label)})


class Session:
    """Single-owner streaming state over a read-only model."""

    def __init__(self, model, window=DEFAULT_WINDOW, record=False):
        if window < 1:
            raise InvalidArgument("window must be >= 1")
        self.model = model
        self.state = CellState.zeros(model.hidden_dim, batch=1)
        self.frames = 0
        self.window = window
        self.recent = deque(maxlen=window)
        self._stack = model.cell.stacked()
        self.trajectory = [] if record else None

    def step(self, x):
        """Advance the recurrent state by one raw frame; returns h as (1, n)."""
        px = _project_row(self.model, x)
        h, c, _ = _step(self._stack, self.model.cell, self.state.h, self.state.c, px)
        self.state = CellState(h, c)
        self.frames += 1
        return h

    def feed_frame(self, x):
        """Returns ``(distribution, uncertainty, label)`` for the new frame."""
        if self.model.classifier is None:
            raise InvalidArgument("model has no classifier head")
        probs, unc, label = _belief_row(self.model, self.step(x))
        self.recent.append(label)
        if self.trajectory is not None:
            self.trajectory.append((probs, unc, label))
        return probs, unc, label

    def feed_forces(self, x):
        """Force estimate for the new frame, clamped to [0, 1]."""
        if self.model.regressor is None:
            raise InvalidArgument("model has no regression head")
        out = np.clip(_forces_row(self.model, self.step(x)), 0.0, 1.0)
        if self.trajectory is not None:
            self.trajectory.append(out)
        return out

    def converged(self, k=None):
        """The label if the last ``k`` predictions agree, else None."""
        k = self.window if k is None else k
        if k < 1 or k > self.window:
            raise InvalidArgument(f"k must be in [1, {self.window}]")
        if self.frames < k or len(self.recent) < k:
            return None
        last = list(self.recent)[-k:]
        return last[0] if all(v == last[0] for v in last) else None


def hidden_states(model, xs):
    """Offline forward over raw frames; (T, 1, n) hidden states."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or len(xs) == 0:
        raise InvalidArgument("need a non-empty (T, d) frame array")
    proj = np.stack([_project_row(model, x) for x in xs])
    return forward_sequence(model.cell, proj).h


def belief_trajectory(model, xs):
    if model.classifier is None:
        raise InvalidArgument("model has no classifier head")
    H = hidden_states(model, xs)
    rows = [_belief_row(model, H[t]) for t in range(len(H))]
    return BeliefTrajectory(np.stack([r[0] for r in rows]),
                            np.array([r[1] for r in rows]),
                            np.array([r[2] for r in rows], dtype=np.int64))


def linear_weights(T):
    w = np.arange(1, T + 1, dtype=np.float64)
    return w / w.sum()


def classify_sequence(model, xs):
    """Whole-sequence label from beliefs averaged with weights rising to the last frame."""
    traj = belief_trajectory(model, xs)
    avg = linear_weights(len(traj)) @ traj.probs
    return int(argmax_lowest(avg)), avg


def estimate_forces(model, xs, sample_rate=30.0):
    """Per-frame normalized forces, clamped to [0, 1] for reporting."""
    if model.regressor is None:
        raise InvalidArgument("model has no regression head")
    H = hidden_states(model, xs)
    vals = np.stack([_forces_row(model, H[t]) for t in range(len(H))])
    channels = model.channels or tuple(f"ch{i}" for i in range(model.n_channels))
    return ForceTrace(np.clip(vals, 0.0, 1.0), sample_rate, channels, normalized=True)
