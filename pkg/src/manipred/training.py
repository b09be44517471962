"""Minibatch training with per-parameter adaptive learning rates.

Each parameter entry keeps a running sum of its squared gradients and steps
by ``base_rate * g / (sqrt(sum) + 1e-8)``. The loss of a batch is the sum of
per-frame terms over every frame of every sequence in it; gradients flow
through the full unrolled sequence unless ``truncation`` is set.
"""

import json
import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .container import atomic_write_text
from .errors import InvalidArgument, TrainingDiverged
from .model import SequenceModel
from .numerics import log_softmax
from .recurrent import PARAM_FIELDS, backward_sequence, clip_gradients, forward_sequence

log = logging.getLogger(__name__)

ADAPTIVE_EPS = 1e-8
DEFAULT_HIDDEN = {"action": 64, "force": 128}


@dataclass
class TrainConfig:
    batch_size: int = 10
    epochs: int = 100
    base_rate: float = 0.01
    init_std: float = 0.01
    clip_norm: float = 5.0
    seed: int = 0
    truncation: int = None
    hidden: int = None
    proj_dim: int = None
    forget_bias: float = 0.0
    log_path: str = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")
        if not self.base_rate > 0:
            raise InvalidArgument("base_rate must be > 0")
        if not self.init_std > 0:
            raise InvalidArgument("init_std must be > 0")
        if self.truncation is not None and self.truncation < 1:
            raise InvalidArgument("truncation must be >= 1")

    def hidden_for(self, task):
        return self.hidden or DEFAULT_HIDDEN[task]

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimizerState:
    accum: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()})


def adaptive_update(param, grad, accum, base_rate):
    """In-place adaptive step on ``param``; ``accum`` gathers squared gradients."""
    if param.shape != grad.shape or accum.shape != grad.shape:
        raise InvalidArgument(f"shape mismatch {param.shape} / {grad.shape} / {accum.shape}")
    accum += grad * grad
    param -= base_rate * grad / (np.sqrt(accum) + ADAPTIVE_EPS)
    return param


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    metric: list = field(default_factory=list)
    metric_name: str = ""

    def append(self, epoch, loss, metric):
        self.epochs.append(epoch)
        self.loss.append(loss)
        self.metric.append(metric)

    def to_lines(self):
        return "".join(
            json.dumps({"epoch": e, "loss": l, self.metric_name or "metric": m},
                       sort_keys=True) + "\n"
            for e, l, m in zip(self.epochs, self.loss, self.metric))

    def write(self, path):
        atomic_write_text(path, self.to_lines())


def _pad(seqs):
    lengths = np.array([len(s) for s in seqs])
    T, B, d = lengths.max(), len(seqs), seqs[0].shape[1]
    X = np.zeros((T, B, d))
    mask = np.zeros((T, B))
    for b, s in enumerate(seqs):
        X[:len(s), b] = s
        mask[:len(s), b] = 1.0
    return X, mask


def batch_loss_and_grads(model, xs, targets, truncation=None, need_grads=True):
    """Summed per-frame loss of a batch and its gradients for every parameter.

    ``xs`` is a list of (T_i, d) frame arrays. For a classifier ``targets`` is
    one label per sequence (applied to all its frames); for a regressor it is
    a list of (T_i, M) force arrays. Returns ``(loss, grads, n_frames)``.
    """
    X, mask = _pad([np.asarray(x, dtype=np.float64) for x in xs])
    T, B, _ = X.shape
    proj = model.projection
    P = X @ proj.W.T + proj.b
    tape = forward_sequence(model.cell, P, batched_inputs=True)
    H = tape.h
    grads = {}
    if model.task == "action":
        y = np.asarray(targets, dtype=np.int64)
        head = model.classifier
        if y.shape != (B,) or np.any(y < 0) or np.any(y >= head.n_labels):
            raise InvalidArgument("classification targets must be one valid label per sequence")
        logits = H @ head.W.T + head.b
        lsm = log_softmax(logits)
        loss = float(-np.sum(lsm[:, np.arange(B), y] * mask))
        if not need_grads:
            return loss, None, int(mask.sum())
        dout = np.exp(lsm)
        dout[:, np.arange(B), y] -= 1.0
        dout *= mask[..., None]
        grads["cls.W"] = np.einsum("tbk,tbn->kn", dout, H)
        grads["cls.b"] = dout.sum(axis=(0, 1))
    else:
        head = model.regressor
        V = np.zeros((T, B, head.n_channels))
        for b, v in enumerate(targets):
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (len(xs[b]), head.n_channels):
                raise InvalidArgument(
                    f"sequence {b}: force target shape {v.shape} does not match "
                    f"{len(xs[b])} frames x {head.n_channels} channels")
            V[:len(v), b] = v
        r = (H @ head.W.T + head.b - V) * mask[..., None]
        loss = float(np.sum(r * r))
        if not need_grads:
            return loss, None, int(mask.sum())
        dout = 2.0 * r
        grads["reg.W"] = np.einsum("tbk,tbn->kn", dout, H)
        grads["reg.b"] = dout.sum(axis=(0, 1))
    dH = dout @ head.W
    cg = backward_sequence(model.cell, tape, dH, truncation)
    for name in PARAM_FIELDS:
        grads["cell." + name] = getattr(cg, name)
    grads["proj.W"] = np.einsum("tbk,tbd->kd", cg.dx, X)
    grads["proj.b"] = cg.dx.sum(axis=(0, 1))
    ordered = {k: grads[k] for k in model.params()}
    return loss, ordered, int(mask.sum())


def dataset_loss(model, xs, targets, batch_size=32):
    """Mean per-frame loss over a dataset (no gradients)."""
    total, frames = 0.0, 0
    for s in range(0, len(xs), batch_size):
        loss, _, nf = batch_loss_and_grads(model, xs[s:s + batch_size],
                                           targets[s:s + batch_size], need_grads=False)
        total += loss
        frames += nf
    return total / frames


def gradient_check(model, xs, targets, eps=1e-5, analytic=None):
    """Max relative error between analytic and central-difference gradients.

    Every entry of every parameter is perturbed. The relative error of one
    entry is ``|a - n| / max(|a|, |n|, 1e-8)``. ``analytic`` overrides the
    gradients under test (used to confirm the checker catches corruption).
    """
    if analytic is None:
        _, analytic, _ = batch_loss_and_grads(model, xs, targets)
    probe = model.copy()
    worst = 0.0
    for name, arr in probe.params().items():
        a = analytic[name]
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp = batch_loss_and_grads(probe, xs, targets, need_grads=False)[0]
            flat[j] = orig - eps
            lm = batch_loss_and_grads(probe, xs, targets, need_grads=False)[0]
            flat[j] = orig
            num = (lp - lm) / (2 * eps)
            ana = a.reshape(-1)[j]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst


def _all_finite(arrays):
    return all(np.all(np.isfinite(a)) for a in arrays)


def train(xs, targets, cfg, task, labels=(), channels=(), validation=None,
          norm=None, meta=None):
    """Train a fresh model; returns ``(model, TrainLog)``.

    ``validation`` is an optional ``(xs, targets)`` pair scored after every
    epoch (accuracy for actions, mean absolute error for forces).
    """
    if task not in DEFAULT_HIDDEN:
        raise InvalidArgument(f"unknown task {task!r}")
    if len(xs) == 0 or len(xs) != len(targets):
        raise InvalidArgument("need a non-empty dataset with one target per sequence")
    if any(len(x) == 0 for x in xs):
        raise InvalidArgument("all sequences must be non-empty")
    d = np.asarray(xs[0]).shape[1]
    if any(np.asarray(x).shape[1] != d for x in xs):
        raise InvalidArgument("all sequences must share the feature dimension")
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    init_rng, shuffle_rng = (np.random.default_rng(s) for s in seeds)
    hidden = cfg.hidden_for(task)
    if task == "action":
        y = np.asarray(targets, dtype=np.int64)
        if len(np.unique(y)) < 2:
            raise InvalidArgument("classification data must contain at least 2 labels")
        n_labels = max(int(y.max()) + 1, len(labels))
        model = SequenceModel.init(d, hidden, n_labels=n_labels, proj_dim=cfg.proj_dim,
                                   std=cfg.init_std, seed=init_rng,
                                   forget_bias=cfg.forget_bias, labels=labels, meta=meta)
        metric_name = "heldout_accuracy"
    else:
        for i, (x, v) in enumerate(zip(xs, targets)):
            if len(v) != len(x):
                raise InvalidArgument(
                    f"sequence {i}: {len(x)} feature frames but {len(v)} force frames")
        n_ch = np.asarray(targets[0]).shape[1]
        model = SequenceModel.init(d, hidden, n_channels=n_ch, proj_dim=cfg.proj_dim,
                                   std=cfg.init_std, seed=init_rng,
                                   forget_bias=cfg.forget_bias, channels=channels, meta=meta)
        model.norm = norm
        metric_name = "heldout_mae"
    params = model.params()
    opt = OptimizerState.zeros_like(params)
    tlog = TrainLog(metric_name=metric_name)
    n = len(xs)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total, frames = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            bx = [xs[i] for i in idx]
            bt = [targets[i] for i in idx]
            loss, grads, nf = batch_loss_and_grads(model, bx, bt, cfg.truncation)
            if not np.isfinite(loss) or not _all_finite(grads.values()):
                raise TrainingDiverged(epoch)
            clip_gradients(grads, cfg.clip_norm)
            updated = {k: params[k].copy() for k in params}
            for k in params:
                adaptive_update(updated[k], grads[k], opt.accum[k], cfg.base_rate)
            if not _all_finite(updated.values()):
                raise TrainingDiverged(epoch, "non-finite parameters after update")
            for k in params:
                params[k][...] = updated[k]
            opt.step += 1
            total += loss
            frames += nf
        metric = None
        if validation is not None:
            metric = evaluate(model, *validation)
        tlog.append(epoch, total / frames, metric)
        log.debug("epoch %d loss %.6f %s %s", epoch, total / frames, metric_name, metric)
    if cfg.log_path:
        tlog.write(cfg.log_path)
    return model, tlog


def evaluate(model, xs, targets):
    """Sequence accuracy (classifier) or mean absolute force error (regressor)."""
    from .online import classify_sequence, estimate_forces

    if model.task == "action":
        hits = [classify_sequence(model, x)[0] == int(y) for x, y in zip(xs, targets)]
        return float(np.mean(hits))
    errs = [np.mean(np.abs(estimate_forces(model, x).values - np.asarray(v)))
            for x, v in zip(xs, targets)]
    return float(np.mean(errs))


def train_classifier(xs, labels, cfg, label_names=(), validation=None, meta=None):
    return train(xs, labels, cfg, "action", labels=label_names,
                 validation=validation, meta=meta)


def train_regressor(xs, forces, cfg, channels=(), validation=None, norm=None, meta=None):
    return train(xs, forces, cfg, "force", channels=channels, validation=validation,
                 norm=norm, meta=meta)
