"""Dense numeric helpers: nonlinearities, probability utilities, PCA, seeded init.

Matrices and vectors are plain float64 numpy arrays (row-major). Random
numbers come from numpy's PCG64 bit generator (``numpy.random.default_rng``)
with the ziggurat normal sampler, so a given seed reproduces bit-identical
values on the same numpy build.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import InvalidArgument


def sigmoid(x):
    return expit(x)


def softmax(logits):
    """Exp-normalize along the last axis with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise InvalidArgument("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise InvalidArgument("softmax input has non-finite entries")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def entropy(p):
    """Shannon entropy in nats along the last axis, with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return 0.0 - np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=-1)


def normalized_entropy(p):
    """Entropy divided by ln N; 1 for the uniform belief, 0 for one-hot."""
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[-1]
    if n < 2:
        return np.zeros(p.shape[:-1]) if p.ndim > 1 else 0.0
    return np.clip(entropy(p) / np.log(n), 0.0, 1.0)


def argmax_lowest(p):
    """Argmax along the last axis; ties resolve to the lowest index."""
    # np.argmax already returns the first occurrence of the maximum
    return np.argmax(np.asarray(p), axis=-1)


def as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def randn_init(rows, cols, std, seed):
    """Normal(0, std) matrix from a PCG64 stream seeded by ``seed``.

    ``seed`` may also be a ``numpy.random.Generator`` so several matrices can
    be drawn from one stream in a fixed order.
    """
    if not std > 0:
        raise InvalidArgument(f"std must be positive, got {std}")
    rng = as_generator(seed)
    return std * rng.standard_normal((rows, cols))


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray

    @property
    def input_dim(self):
        return self.mean.shape[0]

    @property
    def k(self):
        return self.components.shape[0]


def pca_fit(samples, k):
    """Principal axes of ``samples`` (n x d) by descending variance.

    Uses the SVD of the centered data. Each component is sign-flipped so its
    largest-magnitude entry is positive.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidArgument("pca_fit needs at least 2 samples in an (n, d) array")
    n, d = x.shape
    if not 1 <= k <= min(n, d):
        raise InvalidArgument(f"k={k} out of range [1, {min(n, d)}]")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:k].copy()
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), idx])
    comps *= signs[:, None]
    var = (s[:k] ** 2) / (n - 1)
    return PcaModel(mean=mean, components=comps, explained_variance=var)


def pca_transform(model, x):
    """Project ``x`` (d,) or (n, d) onto the model's components."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise InvalidArgument(
            f"expected input dim {model.input_dim}, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T


def pca_inverse(model, y):
    return np.asarray(y, dtype=np.float64) @ model.components + model.mean
