"""Comparison classifiers: per-class Gaussian HMMs and a sliding-window
linear classifier with majority voting, both over PCA-reduced frames."""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import container
from .errors import FormatError, InvalidArgument
from .numerics import PcaModel, as_generator, pca_fit, pca_transform

VAR_FLOOR = 1e-6
HMM_TAG = b"GHMM"
WINDOW_TAG = b"WNDC"


@dataclass
class GaussianHmm:
    log_pi: np.ndarray  # (S,)
    log_A: np.ndarray  # (S, S)
    means: np.ndarray  # (S, D)
    variances: np.ndarray  # (S, D)

    @property
    def n_states(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def pi(self):
        return np.exp(self.log_pi)

    @property
    def A(self):
        return np.exp(self.log_A)


def _log_emissions(hmm, x):
    """log N(x_t | mean_s, diag var_s) for every frame and state: (T, S)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != hmm.dim:
        raise InvalidArgument(f"expected (T, {hmm.dim}) frames, got {x.shape}")
    diff = x[:, None, :] - hmm.means[None]
    return -0.5 * (np.sum(diff * diff / hmm.variances, axis=2)
                   + np.sum(np.log(2 * np.pi * hmm.variances), axis=1))


def _forward(hmm, logb):
    """Scaled forward pass; returns normalized alphas (T, S), per-step scales
    (T,) and the total log-likelihood.

    Emissions are shifted by their per-frame maximum before exponentiating and
    every alpha row is renormalized, so nothing underflows however far the
    frames are from the model.
    """
    T = logb.shape[0]
    shift = logb.max(axis=1, keepdims=True)
    B = np.exp(logb - shift)
    A = np.exp(hmm.log_A)
    alpha = np.empty_like(logb)
    scale = np.empty(T)
    a = np.exp(hmm.log_pi) * B[0]
    for t in range(T):
        if t:
            a = (a @ A) * B[t]
        scale[t] = a.sum()
        a = a / scale[t] if scale[t] > 0 else a
        alpha[t] = a
    with np.errstate(divide="ignore"):
        loglik = float(np.sum(np.log(scale)) + shift.sum())
    return alpha, scale, B, loglik


def _backward(hmm, B, scale):
    T = B.shape[0]
    A = np.exp(hmm.log_A)
    beta = np.ones_like(B)
    for t in range(T - 2, -1, -1):
        beta[t] = A @ (B[t + 1] * beta[t + 1]) / scale[t + 1]
    return beta


def hmm_loglik(hmm, x):
    """Total log-likelihood of a frame sequence (scaled forward pass)."""
    return _forward(hmm, _log_emissions(hmm, x))[3]


def _kmeans_init(frames, S, rng, iters=10):
    centers = frames[rng.choice(len(frames), size=S, replace=False)].copy()
    for _ in range(iters):
        d2 = ((frames[:, None, :] - centers[None]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        for s in range(S):
            members = frames[assign == s]
            if len(members):
                centers[s] = members.mean(axis=0)
    d2 = ((frames[:, None, :] - centers[None]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    var = np.empty_like(centers)
    for s in range(S):
        members = frames[assign == s]
        var[s] = members.var(axis=0) if len(members) > 1 else frames.var(axis=0)
    return centers, np.maximum(var, VAR_FLOOR)


def hmm_fit(sequences, n_states=5, seed=0, max_iter=100, tol=1e-4, history=None):
    """Baum-Welch for a diagonal-Gaussian HMM on one class's sequences.

    States start from a seeded k-means clustering of all frames. Iteration
    stops after ``max_iter`` rounds or when the total log-likelihood gains
    less than ``tol``. If ``history`` is a list, the log-likelihood before
    each re-estimation is appended to it.
    """
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    if not seqs:
        raise InvalidArgument("hmm_fit needs at least one sequence")
    if any(s.ndim != 2 or len(s) < n_states for s in seqs):
        raise InvalidArgument(f"every sequence needs at least {n_states} frames")
    S = n_states
    rng = as_generator(seed)
    frames = np.concatenate(seqs)
    means, var = _kmeans_init(frames, S, rng)
    stay = 0.5 if S > 1 else 1.0
    A = np.full((S, S), (1 - stay) / max(S - 1, 1))
    np.fill_diagonal(A, stay)
    hmm = GaussianHmm(np.log(np.full(S, 1.0 / S)), np.log(A), means, var)
    prev = -np.inf
    for _ in range(max_iter):
        total = 0.0
        g0 = np.zeros(S)
        xi_sum = np.zeros((S, S))
        g_sum = np.zeros(S)
        gx = np.zeros_like(means)
        gxx = np.zeros_like(means)
        for x in seqs:
            alpha, scale, B, ll = _forward(hmm, _log_emissions(hmm, x))
            beta = _backward(hmm, B, scale)
            total += ll
            gamma = alpha * beta
            g0 += gamma[0]
            if len(x) > 1:
                w = B[1:] * beta[1:] / scale[1:, None]
                xi_sum += np.exp(hmm.log_A) * (alpha[:-1].T @ w)
            g_sum += gamma.sum(axis=0)
            gx += gamma.T @ x
            gxx += gamma.T @ (x * x)
        if history is not None:
            history.append(total)
        if total - prev < tol:
            break
        prev = total
        denom = np.maximum(g_sum, 1e-300)[:, None]
        new_means = gx / denom
        new_var = np.maximum(gxx / denom - new_means ** 2, VAR_FLOOR)
        pi = g0 / g0.sum()
        rows = xi_sum.sum(axis=1, keepdims=True)
        A = np.where(rows > 0, xi_sum / np.where(rows > 0, rows, 1.0), 1.0 / S)
        with np.errstate(divide="ignore"):
            hmm = GaussianHmm(np.log(pi), np.log(A), new_means, new_var)
    return hmm


def hmm_classify(models, x):
    """Index of the class model with the highest log-likelihood (lowest on ties)."""
    dims = {m.dim for m in models}
    if len(dims) != 1:
        raise InvalidArgument("class models disagree on feature dimension")
    scores = np.array([hmm_loglik(m, x) for m in models])
    return int(np.argmax(scores))


@dataclass
class HmmClassifier:
    pca: PcaModel
    models: list

    def classify(self, x):
        return hmm_classify(self.models, pca_transform(self.pca, x))


def fit_hmm_classifier(xs, labels, n_labels, n_states=5, pca_dim=128, seed=0):
    pca = _fit_pca(xs, pca_dim)
    y = np.asarray(labels)
    models = []
    for c in range(n_labels):
        members = [pca_transform(pca, x) for x, yi in zip(xs, y) if yi == c]
        if not members:
            raise InvalidArgument(f"no training sequences for class {c}")
        models.append(hmm_fit(members, n_states=n_states, seed=seed + c))
    return HmmClassifier(pca, models)


def _fit_pca(xs, pca_dim):
    frames = np.concatenate([np.asarray(x, dtype=np.float64) for x in xs])
    k = min(pca_dim, frames.shape[0], frames.shape[1])
    return pca_fit(frames, k)


def majority_vote(votes):
    """Most frequent label; ties go to the lowest label."""
    if len(votes) == 0:
        raise InvalidArgument("no votes")
    counts = Counter(int(v) for v in votes)
    best = max(counts.values())
    return min(label for label, c in counts.items() if c == best)


def window_summaries(frames, window=36, stride=1):
    """Mean of each full window; a sequence shorter than ``window`` is one window."""
    frames = np.asarray(frames, dtype=np.float64)
    T = len(frames)
    if T == 0:
        raise InvalidArgument("empty sequence")
    if window < 1 or stride < 1:
        raise InvalidArgument("window and stride must be >= 1")
    if T <= window:
        return frames.mean(axis=0, keepdims=True)
    csum = np.concatenate([np.zeros((1, frames.shape[1])), np.cumsum(frames, axis=0)])
    starts = np.arange(0, T - window + 1, stride)
    return (csum[starts + window] - csum[starts]) / window


@dataclass
class WindowClassifier:
    pca: PcaModel
    W: np.ndarray  # (N, k) one-vs-rest weights
    b: np.ndarray
    window: int = 36
    stride: int = 1

    def window_labels(self, frames):
        z = window_summaries(pca_transform(self.pca, frames), self.window, self.stride)
        return np.argmax(z @ self.W.T + self.b, axis=1)


def window_classify(clf, frames):
    return majority_vote(clf.window_labels(frames))


def fit_window_classifier(xs, labels, n_labels, window=36, stride=1, pca_dim=128,
                          reg=1e-4, epochs=200, seed=0):
    """PCA, window means, then one-vs-rest hinge loss by subgradient descent.

    Steps follow the Pegasos schedule ``1 / (reg * t)`` on the full batch of
    training windows.
    """
    pca = _fit_pca(xs, pca_dim)
    Z, Y = [], []
    for x, y in zip(xs, labels):
        z = window_summaries(pca_transform(pca, x), window, stride)
        Z.append(z)
        Y.append(np.full(len(z), int(y)))
    Z = np.concatenate(Z)
    Y = np.concatenate(Y)
    scale = np.sqrt(np.mean(np.sum(Z * Z, axis=1))) or 1.0
    Zs = np.hstack([Z / scale, np.ones((len(Z), 1))])
    rng = as_generator(seed)
    W = 1e-3 * rng.standard_normal((n_labels, Zs.shape[1]))
    targets = np.where(Y[:, None] == np.arange(n_labels)[None], 1.0, -1.0)
    for t in range(1, epochs + 1):
        eta = 1.0 / (reg * (t + 10))
        margins = targets * (Zs @ W.T)
        active = (margins < 1.0) * targets
        grad = reg * W - active.T @ Zs / len(Zs)
        W -= eta * grad
        norm = np.linalg.norm(W, axis=1, keepdims=True)
        W *= np.minimum(1.0, (1.0 / np.sqrt(reg)) / np.maximum(norm, 1e-300))
    return WindowClassifier(pca, W[:, :-1] / scale, W[:, -1].copy(), window, stride)


def save_hmm_classifier(path, clf):
    arrays = {"pca.mean": clf.pca.mean, "pca.components": clf.pca.components,
              "pca.variance": clf.pca.explained_variance}
    for c, m in enumerate(clf.models):
        arrays[f"hmm{c}.pi"] = m.pi
        arrays[f"hmm{c}.A"] = m.A
        arrays[f"hmm{c}.means"] = m.means
        arrays[f"hmm{c}.variances"] = m.variances
    container.save(path, HMM_TAG, {"n_classes": len(clf.models)}, arrays)


def load_hmm_classifier(path):
    _, meta, arr = container.load(path, expect_tag=HMM_TAG)
    try:
        pca = PcaModel(arr["pca.mean"], arr["pca.components"], arr["pca.variance"])
        models = []
        with np.errstate(divide="ignore"):
            for c in range(meta["n_classes"]):
                models.append(GaussianHmm(np.log(arr[f"hmm{c}.pi"]), np.log(arr[f"hmm{c}.A"]),
                                          arr[f"hmm{c}.means"], arr[f"hmm{c}.variances"]))
    except KeyError as exc:
        raise FormatError(path, str(exc.args[0]), "missing entry") from None
    return HmmClassifier(pca, models)


def save_window_classifier(path, clf):
    arrays = {"pca.mean": clf.pca.mean, "pca.components": clf.pca.components,
              "pca.variance": clf.pca.explained_variance, "W": clf.W, "b": clf.b}
    container.save(path, WINDOW_TAG, {"window": clf.window, "stride": clf.stride}, arrays)


def load_window_classifier(path):
    _, meta, arr = container.load(path, expect_tag=WINDOW_TAG)
    try:
        pca = PcaModel(arr["pca.mean"], arr["pca.components"], arr["pca.variance"])
        return WindowClassifier(pca, arr["W"], arr["b"], meta["window"], meta["stride"])
    except KeyError as exc:
        raise FormatError(path, str(exc.args[0]), "missing entry") from None
