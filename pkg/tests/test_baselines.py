import itertools

import numpy as np
import pytest

from manipred.baselines import (GaussianHmm, _log_emissions, fit_hmm_classifier,
                                fit_window_classifier, hmm_classify, hmm_fit, hmm_loglik,
                                load_hmm_classifier, load_window_classifier, majority_vote,
                                save_hmm_classifier, save_window_classifier, window_classify,
                                window_summaries)
from manipred.errors import InvalidArgument


def random_hmm(S, D, rng):
    pi = rng.dirichlet(np.ones(S))
    A = rng.dirichlet(np.ones(S), size=S)
    return GaussianHmm(np.log(pi), np.log(A), rng.normal(size=(S, D)),
                       rng.uniform(0.5, 2.0, (S, D)))


def brute_force_loglik(hmm, x):
    logb = _log_emissions(hmm, x)
    total = 0.0
    for path in itertools.product(range(hmm.n_states), repeat=len(x)):
        lp = hmm.log_pi[path[0]] + logb[0, path[0]]
        for t in range(1, len(x)):
            lp += hmm.log_A[path[t - 1], path[t]] + logb[t, path[t]]
        total += np.exp(lp)
    return np.log(total)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    hmm = random_hmm(3, 2, rng)
    for T in (1, 2, 4):
        x = rng.normal(size=(T, 2))
        assert abs(hmm_loglik(hmm, x) - brute_force_loglik(hmm, x)) <= 1e-9


def sample_hmm(hmm, T, rng):
    s = rng.choice(hmm.n_states, p=hmm.pi)
    out = []
    for _ in range(T):
        out.append(rng.normal(hmm.means[s], np.sqrt(hmm.variances[s])))
        s = rng.choice(hmm.n_states, p=hmm.A[s])
    return np.array(out)


def test_fit_recovers_two_state_means():
    rng = np.random.default_rng(0)
    truth = GaussianHmm(np.log([0.5, 0.5]), np.log([[0.9, 0.1], [0.2, 0.8]]),
                        np.array([[-2.0, 0.0], [2.0, 1.0]]), np.full((2, 2), 0.25))
    seqs = [sample_hmm(truth, 60, rng) for _ in range(20)]
    history = []
    fit = hmm_fit(seqs, n_states=2, seed=0, history=history)
    order = np.argsort(fit.means[:, 0])
    assert np.abs(fit.means[order] - truth.means).max() <= 0.1
    assert np.all(np.diff(history) >= -1e-8)
    assert np.array_equal(fit.means, hmm_fit(seqs, n_states=2, seed=0).means)


def test_single_state_is_gaussian_fit():
    rng = np.random.default_rng(1)
    seqs = [rng.normal(size=(10, 3)) for _ in range(4)]
    fit = hmm_fit(seqs, n_states=1)
    frames = np.concatenate(seqs)
    np.testing.assert_allclose(fit.means[0], frames.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(fit.variances[0], frames.var(axis=0), atol=1e-9)


def test_degenerate_data_hits_variance_floor():
    fit = hmm_fit([np.ones((8, 2))] * 3, n_states=2)
    assert np.all(fit.variances >= 1e-6)
    assert np.isfinite(hmm_loglik(fit, np.ones((4, 2))))


def test_loglik_finite_far_from_model():
    hmm = random_hmm(3, 2, np.random.default_rng(2))
    assert np.isfinite(hmm_loglik(hmm, np.full((200, 2), 1e3)))


def test_identical_models_tie_to_first():
    hmm = random_hmm(2, 2, np.random.default_rng(3))
    assert hmm_classify([hmm, hmm, hmm], np.zeros((5, 2))) == 0
    with pytest.raises(InvalidArgument):
        hmm_classify([hmm], np.zeros((5, 3)))


def two_class_sequences(rng, n, T=30, D=4, gap=3.0):
    seqs, labels = [], []
    for k in range(n):
        y = k % 2
        base = np.zeros(D)
        base[0] = gap * (2 * y - 1)
        drift = np.linspace(0, 1, T)[:, None] * np.eye(D)[1]
        seqs.append(base + drift + rng.normal(0, 0.5, (T, D)))
        labels.append(y)
    return seqs, labels


def test_hmm_classifier_perfect_on_separated_classes():
    rng = np.random.default_rng(4)
    xs, ys = two_class_sequences(rng, 20)
    clf = fit_hmm_classifier(xs, ys, 2, n_states=3, pca_dim=4, seed=0)
    tx, ty = two_class_sequences(rng, 50)
    assert all(clf.classify(x) == y for x, y in zip(tx, ty))


def test_majority_vote_rules():
    assert majority_vote([0, 0, 1]) == 0
    assert majority_vote([3, 1, 3, 1]) == 1
    assert majority_vote([4]) == 4
    with pytest.raises(InvalidArgument):
        majority_vote([])


def test_window_summaries():
    x = np.arange(10.0)[:, None]
    np.testing.assert_array_equal(window_summaries(x, window=36), [[4.5]])
    w = window_summaries(np.arange(40.0)[:, None], window=36, stride=1)
    assert w.shape == (5, 1)
    np.testing.assert_allclose(w[:, 0], 17.5 + np.arange(5))


def test_window_classifier_separable_and_stride_invariance():
    rng = np.random.default_rng(5)
    xs, ys = two_class_sequences(rng, 20, T=50)
    clf = fit_window_classifier(xs, ys, 2, window=36, stride=4, pca_dim=4, seed=0)
    tx, ty = two_class_sequences(rng, 20, T=50)
    assert all(window_classify(clf, x) == y for x, y in zip(tx, ty))
    x = tx[0][:40]  # windows start at 0 and 4
    for extra in range(1, 4):
        longer = np.concatenate([x, tx[1][:extra]])
        np.testing.assert_array_equal(clf.window_labels(longer), clf.window_labels(x))


def test_baseline_save_load(tmp_path):
    rng = np.random.default_rng(6)
    xs, ys = two_class_sequences(rng, 8)
    hmm = fit_hmm_classifier(xs, ys, 2, n_states=2, pca_dim=3)
    save_hmm_classifier(tmp_path / "h.mprc", hmm)
    back = load_hmm_classifier(tmp_path / "h.mprc")
    assert hmm_loglik(back.models[1], xs[0][:, :3]) == pytest.approx(
        hmm_loglik(hmm.models[1], xs[0][:, :3]), abs=1e-9)
    win = fit_window_classifier(xs, ys, 2, window=10, pca_dim=3)
    save_window_classifier(tmp_path / "w.mprc", win)
    wb = load_window_classifier(tmp_path / "w.mprc")
    assert np.array_equal(wb.window_labels(xs[0]), win.window_labels(xs[0]))
