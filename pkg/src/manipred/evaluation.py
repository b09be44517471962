"""Metrics and the leave-one-subject-out evaluation harness.

Whole-video accuracy is reported per sequence (one label per video from the
linearly weighted belief average), pooled over folds.
"""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .baselines import fit_hmm_classifier, fit_window_classifier, window_classify
from .datasets import FeatureSequence, loso_splits
from .errors import InvalidArgument
from .forcesignal import ForceTrace, fit_norm, normalize
from .numerics import argmax_lowest
from .online import belief_trajectory, estimate_forces, linear_weights
from .training import train_classifier, train_regressor

log = logging.getLogger(__name__)

DEFAULT_OFFSETS = (-10, 0, 10, 25)
DEFAULT_L_PRE = 50
DEFAULT_L_POST = 100


def resample_segment(values, n_out):
    """Linearly interpolate ``values`` onto ``n_out`` evenly spaced points."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 1:
        return np.full(n_out, values[0])
    pos = np.linspace(0.0, len(values) - 1, n_out)
    return np.interp(pos, np.arange(len(values)), values)


@dataclass
class AlignedCurves:
    l_pre: int
    l_post: int
    per_action: dict  # action -> (l_pre + l_post,) mean curve
    overall: np.ndarray
    counts: dict

    @property
    def contact_index(self):
        return self.l_pre


def align_at_touching_point(values, touches, actions, l_pre=DEFAULT_L_PRE,
                            l_post=DEFAULT_L_POST):
    """Resample each per-frame series around its touching point and average.

    Frames before the touching point become ``l_pre`` points, the touching
    point and everything after become ``l_post`` points, so aligned index
    ``l_pre`` is the contact frame. Curves are averaged per action.
    """
    if l_pre < 1 or l_post < 1:
        raise InvalidArgument("l_pre and l_post must be >= 1")
    bad = [k for k, (v, tp) in enumerate(zip(values, touches))
           if tp is None or not 0 < tp < len(v)]
    if bad:
        raise InvalidArgument(f"sequences without an interior touching point: {bad}")
    rows = {}
    allrows = []
    for v, tp, a in zip(values, touches, actions):
        v = np.asarray(v, dtype=np.float64)
        row = np.concatenate([resample_segment(v[:tp], l_pre), resample_segment(v[tp:], l_post)])
        rows.setdefault(a, []).append(row)
        allrows.append(row)
    per_action = {a: np.mean(r, axis=0) for a, r in sorted(rows.items())}
    return AlignedCurves(l_pre, l_post, per_action, np.mean(allrows, axis=0),
                         {a: len(r) for a, r in rows.items()})


@dataclass
class OffsetReport:
    offsets: tuple
    correct: dict  # (action, offset) -> hits
    total: dict  # (action, offset) -> evaluated sequences
    skipped: list  # (sequence index, offset, reason)

    def accuracy(self, action, offset):
        n = self.total.get((action, offset), 0)
        return self.correct.get((action, offset), 0) / n if n else float("nan")


def offsets_from_labels(frame_labels, touches, truths, offsets=DEFAULT_OFFSETS, ids=None):
    """Score the per-frame prediction at ``touch + offset`` for every sequence."""
    ids = range(len(frame_labels)) if ids is None else ids
    rep = OffsetReport(tuple(offsets), {}, {}, [])
    for k, labels, tp, y in zip(ids, frame_labels, touches, truths):
        if tp is None:
            raise InvalidArgument(f"sequence {k} has no touching point")
        for off in offsets:
            t = tp + off
            if t < 0:
                rep.skipped.append((k, off, "before first frame"))
                continue
            if t >= len(labels):
                rep.skipped.append((k, off, "after last frame"))
                continue
            key = (int(y), off)
            rep.total[key] = rep.total.get(key, 0) + 1
            rep.correct[key] = rep.correct.get(key, 0) + int(labels[t] == y)
    return rep


def offset_accuracy(model, data, offsets=DEFAULT_OFFSETS):
    """Per-(action, offset) accuracy of online predictions around contact.

    ``model`` is a trained classifier model, or any callable mapping a (T, d)
    frame array to per-frame labels. Offsets falling outside a sequence skip
    that sequence and are listed in the report.
    """
    if callable(model):
        labels = [np.asarray(model(s.frames)) for s in data]
    else:
        labels = [belief_trajectory(model, s.frames).labels for s in data]
    return offsets_from_labels(labels, [s.touch for s in data], [s.label for s in data],
                               offsets)


def confusion_matrix(preds, labels, n):
    """Row-normalized counts; row = true label. Absent classes give zero rows."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise InvalidArgument(f"{preds.size} predictions vs {labels.size} labels")
    cm = np.zeros((n, n))
    np.add.at(cm, (labels, preds), 1.0)
    rows = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)


@dataclass
class ForceErrors:
    per_channel: np.ndarray
    per_action: dict
    per_sequence: np.ndarray  # (n_seq, M)


def force_error(preds, truths, actions=None):
    """Mean absolute error per channel (over frames, then sequences) and per action."""
    if len(preds) != len(truths):
        raise InvalidArgument(f"{len(preds)} predicted traces vs {len(truths)} truths")
    per_seq = []
    for k, (p, t) in enumerate(zip(preds, truths)):
        p = p.values if isinstance(p, ForceTrace) else np.asarray(p, dtype=np.float64)
        t = t.values if isinstance(t, ForceTrace) else np.asarray(t, dtype=np.float64)
        if p.shape != t.shape:
            raise InvalidArgument(f"trace {k}: shape {p.shape} vs {t.shape}")
        per_seq.append(np.mean(np.abs(p - t), axis=0))
    per_seq = np.array(per_seq)
    per_action = {}
    if actions is not None:
        for a in sorted(set(actions)):
            rows = per_seq[[i for i, b in enumerate(actions) if b == a]]
            per_action[a] = float(np.mean(rows))
    return ForceErrors(per_seq.mean(axis=0), per_action, per_seq)


def fuse_modalities(features, forces):
    """Per-frame concatenation of visual features and force values."""
    f = features.frames if isinstance(features, FeatureSequence) else np.asarray(features)
    v = forces.values if isinstance(forces, ForceTrace) else np.asarray(forces)
    if v.ndim == 1:
        v = v[:, None]
    if len(f) != len(v):
        raise InvalidArgument(f"{len(f)} feature frames vs {len(v)} force frames")
    fused = np.concatenate([f, v], axis=1)
    if isinstance(features, FeatureSequence):
        return FeatureSequence(fused, features.touch, features.label)
    return FeatureSequence(fused)


# ------------------------------------------------------------------ LOSO harness

@dataclass
class ActionReport:
    labels: tuple
    truth: list = field(default_factory=list)
    lstm: list = field(default_factory=list)
    hmm: list = field(default_factory=list)
    window: list = field(default_factory=list)
    folds: list = field(default_factory=list)  # dicts per fold
    accuracy_curves: AlignedCurves = None
    uncertainty_curves: AlignedCurves = None
    offsets: OffsetReport = None

    def accuracy(self, method="lstm"):
        pred = getattr(self, method)
        return float(np.mean(np.array(pred) == np.array(self.truth))) if pred else float("nan")

    def per_action_accuracy(self, method="lstm"):
        pred = np.array(getattr(self, method))
        truth = np.array(self.truth)
        out = {}
        for c in range(len(self.labels)):
            sel = truth == c
            out[c] = float(np.mean(pred[sel] == c)) if sel.any() and len(pred) else float("nan")
        return out

    def confusion(self, method="lstm"):
        return confusion_matrix(getattr(self, method), self.truth, len(self.labels))


def run_action_loso(seqs, subjects, cfg, labels, baselines=True, l_pre=DEFAULT_L_PRE,
                    l_post=DEFAULT_L_POST, offsets=DEFAULT_OFFSETS, window=36,
                    pca_dim=128, hmm_states=5):
    """Train and test one fold per held-out subject; collect every reported metric."""
    folds = loso_splits(subjects)
    rep = ActionReport(tuple(labels))
    frame_labels, uncert, touches, truths, ids = [], [], [], [], []
    for tr, te in folds:
        subj = subjects[te[0]]
        xs = [seqs[i].frames for i in tr]
        ys = [seqs[i].label for i in tr]
        model, _ = train_classifier(xs, ys, cfg, label_names=labels)
        hmm = win = None
        if baselines:
            hmm = fit_hmm_classifier(xs, ys, len(labels), n_states=hmm_states,
                                     pca_dim=pca_dim, seed=cfg.seed)
            win = fit_window_classifier(xs, ys, len(labels), window=window,
                                        pca_dim=pca_dim, seed=cfg.seed)
        hits = {"lstm": 0, "hmm": 0, "window": 0}
        for i in te:
            s = seqs[i]
            traj = belief_trajectory(model, s.frames)
            pred = int(argmax_lowest(linear_weights(len(traj)) @ traj.probs))
            rep.truth.append(s.label)
            rep.lstm.append(pred)
            hits["lstm"] += pred == s.label
            if baselines:
                hp = hmm.classify(s.frames)
                wp = window_classify(win, s.frames)
                rep.hmm.append(hp)
                rep.window.append(wp)
                hits["hmm"] += hp == s.label
                hits["window"] += wp == s.label
            if s.touch is not None:
                frame_labels.append(traj.labels)
                uncert.append(traj.uncertainty)
                touches.append(s.touch)
                truths.append(s.label)
                ids.append(int(i))
        fold = {"subject": subj, "n_test": len(te),
                "lstm": hits["lstm"] / len(te)}
        if baselines:
            fold["hmm"] = hits["hmm"] / len(te)
            fold["window"] = hits["window"] / len(te)
        rep.folds.append(fold)
        log.info("fold %s: %s", subj, fold)
    aligned_ok = [k for k, (fl, tp) in enumerate(zip(frame_labels, touches)) if 0 < tp < len(fl)]
    if aligned_ok:
        correct = [(frame_labels[k] == truths[k]).astype(float) for k in aligned_ok]
        acts = [truths[k] for k in aligned_ok]
        tps = [touches[k] for k in aligned_ok]
        rep.accuracy_curves = align_at_touching_point(correct, tps, acts, l_pre, l_post)
        rep.uncertainty_curves = align_at_touching_point(
            [uncert[k] for k in aligned_ok], tps, acts, l_pre, l_post)
    if touches:
        rep.offsets = offsets_from_labels(frame_labels, touches, truths, offsets, ids)
    return rep


@dataclass
class ForceReport:
    channels: tuple
    actions: list
    errors: ForceErrors
    folds: list


def run_force_loso(seqs, forces, subjects, actions, cfg, channels=()):
    """LOSO force regression; ``forces`` are raw (Newton) traces per sequence.

    Normalization ranges come from each fold's training traces only.
    """
    folds = loso_splits(subjects)
    preds, truths, acts, fold_rows = [], [], [], []
    for tr, te in folds:
        norm = fit_norm([forces[i] for i in tr])
        ys = [normalize(forces[i], norm)[0].values for i in tr]
        model, _ = train_regressor([seqs[i].frames for i in tr], ys, cfg,
                                   channels=channels, norm=norm)
        errs = []
        for i in te:
            p = estimate_forces(model, seqs[i].frames).values
            t = normalize(forces[i], norm)[0].values
            preds.append(p)
            truths.append(t)
            acts.append(actions[i])
            errs.append(np.mean(np.abs(p - t)))
        fold_rows.append({"subject": subjects[te[0]], "n_test": len(te),
                          "mae": float(np.mean(errs))})
    return ForceReport(tuple(channels), acts, force_error(preds, truths, acts), fold_rows)


def fusion_comparison(seqs, subjects, force_model, cfg, labels):
    """Vision-only vs vision + regressed forces, same folds and seeds."""
    fused = []
    for s in seqs:
        f = estimate_forces(force_model, s.frames)
        fused.append(fuse_modalities(s, f))
    vision = run_action_loso(seqs, subjects, cfg, labels, baselines=False)
    both = run_action_loso(fused, subjects, cfg, labels, baselines=False)
    return vision, both


# ------------------------------------------------------------------ CSV tables

def _csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _fmt(x):
    return "nan" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.6f}"


def accuracy_table(reports):
    """Per object/action whole-video accuracy: window, HMM, LSTM columns plus an average row."""
    rows = [["object/action", "window_svm", "hmm", "lstm"]]
    cols = {m: [] for m in ("window", "hmm", "lstm")}
    for obj, rep in reports.items():
        per = {m: rep.per_action_accuracy(m) if getattr(rep, m) else None for m in cols}
        for c, name in enumerate(rep.labels):
            row = [f"{obj}/{name}"]
            for m in cols:
                v = per[m][c] if per[m] is not None else float("nan")
                cols[m].append(v)
                row.append(_fmt(v))
            rows.append(row)
    rows.append(["Avg."] + [_fmt(float(np.nanmean(cols[m])) if not np.all(np.isnan(cols[m]))
                                 else float("nan")) for m in cols])
    return _csv(rows)


def confusion_table(rep, method="lstm"):
    cm = rep.confusion(method)
    rows = [["true\\pred"] + list(rep.labels)]
    for name, r in zip(rep.labels, cm):
        rows.append([name] + [_fmt(v) for v in r])
    return _csv(rows)


def offsets_table(reports):
    offsets = None
    rows = []
    for obj, rep in reports.items():
        if rep.offsets is None:
            continue
        offsets = rep.offsets.offsets
        for c, name in enumerate(rep.labels):
            rows.append([f"{obj}/{name}"] + [_fmt(rep.offsets.accuracy(c, o)) for o in offsets]
                        + [rep.offsets.total.get((c, offsets[0]), 0)])
    if offsets is None:
        return _csv([["object/action"]])
    return _csv([["object/action"] + [f"{o:+d}" for o in offsets] + ["n_at_first_offset"]]
                + rows)


def curves_table(rep):
    acc, unc = rep.accuracy_curves, rep.uncertainty_curves
    if acc is None:
        return _csv([["aligned_index"]])
    header = ["aligned_index", "phase"] + [f"acc_{rep.labels[a]}" for a in acc.per_action] \
        + ["acc_all", "uncertainty"]
    rows = [header]
    for k in range(acc.l_pre + acc.l_post):
        rows.append([k, "pre" if k < acc.l_pre else "post"]
                    + [_fmt(c[k]) for c in acc.per_action.values()]
                    + [_fmt(acc.overall[k]), _fmt(unc.overall[k])])
    return _csv(rows)


def folds_table(reports):
    rows = [["object", "subject", "n_test", "lstm", "hmm", "window_svm"]]
    for obj, rep in reports.items():
        for f in rep.folds:
            rows.append([obj, f["subject"], f["n_test"], _fmt(f["lstm"]),
                         _fmt(f.get("hmm", float("nan"))), _fmt(f.get("window", float("nan")))])
    return _csv(rows)


def skips_table(reports, names=None):
    rows = [["object", "sequence", "offset", "reason"]]
    for obj, rep in reports.items():
        if rep.offsets is None:
            continue
        for k, off, why in rep.offsets.skipped:
            seq = names[obj][k] if names else k
            rows.append([obj, seq, off, why])
    return _csv(rows)


def finger_error_table(reports):
    """One row per object plus an average row; one column per force channel."""
    channels = next(iter(reports.values())).channels
    rows = [["object"] + list(channels)]
    allc = []
    for obj, rep in reports.items():
        rows.append([obj] + [_fmt(v) for v in rep.errors.per_channel])
        allc.append(rep.errors.per_sequence)
    rows.append(["Avg."] + [_fmt(v) for v in np.concatenate(allc).mean(axis=0)])
    return _csv(rows)


def action_error_table(reports, labels):
    rows = [["object", "action", "error"]]
    for obj, rep in reports.items():
        for a, v in rep.errors.per_action.items():
            rows.append([obj, labels[obj][a], _fmt(v)])
    return _csv(rows)


def force_folds_table(reports):
    rows = [["object", "subject", "n_test", "mae"]]
    for obj, rep in reports.items():
        for f in rep.folds:
            rows.append([obj, f["subject"], f["n_test"], _fmt(f["mae"])])
    return _csv(rows)


def fusion_table(results):
    objs = list(results)
    rows = [["modality"] + objs + ["Avg."]]
    for tag, idx in (("vision", 0), ("vision+force", 1)):
        accs = [results[o][idx].accuracy("lstm") for o in objs]
        rows.append([tag] + [_fmt(a) for a in accs] + [_fmt(float(np.mean(accs)))])
    return _csv(rows)
