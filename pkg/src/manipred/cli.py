"""Command-line entry point: ``manipred {train,predict,eval,forces,synth}``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 training
divergence. Every output file is written to a temporary name and renamed.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .container import atomic_write_text
from .datasets import (DatasetManifest, Record, SynthConfig, iter_frames, load_manifest,
                       load_sequence, synth_generate, write_features, write_manifest)
from .errors import FormatError, InvalidArgument, SensorSaturation, TrainingDiverged
from .forcesignal import (ForceRecording, SensorCalibration, condition,
                          fit_norm, force_to_volts, normalize, read_recording,
                          write_recording)
from .model import SequenceModel
from .online import Session, trajectory_record
from .training import TrainConfig, train_classifier, train_regressor

log = logging.getLogger("manipred")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

SYNTH_FRAME_RATE = 30.0
SYNTH_OVERSAMPLE = 8
SYNTH_CALIBRATION = SensorCalibration(v_in=5.0, c1=1.0, c2=0.0)
SYNTH_HUM_VOLTS = 0.02


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _offsets(text):
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--offsets expects comma-separated ints, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("--offsets needs at least one value")
    return vals


def _training_flags(p):
    p.add_argument("--config", type=Path, help="JSON object of training settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--task", choices=("action", "force"), default="action")
    p.add_argument("--object", help="restrict to one object of the manifest")
    p.add_argument("--notch-freq", type=float, default=60.0)
    p.add_argument("--notch-q", type=float, default=30.0)


def build_parser():
    parser = _Parser(prog="manipred", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True, help="output model file")
    p.add_argument("--log", type=Path, help="per-epoch log (default: <model>.log.jsonl)")
    _training_flags(p)

    p = sub.add_parser("predict", help="stream per-frame predictions")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("input", nargs="?", default="-",
                   help="FSEQ feature file, or - for a frame stream on stdin")
    p.add_argument("--window", type=int, default=5, help="convergence window K")

    p = sub.add_parser("eval", help="leave-one-subject-out evaluation tables")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--offsets", type=_offsets, default=ev.DEFAULT_OFFSETS)
    p.add_argument("--lpre", type=int, default=ev.DEFAULT_L_PRE)
    p.add_argument("--lpost", type=int, default=ev.DEFAULT_L_POST)
    p.add_argument("--window", type=int, default=36, help="window-classifier length")
    p.add_argument("--pca-dim", type=int, default=128)
    p.add_argument("--hmm-states", type=int, default=5)
    p.add_argument("--no-baselines", action="store_true")
    p.add_argument("--model", type=Path,
                   help="trained force model; adds the vision vs vision+force comparison")
    _training_flags(p)

    p = sub.add_parser("forces", help="condition a raw force recording")
    p.add_argument("recording", type=Path)
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.add_argument("--frames", type=int, help="resample to this many video frames")
    p.add_argument("--notch-freq", type=float, default=60.0)
    p.add_argument("--notch-q", type=float, default=30.0)
    p.add_argument("--normalize", action="store_true", help="min-max scale each channel")
    p.add_argument("--model", type=Path, help="use this force model's normalization range")

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--subjects", type=int, default=5)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--t-min", type=int, default=40)
    p.add_argument("--t-max", type=int, default=80)
    p.add_argument("--noise", type=float, default=SynthConfig.noise)
    p.add_argument("--forces", action="store_true", help="also write force recordings")
    p.add_argument("--force-informative", type=float, default=0.0)
    return parser


# ------------------------------------------------------------------ helpers

def _train_config(args, parser):
    d = {}
    if args.config is not None:
        try:
            d = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(args.config, "config", str(exc)) from None
        if not isinstance(d, dict):
            raise FormatError(args.config, "config", "expected a JSON object")
    for flag, key in (("seed", "seed"), ("hidden", "hidden"), ("epochs", "epochs"),
                      ("batch", "batch_size"), ("rate", "base_rate")):
        v = getattr(args, flag)
        if v is not None:
            d[key] = v
    try:
        return TrainConfig.from_dict(d)
    except (InvalidArgument, TypeError) as exc:
        parser.error(f"bad training setting: {exc}")


def _objects(m, args):
    if args.object is not None:
        if args.object not in m.labels:
            raise InvalidArgument(f"--object {args.object!r} not in manifest {args.manifest}")
        return [args.object]
    return m.objects


def _load_object(m, obj):
    recs = m.for_object(obj)
    seqs = [load_sequence(m, r) for r in recs]
    dims = {s.dim for s in seqs}
    if len(dims) > 1:
        raise FormatError(recs[0].features, "d", f"feature dims differ within {obj}: {sorted(dims)}")
    return recs, seqs


def _load_forces(recs, seqs, args):
    """Conditioned Newton traces at the video frame rate, one per record."""
    out = []
    for r, s in zip(recs, seqs):
        if r.forces is None:
            raise FormatError(r.features, "forces", "record has no force recording")
        rec = read_recording(r.forces)
        try:
            out.append(condition(rec, n_frames=len(s), f0=args.notch_freq, q=args.notch_q))
        except (InvalidArgument, SensorSaturation) as exc:
            raise FormatError(r.forces, "samples", str(exc)) from None
    return out


def _force_records(m, objects):
    recs = [r for o in objects for r in m.for_object(o) if r.forces is not None]
    if not recs:
        raise InvalidArgument("no records with force recordings in the manifest")
    return recs


# ------------------------------------------------------------------ commands

def cmd_train(args, parser):
    cfg = _train_config(args, parser)
    m = load_manifest(args.manifest)
    objects = _objects(m, args)
    meta = {"task": args.task, "notch_freq": args.notch_freq, "notch_q": args.notch_q}
    if args.task == "action":
        if len(objects) != 1:
            parser.error("action training needs --object when the manifest has several objects")
        obj = objects[0]
        recs, seqs = _load_object(m, obj)
        meta["object"] = obj
        model, tlog = train_classifier([s.frames for s in seqs], [s.label for s in seqs], cfg,
                                       label_names=m.labels[obj], meta=meta)
    else:
        recs = _force_records(m, objects)
        seqs = [load_sequence(m, r) for r in recs]
        traces = _load_forces(recs, seqs, args)
        norm = fit_norm(traces)
        ys = [normalize(t, norm)[0].values for t in traces]
        meta["objects"] = objects
        model, tlog = train_regressor([s.frames for s in seqs], ys, cfg,
                                      channels=traces[0].channels, norm=norm, meta=meta)
    model.save(args.model)
    tlog.write(args.log or args.model.with_name(args.model.name + ".log.jsonl"))
    log.info("wrote %s (final loss %.6f)", args.model, tlog.loss[-1])
    return EXIT_OK


def cmd_predict(args, parser):
    model = SequenceModel.load(args.model)
    session = Session(model, window=args.window)
    out = sys.stdout
    if args.input == "-":
        fh, name, close = sys.stdin.buffer, "<stdin>", False
    else:
        try:
            fh = open(args.input, "rb")
        except OSError as exc:
            raise FormatError(args.input, "file", exc.strerror or str(exc)) from None
        name, close = args.input, True
    try:
        for t, x in enumerate(iter_frames(fh, name)):
            if x.shape[0] != model.input_dim:
                raise FormatError(name, "d", f"frames have {x.shape[0]} dims, "
                                             f"model expects {model.input_dim}")
            if model.task == "action":
                probs, unc, label = session.feed_frame(x)
                out.write(trajectory_record(t, probs, unc, label) + "\n")
            else:
                f = session.feed_forces(x)
                out.write(json.dumps({"frame": t, "forces": [float(v) for v in f]}) + "\n")
            out.flush()
    finally:
        if close:
            fh.close()
    return EXIT_OK


def cmd_eval(args, parser):
    cfg = _train_config(args, parser)
    if args.lpre < 1 or args.lpost < 1:
        parser.error("--lpre and --lpost must be >= 1")
    if args.window < 1 or args.pca_dim < 1 or args.hmm_states < 1:
        parser.error("--window, --pca-dim and --hmm-states must be >= 1")
    m = load_manifest(args.manifest)
    objects = _objects(m, args)
    files = {}
    if args.task == "action":
        reports, fusion = {}, {}
        force_model = SequenceModel.load(args.model) if args.model else None
        if force_model is not None and force_model.task != "force":
            raise InvalidArgument(f"{args.model} is not a force model")
        for obj in objects:
            recs, seqs = _load_object(m, obj)
            subjects = [r.subject for r in recs]
            reports[obj] = ev.run_action_loso(
                seqs, subjects, cfg, m.labels[obj], baselines=not args.no_baselines,
                l_pre=args.lpre, l_post=args.lpost, offsets=args.offsets,
                window=args.window, pca_dim=args.pca_dim, hmm_states=args.hmm_states)
            files[f"confusion_{obj}.csv"] = ev.confusion_table(reports[obj])
            files[f"curves_{obj}.csv"] = ev.curves_table(reports[obj])
            if force_model is not None:
                fusion[obj] = ev.fusion_comparison(seqs, subjects, force_model, cfg,
                                                   m.labels[obj])
        files["table3_accuracy.csv"] = ev.accuracy_table(reports)
        files["offsets.csv"] = ev.offsets_table(reports)
        files["folds.csv"] = ev.folds_table(reports)
        names = {o: [f"{r.subject}/{r.action}/{r.rep}" for r in m.for_object(o)]
                 for o in objects}
        files["skips.csv"] = ev.skips_table(reports, names)
        if fusion:
            files["table6_fusion.csv"] = ev.fusion_table(fusion)
    else:
        reports, labels = {}, {}
        for obj in objects:
            recs = [r for r in m.for_object(obj) if r.forces is not None]
            if not recs:
                continue
            seqs = [load_sequence(m, r) for r in recs]
            traces = _load_forces(recs, seqs, args)
            reports[obj] = ev.run_force_loso(seqs, traces, [r.subject for r in recs],
                                             [s.label for s in seqs], cfg,
                                             channels=traces[0].channels)
            labels[obj] = m.labels[obj]
        if not reports:
            raise InvalidArgument("no records with force recordings in the manifest")
        files["table4_finger_error.csv"] = ev.finger_error_table(reports)
        files["table5_action_error.csv"] = ev.action_error_table(reports, labels)
        files["force_folds.csv"] = ev.force_folds_table(reports)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(files.items()):
        atomic_write_text(args.out / name, text)
    log.info("wrote %d tables to %s", len(files), args.out)
    return EXIT_OK


def cmd_forces(args, parser):
    rec = read_recording(args.recording)
    if args.frames is not None and args.frames < 1:
        parser.error("--frames must be >= 1")
    if not 0 < args.notch_freq < rec.sample_rate / 2:
        parser.error(f"--notch-freq must lie in (0, {rec.sample_rate / 2}) Hz "
                     f"for {args.recording}")
    if args.notch_q <= 0:
        parser.error("--notch-q must be positive")
    norm = None
    if args.model is not None:
        model = SequenceModel.load(args.model)
        if model.norm is None:
            raise FormatError(args.model, "norm", "model stores no force normalization")
        norm = model.norm
    try:
        trace = condition(rec, n_frames=args.frames, f0=args.notch_freq, q=args.notch_q,
                          norm=norm, do_normalize=args.normalize)
    except SensorSaturation as exc:
        raise FormatError(args.recording, "samples", str(exc)) from None
    lines = [",".join(("sample",) + trace.channels)]
    for t, row in enumerate(trace.values):
        lines.append(",".join([str(t)] + [f"{v:.9g}" for v in row]))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def synth_recording(forces, hum_phase):
    """Oversampled voltage recording of frame-rate forces with mains hum added."""
    T, M = forces.shape
    n = (T - 1) * SYNTH_OVERSAMPLE + 1
    src = np.arange(T) * SYNTH_OVERSAMPLE
    dense = np.stack([np.interp(np.arange(n), src, forces[:, k]) for k in range(M)], axis=1)
    fs = SYNTH_FRAME_RATE * SYNTH_OVERSAMPLE
    volts = force_to_volts(SYNTH_CALIBRATION, np.clip(dense, 0.0, None))
    hum = SYNTH_HUM_VOLTS * np.sin(2 * np.pi * 60.0 * np.arange(n) / fs + hum_phase)
    volts = np.clip(volts + hum[:, None], 0.0, SYNTH_CALIBRATION.v_in * 0.999)
    return ForceRecording(volts, fs, ("thumb", "pointer", "middle", "ring")[:M] if M <= 4
                          else tuple(f"ch{k}" for k in range(M)), SYNTH_CALIBRATION)


def cmd_synth(args, parser):
    try:
        cfg = SynthConfig(n_classes=args.classes, dim=args.dim, n_subjects=args.subjects,
                          per_class=args.per_class, t_min=args.t_min, t_max=args.t_max,
                          noise=args.noise, with_forces=args.forces or args.force_informative > 0,
                          force_informative=args.force_informative, seed=args.seed)
    except InvalidArgument as exc:
        parser.error(str(exc))
    if args.per_class < 1 or args.subjects < 1:
        parser.error("--per-class and --subjects must be >= 1")
    samples = synth_generate(cfg)
    out = args.out
    (out / "features").mkdir(parents=True, exist_ok=True)
    labels = tuple(f"action{c}" for c in range(cfg.n_classes))
    m = DatasetManifest(labels={"synth": labels}, root=out)
    reps = {}
    phase_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    for s in samples:
        key = (s.subject, s.seq.label)
        reps[key] = reps.get(key, 0) + 1
        stem = f"s{s.subject}_a{s.seq.label}_r{reps[key]}"
        write_features(out / "features" / f"{stem}.fseq", s.seq)
        forces = None
        if s.forces is not None:
            (out / "forces").mkdir(exist_ok=True)
            forces = Path("forces") / f"{stem}.frec"
            write_recording(out / forces, synth_recording(s.forces, phase_rng.uniform(0, 2 * np.pi)))
        m.records.append(Record(f"subject{s.subject}", "synth", labels[s.seq.label],
                                reps[key], Path("features") / f"{stem}.fseq", forces,
                                s.seq.touch))
    write_manifest(out / "manifest.txt", m)
    log.info("wrote %d sequences to %s", len(samples), out)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "eval": cmd_eval,
            "forces": cmd_forces, "synth": cmd_synth}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args, parser)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"manipred: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, InvalidArgument, SensorSaturation) as exc:
        print(f"manipred: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BrokenPipeError:
        # the reader went away; silence the flush at interpreter exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except OSError as exc:
        print(f"manipred: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
