"""Feature files, dataset manifests, LOSO splits and the synthetic generator.

FSEQ feature file, little-endian::

    magic    4 bytes  b"FSEQ"
    version  uint32   (1)
    d        uint32   feature dimension
    T        uint32   frame count; 0xFFFFFFFF marks an open-ended stream
    touch    int32    touching-point frame index, -1 if absent
    label    int32    action label id, -1 if absent
    frames   float32 * T * d, frame-major

In stream mode the header is followed by frames of ``d`` float32 values
until end of input.

Manifest: UTF-8 text, one directive per line, ``#`` starts a comment::

    object <name> labels=<a>,<b>,...
    record subject=<s> object=<o> action=<a> rep=<k> features=<path> [forces=<path>] [touch=<frame>]

Paths are relative to the manifest's directory.
"""

import shlex
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import atomic_write_bytes, atomic_write_text
from .errors import FormatError, InvalidArgument

FSEQ_MAGIC = b"FSEQ"
FSEQ_VERSION = 1
STREAM_T = 0xFFFFFFFF
_HEADER = struct.Struct("<4sIIIii")


@dataclass
class FeatureSequence:
    frames: np.ndarray  # (T, d)
    touch: int = None
    label: int = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or len(self.frames) == 0:
            raise InvalidArgument("a feature sequence needs a non-empty (T, d) array")
        if self.touch is not None and not 0 <= self.touch < len(self.frames):
            raise InvalidArgument(f"touching point {self.touch} outside [0, {len(self.frames)})")

    def __len__(self):
        return len(self.frames)

    @property
    def dim(self):
        return self.frames.shape[1]


def encode_features(seq):
    T, d = seq.frames.shape
    head = _HEADER.pack(FSEQ_MAGIC, FSEQ_VERSION, d, T,
                        -1 if seq.touch is None else seq.touch,
                        -1 if seq.label is None else seq.label)
    return head + np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()


def write_features(path, seq):
    atomic_write_bytes(path, encode_features(seq))


def _parse_header(head, path):
    if len(head) < _HEADER.size:
        raise FormatError(path, "header", "file truncated")
    magic, version, d, T, touch, label = _HEADER.unpack(head[:_HEADER.size])
    if magic != FSEQ_MAGIC:
        raise FormatError(path, "magic", f"expected FSEQ, found {magic!r}")
    if version != FSEQ_VERSION:
        raise FormatError(path, "version", f"unsupported version {version}")
    if d == 0:
        raise FormatError(path, "d", "feature dimension is zero")
    return d, T, touch, label


def read_features(path):
    """Load an FSEQ file; never returns a partial sequence."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(path, "file", exc.strerror or str(exc)) from None
    d, T, touch, label = _parse_header(data, path)
    if T == STREAM_T or T == 0:
        raise FormatError(path, "T", "a feature file needs a positive frame count")
    need = _HEADER.size + 4 * T * d
    if len(data) < need:
        raise FormatError(path, "frames", f"file truncated ({len(data)} of {need} bytes)")
    if len(data) > need:
        raise FormatError(path, "frames", f"{len(data) - need} unexpected trailing bytes")
    frames = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    frames = frames.reshape(T, d)
    if not np.all(np.isfinite(frames)):
        raise FormatError(path, "frames", "non-finite feature values")
    if touch != -1 and not 0 <= touch < T:
        raise FormatError(path, "touch", f"touching point {touch} outside [0, {T})")
    return FeatureSequence(frames, None if touch == -1 else touch,
                           None if label == -1 else label)


def stream_header(d):
    return _HEADER.pack(FSEQ_MAGIC, FSEQ_VERSION, d, STREAM_T, -1, -1)


def iter_frames(fh, name="<stdin>"):
    """Yield frames from a binary FSEQ stream (file or stream mode) one at a time."""
    head = _read_exact(fh, _HEADER.size)
    d, T, _, _ = _parse_header(head, name)
    count = 0
    size = 4 * d
    while T == STREAM_T or count < T:
        buf = _read_exact(fh, size)
        if not buf:
            if T != STREAM_T:
                raise FormatError(name, "frames", f"stream ended after {count} of {T} frames")
            return
        if len(buf) < size:
            raise FormatError(name, "frames", f"partial frame at index {count}")
        yield np.frombuffer(buf, dtype="<f4").astype(np.float64)
        count += 1


def _read_exact(fh, n):
    chunks, got = [], 0
    while got < n:
        b = fh.read(n - got)
        if not b:
            break
        chunks.append(b)
        got += len(b)
    return b"".join(chunks)


@dataclass
class Record:
    subject: str
    object: str
    action: str
    rep: int
    features: Path
    forces: Path = None
    touch: int = None


@dataclass
class DatasetManifest:
    labels: dict = field(default_factory=dict)  # object -> tuple of action names
    records: list = field(default_factory=list)
    root: Path = Path(".")

    @property
    def subjects(self):
        return sorted({r.subject for r in self.records})

    @property
    def objects(self):
        return list(self.labels)

    def label_id(self, rec):
        return self.labels[rec.object].index(rec.action)

    def for_object(self, obj):
        return [r for r in self.records if r.object == obj]


def _kv(tokens, path, lineno):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise FormatError(path, f"line {lineno}", f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def load_manifest(path, check_files=True):
    """Parse and validate a manifest; feature files are checked for existence."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(path, "file", exc.strerror or str(exc)) from None
    root = path.parent
    m = DatasetManifest(root=root)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            kind, *rest = shlex.split(line)
        except ValueError as exc:
            raise FormatError(path, f"line {lineno}", str(exc)) from None
        if kind == "object":
            if not rest:
                raise FormatError(path, f"line {lineno}", "object needs a name")
            kv = _kv(rest[1:], path, lineno)
            labels = tuple(a for a in kv.get("labels", "").split(",") if a)
            if len(labels) < 2:
                raise FormatError(path, f"line {lineno} labels", "an object needs >= 2 actions")
            m.labels[rest[0]] = labels
        elif kind == "record":
            kv = _kv(rest, path, lineno)
            for key in ("subject", "object", "action", "features"):
                if key not in kv:
                    raise FormatError(path, f"line {lineno} {key}", "missing")
            if kv["object"] not in m.labels:
                raise FormatError(path, f"line {lineno} object", f"undeclared object {kv['object']!r}")
            if kv["action"] not in m.labels[kv["object"]]:
                raise FormatError(path, f"line {lineno} action",
                                  f"{kv['action']!r} not a label of {kv['object']!r}")
            try:
                rep = int(kv.get("rep", 0))
                touch = int(kv["touch"]) if "touch" in kv else None
            except ValueError as exc:
                raise FormatError(path, f"line {lineno}", str(exc)) from None
            feat = root / kv["features"]
            forces = root / kv["forces"] if "forces" in kv else None
            if check_files:
                for p in (feat, forces):
                    if p is not None and not p.is_file():
                        raise FormatError(path, f"line {lineno}", f"missing file {p}")
            m.records.append(Record(kv["subject"], kv["object"], kv["action"], rep,
                                    feat, forces, touch))
        else:
            raise FormatError(path, f"line {lineno}", f"unknown directive {kind!r}")
    if not m.records:
        raise FormatError(path, "records", "manifest lists no records")
    return m


def format_manifest(m):
    lines = ["# manipred dataset manifest v1"]
    for obj, labels in m.labels.items():
        lines.append(f"object {obj} labels={','.join(labels)}")
    for r in m.records:
        parts = [f"subject={r.subject}", f"object={r.object}", f"action={r.action}",
                 f"rep={r.rep}", f"features={Path(r.features).as_posix()}"]
        if r.forces is not None:
            parts.append(f"forces={Path(r.forces).as_posix()}")
        if r.touch is not None:
            parts.append(f"touch={r.touch}")
        lines.append("record " + " ".join(shlex.quote(p) for p in parts))
    return "\n".join(lines) + "\n"


def write_manifest(path, m):
    atomic_write_text(path, format_manifest(m))


def load_sequence(m, rec):
    """Read a record's features; the manifest's touching point wins over the file's."""
    seq = read_features(rec.features)
    touch = rec.touch if rec.touch is not None else seq.touch
    if touch is not None and not 0 <= touch < len(seq):
        raise FormatError(rec.features, "touch", f"touching point {touch} outside sequence")
    return FeatureSequence(seq.frames, touch, m.label_id(rec))


def loso_splits(subjects):
    """One (train, test) pair of index arrays per subject, in sorted subject order.

    ``subjects`` gives the subject of each record (or pass a manifest).
    """
    if isinstance(subjects, DatasetManifest):
        subjects = [r.subject for r in subjects.records]
    subjects = list(subjects)
    unique = sorted(set(subjects))
    if len(unique) < 2:
        raise InvalidArgument(
            "leave-one-subject-out evaluation needs at least 2 subjects, "
            f"found {len(unique)}")
    arr = np.array(subjects, dtype=object)
    idx = np.arange(len(subjects))
    return [(idx[arr != s], idx[arr == s]) for s in unique]


# ---------------------------------------------------------------- synthetic data

@dataclass
class SynthConfig:
    n_classes: int = 5
    dim: int = 32
    n_subjects: int = 5
    per_class: int = 40  # sequences per class, spread evenly over subjects
    t_min: int = 40
    t_max: int = 80
    touch_range: tuple = (0.3, 0.5)  # touching point as a fraction of T
    noise: float = 0.1
    separation: float = 1.0
    latent_dim: int = 6
    pre_contact_signal: float = 0.25  # class offset reached at the touching point
    subject_spread: float = 0.3
    with_forces: bool = False
    n_channels: int = 4
    force_informative: float = 0.0  # class signal carried by the forces
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise InvalidArgument("synthetic data needs at least 2 classes")
        if not 1 <= self.t_min <= self.t_max:
            raise InvalidArgument("need 1 <= t_min <= t_max")
        if self.latent_dim + self.n_classes + self.n_subjects > self.dim:
            raise InvalidArgument("dim too small for latent + class + subject subspaces")


@dataclass
class SynthSample:
    seq: FeatureSequence
    subject: int
    forces: np.ndarray = None  # (T, M) Newtons


class SynthGenerator:
    """Seeded generator of class-specific smooth latent trajectories.

    Features are ``E z(t) + ramp(t) * class_offset + subject_offset + noise``
    where ``z`` is a class-specific bank of sinusoids (after contact) blended
    from a shared approach trajectory (before contact). Offsets live in
    subspaces orthogonal to the latent embedding ``E``, so the latent state and
    hence the forces (affine in ``z``) are linearly recoverable from features.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        L, C, S = cfg.latent_dim, cfg.n_classes, cfg.n_subjects
        q, _ = np.linalg.qr(rng.standard_normal((cfg.dim, cfg.dim)))
        self.embed = q[:, :L] * 1.0
        self.class_offsets = (np.sqrt(2.0) * cfg.separation) * q[:, L:L + C].T
        self.subject_offsets = cfg.subject_spread * q[:, L + C:L + C + S].T
        self.amp = rng.uniform(0.5, 1.0, (C, L))
        self.freq = rng.uniform(0.5, 2.0, (C, L))
        self.phase = rng.uniform(0, 2 * np.pi, (C, L))
        self.approach = rng.uniform(0.3, 0.8, L)
        self.subject_rate = 1.0 + rng.uniform(-0.1, 0.1, S)
        M = cfg.n_channels
        # forces stay inside (0.5, 8.4) N for |z| <= 1 per latent coordinate
        raw = rng.standard_normal((M, L))
        self.force_W = raw / np.abs(raw).sum(axis=1, keepdims=True) * 2.5
        self.force_b = np.full(M, 4.5)
        self.force_class = rng.uniform(-1.0, 1.0, (C, M))
        self._rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))

    def latent(self, c, T, touch, subject):
        """Noise-free latent trajectory (T, L), each coordinate within [-1, 1]."""
        t = np.arange(T, dtype=np.float64)
        rate = self.subject_rate[subject]
        post = np.clip((t - touch) / max(T - touch, 1), 0.0, 1.0)
        class_z = self.amp[c] * np.sin(
            2 * np.pi * self.freq[c] * rate * post[:, None] + self.phase[c])
        pre = np.clip(t / max(touch, 1), 0.0, 1.0)
        approach = self.approach * np.sin(np.pi / 2 * pre)[:, None]
        start = self.amp[c] * np.sin(self.phase[c])
        blend = np.where(t[:, None] < touch, approach + pre[:, None] ** 2 *
                         (start - self.approach), class_z)
        return np.clip(blend, -1.0, 1.0)

    def class_ramp(self, T, touch):
        t = np.arange(T, dtype=np.float64)
        pre = self.cfg.pre_contact_signal * np.clip(t / max(touch, 1), 0.0, 1.0)
        return np.where(t < touch, pre, 1.0)

    def render(self, c, T, touch, subject):
        """Noise-free features (T, d) for one class/subject/length."""
        z = self.latent(c, T, touch, subject)
        return (z @ self.embed.T + self.class_ramp(T, touch)[:, None] * self.class_offsets[c]
                + self.subject_offsets[subject])

    def forces(self, c, T, touch, subject):
        """Newtons (T, M): affine in the latent state, plus an optional class term."""
        z = self.latent(c, T, touch, subject)
        f = z @ self.force_W.T + self.force_b
        if self.cfg.force_informative:
            f = f + self.cfg.force_informative * self.class_ramp(T, touch)[:, None] \
                * self.force_class[c]
        return f

    def generate(self):
        cfg = self.cfg
        rng = self._rng
        out = []
        for c in range(cfg.n_classes):
            for k in range(cfg.per_class):
                subject = k % cfg.n_subjects
                T = int(rng.integers(cfg.t_min, cfg.t_max + 1))
                lo, hi = cfg.touch_range
                touch = int(np.clip(round(rng.uniform(lo, hi) * T), 1, T - 1)) if T > 1 else 0
                x = self.render(c, T, touch, subject)
                x = x + cfg.noise * rng.standard_normal(x.shape)
                f = self.forces(c, T, touch, subject) if cfg.with_forces else None
                out.append(SynthSample(FeatureSequence(x, touch, c), subject, f))
        return out


def synth_generate(cfg):
    """Reproducible labeled sequences (and optional forces) for ``cfg``."""
    return SynthGenerator(cfg).generate()
