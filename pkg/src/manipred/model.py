"""The full per-frame model: projection -> gated cell -> classifier/regressor."""

from dataclasses import dataclass, field

import numpy as np

from . import container
from .errors import FormatError, InvalidArgument
from .forcesignal import NormParams
from .heads import ClassifierHead, ProjectionParams, RegressorHead
from .numerics import as_generator
from .recurrent import PARAM_FIELDS, CellParams

MODEL_TAG = b"LSTM"


@dataclass
class SequenceModel:
    projection: ProjectionParams
    cell: CellParams
    classifier: ClassifierHead = None
    regressor: RegressorHead = None
    labels: tuple = ()
    channels: tuple = ()
    norm: NormParams = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.projection.out_dim != self.cell.input_dim:
            raise InvalidArgument("projection output dim must equal the cell input dim")
        if self.classifier is None and self.regressor is None:
            raise InvalidArgument("model needs a classifier or a regressor head")
        self.labels = tuple(self.labels)
        self.channels = tuple(self.channels)

    @property
    def task(self):
        return "action" if self.classifier is not None else "force"

    @property
    def input_dim(self):
        return self.projection.in_dim

    @property
    def hidden_dim(self):
        return self.cell.hidden_dim

    @property
    def n_labels(self):
        return self.classifier.n_labels if self.classifier is not None else 0

    @property
    def n_channels(self):
        return self.regressor.n_channels if self.regressor is not None else 0

    def params(self):
        """Trainable arrays by name, in serialization order (live references)."""
        out = {"proj.W": self.projection.W, "proj.b": self.projection.b}
        for name, arr in self.cell.arrays().items():
            out["cell." + name] = arr
        if self.classifier is not None:
            out["cls.W"] = self.classifier.W
            out["cls.b"] = self.classifier.b
        if self.regressor is not None:
            out["reg.W"] = self.regressor.W
            out["reg.b"] = self.regressor.b
        return out

    def copy(self):
        return SequenceModel(
            ProjectionParams(self.projection.W.copy(), self.projection.b.copy()),
            self.cell.copy(),
            None if self.classifier is None else
            ClassifierHead(self.classifier.W.copy(), self.classifier.b.copy()),
            None if self.regressor is None else
            RegressorHead(self.regressor.W.copy(), self.regressor.b.copy()),
            self.labels, self.channels, self.norm, dict(self.meta))

    @classmethod
    def init(cls, input_dim, hidden_dim, n_labels=0, n_channels=0, proj_dim=None,
             std=0.01, seed=0, forget_bias=0.0, labels=(), channels=(), meta=None):
        """Random model: normal(0, std) weights drawn in a fixed order, zero biases."""
        if n_labels < 2 and n_channels < 1:
            raise InvalidArgument("need n_labels >= 2 or n_channels >= 1")
        rng = as_generator(seed)
        proj_dim = proj_dim or hidden_dim
        proj = ProjectionParams(std * rng.standard_normal((proj_dim, input_dim)),
                                np.zeros(proj_dim))
        cell = CellParams.random(proj_dim, hidden_dim, std=std, seed=rng,
                                 forget_bias=forget_bias)
        clf = reg = None
        if n_labels >= 2:
            clf = ClassifierHead(std * rng.standard_normal((n_labels, hidden_dim)),
                                 np.zeros(n_labels))
        if n_channels >= 1:
            reg = RegressorHead(std * rng.standard_normal((n_channels, hidden_dim)),
                                np.zeros(n_channels))
        return cls(proj, cell, clf, reg, labels or tuple(str(i) for i in range(n_labels)),
                   channels or tuple(f"ch{i}" for i in range(n_channels)), None, meta or {})

    def to_bytes(self):
        meta = {"labels": list(self.labels), "channels": list(self.channels),
                "input_dim": self.input_dim, "hidden_dim": self.hidden_dim,
                "proj_dim": self.projection.out_dim, "n_labels": self.n_labels,
                "n_channels": self.n_channels, "task": self.task, "extra": self.meta}
        arrays = dict(self.params())
        if self.norm is not None:
            arrays["norm.min"] = self.norm.lo
            arrays["norm.max"] = self.norm.hi
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument(f"refusing to serialize non-finite {name}")
        return container.encode(MODEL_TAG, meta, arrays)

    def save(self, path):
        container.atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        _, meta, arrays = container.load(path, expect_tag=MODEL_TAG)
        try:
            proj = ProjectionParams(arrays["proj.W"], arrays["proj.b"])
            cell = CellParams(**{k: arrays["cell." + k] for k in PARAM_FIELDS})
            clf = ClassifierHead(arrays["cls.W"], arrays["cls.b"]) if "cls.W" in arrays else None
            reg = RegressorHead(arrays["reg.W"], arrays["reg.b"]) if "reg.W" in arrays else None
            norm = NormParams(arrays["norm.min"], arrays["norm.max"]) \
                if "norm.min" in arrays else None
            return cls(proj, cell, clf, reg, meta.get("labels", ()),
                       meta.get("channels", ()), norm, meta.get("extra", {}))
        except KeyError as exc:
            raise FormatError(path, str(exc.args[0]), "missing array") from None
        except InvalidArgument as exc:
            raise FormatError(path, "shapes", str(exc)) from None
