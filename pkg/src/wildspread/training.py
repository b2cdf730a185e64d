"""Training loop, confusion-matrix evaluation and metric history.

Training visits the union of the training splits of one or more sample
stores (pooled mode interleaves stores globally), takes minibatch Adam steps,
then scores the model on the full training and validation splits in a
separate pass at threshold 0.5 (prediction is positive when p >= threshold).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .nn import AdamState, Model, adam_step, bce_loss, build_model, build_reference_model, predict_fast
from .nn.checkpoint import load_for_resume, save_checkpoint
from .nn.model import INPUT_SIZE, REFERENCE_LAYOUT
from .sampling import SPLITS, CounterRNG, SampleStore, StoreError, label_from_name

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
EVAL_CHUNK = 128


class TrainError(ValueError):
    pass


# --- configuration ------------------------------------------------------------


@dataclass
class TrainConfig:
    """Training run settings, loadable from JSON.

    ``val_stores`` (optional) scores validation on other stores, e.g. a held-out
    fire, using ``val_split`` (``"all"`` for every sample). ``metrics_every``
    spaces the full-pass metric evaluations (the last epoch is always scored);
    ``layout`` overrides the reference architecture with ``(kind, kernel,
    maps)`` rows, mainly for small test networks.
    """

    stores: list
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    train_split: str = "train"
    val_split: Optional[str] = "val"
    val_stores: Optional[list] = None
    checkpoint_every: int = 0
    patience: Optional[int] = None
    metrics_every: int = 1
    threshold: float = DEFAULT_THRESHOLD
    layout: Optional[list] = None
    dtype: str = "float32"
    resume_from: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.stores, (str, os.PathLike)):
            self.stores = [self.stores]
        self.stores = [str(s) for s in self.stores]
        if self.val_stores is not None:
            self.val_stores = [str(s) for s in self.val_stores]
        if not self.stores:
            raise TrainError("at least one sample store is required")
        if self.epochs < 1:
            raise TrainError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.metrics_every < 1:
            raise TrainError("metrics_every must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise TrainError("patience must be >= 1 when set")
        if not self.lr > 0:
            raise TrainError("lr must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise TrainError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: Optional[float] = None
    train_acc: Optional[float] = None
    val_loss: Optional[float] = None
    val_acc: Optional[float] = None

    @property
    def scored(self) -> bool:
        return self.train_loss is not None


# --- confusion matrix and metrics ---------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, probs, labels, threshold: float = DEFAULT_THRESHOLD) -> "ConfusionMatrix":
        pred = np.asarray(probs) >= threshold
        lab = np.asarray(labels) >= 0.5
        return cls(
            int(np.sum(pred & lab)), int(np.sum(pred & ~lab)),
            int(np.sum(~pred & ~lab)), int(np.sum(~pred & lab)),
        )

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def normalized(self) -> dict:
        """Every cell divided by the total, so the four cells sum to 1."""
        t = self.total
        if t == 0:
            return {"tp": 0.0, "fp": 0.0, "tn": 0.0, "fn": 0.0}
        return {"tp": self.tp / t, "fp": self.fp / t, "tn": self.tn / t, "fn": self.fn / t}

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn, "total": self.total}

    def table(self) -> str:
        """2x2 table of normalized cells, rows = true label, columns = predicted."""
        n = self.normalized()
        return (
            "              pred 0    pred 1\n"
            f"true 0      {n['tn']:8.4f}  {n['fp']:8.4f}\n"
            f"true 1      {n['fn']:8.4f}  {n['tp']:8.4f}"
        )


@dataclass(frozen=True)
class Metrics:
    """accuracy, precision, recall, f1; iterable as that 4-tuple.

    ``degenerate`` names each metric whose denominator was zero; such a metric
    is reported as 0.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: tuple = ()

    def __iter__(self):
        return iter((self.accuracy, self.precision, self.recall, self.f1))

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "degenerate": list(self.degenerate)}


def metrics(cm: ConfusionMatrix) -> Metrics:
    flags = []

    def ratio(num, den, name):
        if den == 0:
            flags.append(name)
            return 0.0
        return num / den

    acc = ratio(cm.tp + cm.tn, cm.total, "accuracy")
    prec = ratio(cm.tp, cm.tp + cm.fp, "precision")
    rec = ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = ratio(2 * prec * rec, prec + rec, "f1")
    return Metrics(acc, prec, rec, f1, tuple(flags))


# --- store plumbing -----------------------------------------------------------------


def _open(stores) -> list:
    out = []
    for s in stores:
        out.append(s if isinstance(s, SampleStore) else SampleStore(s))
    return out


def check_compatible(sources) -> tuple:
    """(n, channels, schema) shared by every store, else TrainError."""
    first = sources[0]
    for s in sources[1:]:
        if (s.n, s.channels) != (first.n, first.channels):
            raise TrainError(
                f"{s.path}: patch {s.n}x{s.n}x{s.channels} differs from "
                f"{first.path}: {first.n}x{first.n}x{first.channels}"
            )
        if s.schema_list != first.schema_list:
            raise TrainError(f"{s.path}: layer schema differs from {first.path}")
    return first.n, first.channels, first.schema_list


def _split_items(sources, split) -> list:
    """(store index, entry name) pairs of ``split``; ``"all"`` takes every split."""
    if split == "all":
        return [item for sp in SPLITS for item in _split_items(sources, sp)]
    items = []
    for si, s in enumerate(sources):
        if split in s.splits:
            items += [(si, name) for name in s.names(split)]
    return items


def _read(sources, items):
    n, C = sources[0].n, sources[0].channels
    x = np.empty((len(items), n, n, C), dtype=np.float32)
    for k, (si, name) in enumerate(items):
        x[k] = sources[si].read_patch(name)
    y = np.array([label_from_name(name) for _, name in items], dtype=np.float32)
    return x, y


def _predictor(model) -> Callable:
    if isinstance(model, Model):
        return lambda x: predict_fast(model, x, EVAL_CHUNK)
    if callable(model):
        return lambda x: np.asarray(model(x), dtype=np.float64).reshape(-1)
    raise TypeError("model must be a Model or a callable mapping patches to probabilities")


def persistence_predictor(fire_index: int) -> Callable:
    """Baseline that predicts tomorrow's fire state as today's at the patch center."""
    def predict(patches):
        patches = np.asarray(patches)
        c = patches.shape[1] // 2
        return patches[:, c, c, fire_index].astype(np.float64)
    return predict


def _score(model, sources, items, threshold):
    """(mean BCE, ConfusionMatrix) over items in fixed-size chunks."""
    predict = _predictor(model)
    cm = ConfusionMatrix()
    loss_sum = 0.0
    for s in range(0, len(items), EVAL_CHUNK):
        x, y = _read(sources, items[s:s + EVAL_CHUNK])
        p = predict(x)
        loss_sum += bce_loss(p, y) * len(y)
        cm = cm + ConfusionMatrix.from_predictions(p, y, threshold)
    return loss_sum / len(items), cm


def evaluate(model, store, split: str = "test", threshold: float = DEFAULT_THRESHOLD) -> ConfusionMatrix:
    """Confusion matrix over every sample of ``split`` (one store or a list)."""
    stores = store if isinstance(store, (list, tuple)) else [store]
    sources = _open(stores)
    items = _split_items(sources, split)
    if not items:
        raise StoreError(f"split {split!r} is empty or missing")
    return _score(model, sources, items, threshold)[1]


def evaluate_with_loss(model, store, split: str = "test", threshold: float = DEFAULT_THRESHOLD):
    stores = store if isinstance(store, (list, tuple)) else [store]
    sources = _open(stores)
    items = _split_items(sources, split)
    if not items:
        raise StoreError(f"split {split!r} is empty or missing")
    return _score(model, sources, items, threshold)


# --- training ------------------------------------------------------------------------


@dataclass
class TrainRun:
    model: Model
    history: list
    adam: AdamState
    best_model: Optional[Model] = None
    best_epoch: Optional[int] = None
    best_adam: Optional[AdamState] = None
    stopped_early: bool = False
    wall_time: float = 0.0
    checkpoints: list = field(default_factory=list)


def _make_model(config: TrainConfig, n: int, C: int) -> Model:
    dtype = np.dtype(config.dtype)
    if config.layout is None:
        if n != INPUT_SIZE:
            raise TrainError(f"the reference network needs {INPUT_SIZE}x{INPUT_SIZE} patches, store has {n}x{n}")
        return build_reference_model(C, config.seed, dtype)
    return build_model([tuple(r) for r in config.layout], (n, n, C), config.seed, dtype)


def _copy_adam(a: AdamState) -> AdamState:
    return AdamState([m.copy() for m in a.m], [v.copy() for v in a.v], a.t, a.lr, a.beta1, a.beta2, a.eps)


def train_run(config: TrainConfig, out_dir=None) -> TrainRun:
    """Full training run; see :func:`train` for the short form."""
    t_start = time.perf_counter()
    sources = _open(config.stores)
    n, C, _ = check_compatible(sources)
    train_items = _split_items(sources, config.train_split)
    if not train_items:
        raise TrainError(f"training split {config.train_split!r} is empty in every store")
    if config.val_stores:
        val_sources = _open(config.val_stores)
        check_compatible(sources + val_sources)
    else:
        val_sources = sources
    val_items = _split_items(val_sources, config.val_split) if config.val_split else []

    start_epoch = 0
    if config.resume_from:
        model, adam = load_for_resume(config.resume_from)
        side = Path(str(config.resume_from) + ".json")
        if side.exists():
            start_epoch = int(json.loads(side.read_text()).get("epoch", -1)) + 1
        if tuple(model.input_shape) != (n, n, C):
            raise TrainError(f"checkpoint input {model.input_shape} does not match store patches {(n, n, C)}")
    else:
        model = _make_model(config, n, C)
        adam = AdamState.for_params(model.parameters(), lr=config.lr)
    names = model.parameter_names()

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    run = TrainRun(model, [], adam)
    best_loss = np.inf
    since_best = 0
    N = len(train_items)
    last_epoch = start_epoch + config.epochs - 1
    for epoch in range(start_epoch, last_epoch + 1):
        t_epoch = time.perf_counter()
        perm = CounterRNG(config.seed, "epoch", epoch).permutation(N)
        for b in range(0, N, config.batch_size):
            x, y = _read(sources, [train_items[i] for i in perm[b:b + config.batch_size]])
            _, grads = model.loss_and_grad(x, y)
            adam_step(model.parameters(), grads, adam, names)
            model.touch()

        rec = EpochRecord(epoch)
        due = (epoch - start_epoch + 1) % config.metrics_every == 0 or epoch == last_epoch
        if due:
            tl, tcm = _score(model, sources, train_items, config.threshold)
            rec.train_loss, rec.train_acc = tl, metrics(tcm).accuracy
            if val_items:
                vl, vcm = _score(model, val_sources, val_items, config.threshold)
                rec.val_loss, rec.val_acc = vl, metrics(vcm).accuracy
            watch = rec.val_loss if rec.val_loss is not None else rec.train_loss
            if watch < best_loss:
                best_loss, since_best = watch, 0
                run.best_model, run.best_epoch, run.best_adam = model.copy(), epoch, _copy_adam(adam)
            else:
                since_best += 1
        run.history.append(rec)
        log.info(
            "epoch %d: train loss %s acc %s, val loss %s acc %s (%.1fs)",
            epoch, _fmt(rec.train_loss), _fmt(rec.train_acc), _fmt(rec.val_loss), _fmt(rec.val_acc),
            time.perf_counter() - t_epoch,
        )
        if out is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            p = save_checkpoint(model, out / f"epoch_{epoch:04d}.ckpt", adam, {"epoch": epoch})
            run.checkpoints.append(str(p))
        if config.patience is not None and due and since_best >= config.patience:
            run.stopped_early = True
            log.info("early stop after epoch %d (no improvement for %d scored epochs)", epoch, since_best)
            break

    run.wall_time = time.perf_counter() - t_start
    if out is not None:
        final_epoch = run.history[-1].epoch
        save_checkpoint(model, out / "final.ckpt", adam, {"epoch": final_epoch})
        if run.best_model is not None:
            save_checkpoint(run.best_model, out / "best.ckpt", run.best_adam, {"epoch": run.best_epoch})
        export_history(run.history, out / "history.csv")
    return run


def train(config: TrainConfig, out_dir=None):
    """Train and return ``(final model, epoch records)``."""
    run = train_run(config, out_dir)
    return run.model, run.history


# --- history export ------------------------------------------------------------------


HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def _fmt(v) -> str:
    return "" if v is None else "%.6g" % v


def history_csv(records: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for r in records:
        w.writerow([r.epoch, _fmt(r.train_loss), _fmt(r.train_acc), _fmt(r.val_loss), _fmt(r.val_acc)])
    return buf.getvalue()


def export_history(records: Sequence[EpochRecord], path) -> Path:
    """CSV with one row per epoch, 6 significant digits; unscored cells are empty."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(history_csv(records))
    os.replace(tmp, path)
    return path


def read_history(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {k: (float(row[k]) if row[k] != "" else None) for k in HISTORY_COLUMNS[1:]}
            rows.append(EpochRecord(int(row["epoch"]), **vals))
    return rows
