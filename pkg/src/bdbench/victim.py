"""Trainable victim classifier: one tanh hidden layer over hashed features.

Training is plain mini-batch SGD with weight decay, single-threaded, and
bit-reproducible from the config seed. The hidden activations double as
the representation embeddings the clustering defense consumes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, ValidationError
from .text import Featurizer, tokenize

_MAGIC = b"BDVM"
_VERSION = 1


@dataclass(frozen=True)
class VictimConfig:
    hidden_dim: int = 64
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.5
    l2: float = 1e-4
    seed: int = 1

    def __post_init__(self):
        for name in ("hidden_dim", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2 <= 0.0:
            raise ConfigError(f"l2 must be positive, got {self.l2}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


class VictimModel:
    """Trained two-layer softmax classifier over hashed token counts."""

    def __init__(self, W1, b1, W2, b2, featurizer: Featurizer, seed: int = 0,
                 epochs_run: int = 0, final_loss: float = float("nan"), loss_history=()):
        self.W1 = np.ascontiguousarray(W1, dtype=np.float64)
        self.b1 = np.ascontiguousarray(b1, dtype=np.float64)
        self.W2 = np.ascontiguousarray(W2, dtype=np.float64)
        self.b2 = np.ascontiguousarray(b2, dtype=np.float64)
        self.featurizer = featurizer
        self.seed = seed
        self.epochs_run = epochs_run
        self.final_loss = final_loss
        self.loss_history = tuple(loss_history)
        if not (np.isfinite(self.W1).all() and np.isfinite(self.W2).all()
                and np.isfinite(self.b1).all() and np.isfinite(self.b2).all()):
            raise ValidationError("model parameters are not finite")

    @property
    def dims(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.W2.shape[1]

    def _csr(self, texts):
        return self.featurizer.csr([tokenize(t) for t in texts])

    def hidden_batch(self, texts) -> np.ndarray:
        indptr, idx, val = self._csr(texts)
        return kernels.mlp_hidden(indptr, idx, val, self.W1, self.b1)

    def predict_proba_batch(self, texts) -> np.ndarray:
        h = self.hidden_batch(texts)
        logits = h @ self.W2 + self.b2
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return p

    def predict_batch(self, texts) -> np.ndarray:
        return np.argmax(self.predict_proba_batch(texts), axis=1)

    def predict_proba(self, text: str) -> np.ndarray:
        return self.predict_proba_batch([text])[0]

    def predict(self, text: str) -> int:
        return int(np.argmax(self.predict_proba(text)))

    def represent(self, text: str) -> np.ndarray:
        """Hidden-layer activation vector; entries lie in (-1, 1)."""
        return self.hidden_batch([text])[0]

    def represent_batch(self, texts) -> np.ndarray:
        return self.hidden_batch(texts)

    def save(self, path) -> None:
        """Versioned flat binary: dims header, then row-major float64 weights."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIIIQId", _VERSION, self.dims, self.hidden_dim,
                                 self.num_classes, self.seed, self.epochs_run, self.final_loss))
            for arr in (self.W1, self.b1, self.W2, self.b2):
                fh.write(np.ascontiguousarray(arr).tobytes())

    @classmethod
    def load(cls, path) -> "VictimModel":
        raw = Path(path).read_bytes()
        if raw[:4] != _MAGIC:
            raise ValidationError(f"{path}: not a victim model file")
        header = struct.Struct("<IIIIQId")
        version, dims, hidden, nc, seed, epochs_run, final_loss = header.unpack_from(raw, 4)
        if version != _VERSION:
            raise ValidationError(f"{path}: unsupported model version {version}")
        off = 4 + header.size
        sizes = [(dims, hidden), (hidden,), (hidden, nc), (nc,)]
        arrays = []
        for shape in sizes:
            n = int(np.prod(shape))
            arrays.append(np.frombuffer(raw, dtype=np.float64, count=n, offset=off).reshape(shape).copy())
            off += n * 8
        W1, b1, W2, b2 = arrays
        return cls(W1, b1, W2, b2, featurizer=Featurizer(dims=dims), seed=seed,
                   epochs_run=epochs_run, final_loss=final_loss)


def _prepare(samples, featurizer: Featurizer):
    rows = [featurizer.sparse(tokenize(s.text)) for s in samples]
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return rows, labels


def _batch_csr(rows, order):
    lengths = np.array([len(rows[i][0]) for i in order], dtype=np.int64)
    indptr = np.zeros(len(order) + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    if len(order):
        idx = np.concatenate([rows[i][0] for i in order])
        val = np.concatenate([rows[i][1] for i in order])
    else:
        idx, val = np.empty(0, dtype=np.int64), np.empty(0)
    return indptr, idx, val


def train(samples, config: VictimConfig, featurizer: Featurizer | None = None,
          num_classes: int | None = None) -> VictimModel:
    """Train a victim model on labeled samples.

    Weight init and per-epoch shuffling are driven only by config.seed, so
    identical inputs give bit-identical parameters on a given backend.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("training split is empty")
    featurizer = featurizer or Featurizer()
    if num_classes is None:
        num_classes = max(s.label for s in samples) + 1
    num_classes = max(num_classes, 2)

    rows, labels = _prepare(samples, featurizer)
    rng = np.random.default_rng(config.seed)
    # zero first layer: buckets never seen in training stay exactly neutral,
    # and no initialization mass bloats the L2 term; the random second layer
    # breaks hidden-unit symmetry
    W1 = np.zeros((featurizer.dims, config.hidden_dim))
    b1 = np.zeros(config.hidden_dim)
    W2 = rng.normal(0.0, 0.5, size=(config.hidden_dim, num_classes))
    b2 = np.zeros(num_classes)

    n = len(samples)
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            order = perm[start : start + config.batch_size]
            indptr, idx, val = _batch_csr(rows, order)
            loss = kernels.sgd_batch_step(indptr, idx, val, labels[order], W1, b1, W2, b2,
                                          config.learning_rate, config.l2)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: loss is not finite "
                    "(learning rate too high)"
                )
            losses.append(loss)
        history.append(float(np.mean(losses)))

    return VictimModel(W1, b1, W2, b2, featurizer=featurizer, seed=config.seed,
                       epochs_run=config.epochs, final_loss=history[-1], loss_history=history)


def batch_loss_and_grads(model: VictimModel, samples, l2: float):
    """Full-objective loss and dense analytic gradients on one batch.

    Mirrors the kernel's update math (mean cross-entropy plus
    0.5 * l2 * (|W1|^2 + |W2|^2)) without applying any update.
    """
    rows, labels = _prepare(samples, model.featurizer)
    indptr, idx, val = _batch_csr(rows, list(range(len(samples))))
    h = kernels.mlp_hidden(indptr, idx, val, model.W1, model.b1)
    logits = h @ model.W2 + model.b2
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    n = len(samples)
    loss = -float(np.mean(np.log(p[np.arange(n), labels])))
    loss += 0.5 * l2 * (float(np.dot(model.W1.ravel(), model.W1.ravel()))
                        + float(np.dot(model.W2.ravel(), model.W2.ravel())))
    g = p
    g[np.arange(n), labels] -= 1.0
    g /= n
    gW2 = h.T @ g + l2 * model.W2
    gb2 = g.sum(axis=0)
    dh = g @ model.W2.T
    dz = (1.0 - h * h) * dh
    gb1 = dz.sum(axis=0)
    gW1 = l2 * model.W1.copy()
    if len(idx):
        rowids = np.repeat(np.arange(n), np.diff(indptr))
        np.add.at(gW1, idx, val[:, None] * dz[rowids])
    return loss, gW1, gb1, gW2, gb2


def gradient_check(model: VictimModel, samples, l2: float | None = None,
                   step: float = 1e-4, n_coords: int = 60, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Probes a seeded random subset of coordinates across all four parameter
    tensors; rows of W1 touched by the batch are sampled preferentially so
    the data-dependent part of the gradient is exercised.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("gradient_check needs a nonempty batch")
    if l2 is None:
        l2 = 1e-4
    _, gW1, gb1, gW2, gb2 = batch_loss_and_grads(model, samples, l2)
    rng = np.random.default_rng(seed)

    touched = sorted({int(b) for s in samples
                      for b in model.featurizer.sparse(tokenize(s.text))[0]})
    coords = []
    params = {"W1": model.W1, "b1": model.b1, "W2": model.W2, "b2": model.b2}
    grads = {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}
    quota = max(1, n_coords // 4)
    for _ in range(quota):
        if touched:
            coords.append(("W1", (int(touched[rng.integers(len(touched))]),
                                  int(rng.integers(model.hidden_dim)))))
        coords.append(("W1", (int(rng.integers(model.dims)), int(rng.integers(model.hidden_dim)))))
        coords.append(("b1", (int(rng.integers(model.hidden_dim)),)))
        coords.append(("W2", (int(rng.integers(model.hidden_dim)), int(rng.integers(model.num_classes)))))
    for j in range(model.num_classes):
        coords.append(("b2", (j,)))

    max_rel = 0.0
    for name, pos in coords:
        arr = params[name]
        orig = arr[pos]
        arr[pos] = orig + step
        f_plus, *_ = batch_loss_and_grads(model, samples, l2)
        arr[pos] = orig - step
        f_minus, *_ = batch_loss_and_grads(model, samples, l2)
        arr[pos] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = float(grads[name][pos])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel
