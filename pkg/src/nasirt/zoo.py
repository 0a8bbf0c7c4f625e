"""Grid of small 1-D convolutional classifiers plus the reference single CNN.

Architecture template for grid members, given input length d and K classes:

    [conv(filters, kernel) -> batchnorm -> activation -> maxpool?] x conv_layers
    -> flatten -> [dense(dense_size) -> activation -> dropout] x dense_layers
    -> dense(K) -> softmax

Everything is deterministic: weight init, shuffling and dropout all derive
from explicit seeds, so (hyperparams, seed, config, data) fully determine the
trained weights and therefore the predictions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .layers import (
    ArchitectureError,
    BatchNorm1D,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    LeakyReLU,
    MaxPool1D,
    Tanh,
    cross_entropy,
    param_count as _stack_param_count,
    softmax,
)

__all__ = [
    "HyperParams",
    "TrainConfig",
    "NetworkModel",
    "PredictionVector",
    "TrainingError",
    "FULL_GRID",
    "REDUCED_GRID",
    "GRID_PRESETS",
    "HP_FIELD_ORDER",
    "LEAKY_SLOPE",
    "expand_grid",
    "build",
    "benchmark_cnn",
    "train",
    "predict_dataset",
    "gradient_check",
    "param_count",
]

LEAKY_SLOPE = 0.3  # fixed negative slope for every LeakyReLU in the repo

HP_FIELD_ORDER = (
    "conv_layers",
    "conv_filters",
    "kernel_size",
    "dense_layers",
    "dense_size",
    "dropout_rate",
    "maxpool_size",
    "activation",
)

# Standard 384-combination search space.
FULL_GRID: dict[str, tuple] = {
    "conv_layers": (1, 2),
    "conv_filters": (8, 32, 128),
    "kernel_size": (8, 16),
    "dense_layers": (1, 2),
    "dense_size": (128, 1024),
    "dropout_rate": (0.0, 0.4),
    "maxpool_size": (0, 4),
    "activation": ("leaky_relu", "tanh"),
}

# Desk-scale preset: 8 models, single conv block, small dense head.
REDUCED_GRID: dict[str, tuple] = {
    "conv_layers": (1,),
    "conv_filters": (8, 32),
    "kernel_size": (8,),
    "dense_layers": (1,),
    "dense_size": (128,),
    "dropout_rate": (0.0,),
    "maxpool_size": (0, 4),
    "activation": ("leaky_relu", "tanh"),
}

GRID_PRESETS = {"full": FULL_GRID, "reduced": REDUCED_GRID}

_ACTIVATIONS = {"leaky_relu", "tanh"}


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite loss."""


@dataclass(frozen=True)
class HyperParams:
    conv_layers: int
    conv_filters: int
    kernel_size: int
    dense_layers: int
    dense_size: int
    dropout_rate: float
    maxpool_size: int
    activation: str

    def __post_init__(self):
        for name in ("conv_layers", "conv_filters", "kernel_size",
                     "dense_layers", "dense_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.maxpool_size < 0 or self.maxpool_size == 1:
            raise ValueError("maxpool_size must be 0 (disabled) or >= 2")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


def expand_grid(grid: dict[str, tuple] | None = None) -> list[HyperParams]:
    """Cartesian product of hyperparameter domains.

    Fields iterate in ``HP_FIELD_ORDER`` with the last field varying fastest;
    values keep the order they are listed in. The returned position is a
    model's grid index.
    """
    if grid is None:
        grid = FULL_GRID
    missing = [f for f in HP_FIELD_ORDER if f not in grid]
    if missing:
        raise ValueError(f"grid is missing domains for {missing}")
    extra = [f for f in grid if f not in HP_FIELD_ORDER]
    if extra:
        raise ValueError(f"grid has unknown fields {extra}")
    domains = []
    for name in HP_FIELD_ORDER:
        values = tuple(grid[name])
        if not values:
            raise ValueError(f"empty domain for {name}")
        domains.append(values)
    return [HyperParams(**dict(zip(HP_FIELD_ORDER, combo)))
            for combo in itertools.product(*domains)]


class NetworkModel:
    """A built (and possibly trained) classifier: a layer stack ending in a
    K-way linear head; probabilities come from a softmax over its logits."""

    def __init__(self, layers: list[Layer], feature_count: int,
                 n_classes: int, train_seed: int,
                 hyperparams: HyperParams | None, name: str = "model"):
        self.layers = layers
        self.feature_count = feature_count
        self.n_classes = n_classes
        self.train_seed = train_seed
        self.hyperparams = hyperparams
        self.name = name
        self.loss_curve: list[float] = []

    @property
    def param_count(self) -> int:
        return _stack_param_count(self.layers)

    def logits(self, x: np.ndarray, training: bool = False,
               rng: np.random.Generator | None = None,
               update_stats: bool = True) -> np.ndarray:
        if x.ndim != 2:
            raise ValueError(f"expected (N, features) batch, got {x.shape}")
        if x.shape[1] != self.feature_count:
            raise ValueError(
                f"batch width {x.shape[1]} does not match model feature "
                f"count {self.feature_count}"
            )
        out = x[:, None, :]
        for layer in self.layers:
            out = layer.forward(out, training=training, rng=rng,
                                update_stats=update_stats)
        return out

    def forward(self, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Class-probability matrix; each row sums to 1."""
        return softmax(self.logits(x, training=training, rng=rng))

    def backward(self, dlogits: np.ndarray) -> None:
        grad = dlogits
        for i in range(len(self.layers) - 1, -1, -1):
            grad = self.layers[i].backward(grad, need_input_grad=i > 0)

    def predict(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        return np.concatenate([
            self.forward(x[i:i + batch_size]).argmax(axis=1)
            for i in range(0, x.shape[0], batch_size)
        ])


def _activation(kind: str) -> Layer:
    return LeakyReLU(LEAKY_SLOPE) if kind == "leaky_relu" else Tanh()


def build(hp: HyperParams, feature_count: int, n_classes: int,
          seed: int) -> NetworkModel:
    """Realize a grid member for the given input width and class count.

    Weights are initialized fan-in-scaled uniform from ``seed``; two builds
    with identical arguments share bit-identical initial weights. Raises
    :class:`ArchitectureError` when the conv/pool arithmetic exhausts the
    signal length, naming the offending layer.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if feature_count < hp.kernel_size:
        raise ArchitectureError(
            f"conv1: kernel size {hp.kernel_size} exceeds input length "
            f"{feature_count}"
        )
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    length = feature_count
    channels = 1
    for i in range(1, hp.conv_layers + 1):
        if length < hp.kernel_size:
            raise ArchitectureError(
                f"conv{i}: kernel size {hp.kernel_size} exceeds input "
                f"length {length}"
            )
        layers.append(Conv1D(channels, hp.conv_filters, hp.kernel_size, rng))
        length = length - hp.kernel_size + 1
        channels = hp.conv_filters
        layers.append(BatchNorm1D(channels))
        layers.append(_activation(hp.activation))
        if hp.maxpool_size > 0:
            if length // hp.maxpool_size == 0:
                raise ArchitectureError(
                    f"maxpool{i}: pool size {hp.maxpool_size} collapses "
                    f"length {length} to zero"
                )
            layers.append(MaxPool1D(hp.maxpool_size))
            length //= hp.maxpool_size
    layers.append(Flatten())
    width = channels * length
    for _ in range(hp.dense_layers):
        layers.append(Dense(width, hp.dense_size, rng))
        layers.append(_activation(hp.activation))
        layers.append(Dropout(hp.dropout_rate))
        width = hp.dense_size
    layers.append(Dense(width, n_classes, rng))
    return NetworkModel(layers, feature_count, n_classes, seed, hp)


def benchmark_cnn(feature_count: int, n_classes: int, seed: int,
                  dropout_rate: float = 0.4) -> NetworkModel:
    """Reference single CNN: 32 filters of kernel size 5, one 1024-unit
    dense layer, LeakyReLU activations, dropout after each activation."""
    kernel = 5
    if feature_count < kernel:
        raise ArchitectureError(
            f"conv1: kernel size {kernel} exceeds input length {feature_count}"
        )
    rng = np.random.default_rng(seed)
    length = feature_count - kernel + 1
    layers: list[Layer] = [
        Conv1D(1, 32, kernel, rng),
        LeakyReLU(LEAKY_SLOPE),
        Dropout(dropout_rate),
        Flatten(),
        Dense(32 * length, 1024, rng),
        LeakyReLU(LEAKY_SLOPE),
        Dropout(dropout_rate),
        Dense(1024, n_classes, rng),
    ]
    return NetworkModel(layers, feature_count, n_classes, seed, None,
                        name="single_cnn")


class Adam:
    """In-place Adam over a layer stack's parameters (bias-corrected)."""

    def __init__(self, layers: list[Layer], learning_rate: float,
                 beta1: float, beta2: float, epsilon: float):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = epsilon
        self.t = 0
        self._slots = [(layer, name) for layer in layers
                       for name in layer.params]
        self._m = [np.zeros_like(layer.params[name])
                   for layer, name in self._slots]
        self._v = [np.zeros_like(layer.params[name])
                   for layer, name in self._slots]
        size = max((layer.params[name].size for layer, name in self._slots),
                   default=0)
        self._scratch = np.empty(size)

    def step(self) -> None:
        self.t += 1
        # p -= alpha_t * m / (sqrt(v) + eps * sqrt(1 - b2^t)), algebraically
        # identical to the bias-corrected update but with one fewer pass.
        corr2 = np.sqrt(1.0 - self.beta2 ** self.t)
        alpha = self.lr * corr2 / (1.0 - self.beta1 ** self.t)
        for i, (layer, name) in enumerate(self._slots):
            p = layer.params[name]
            g = layer.grads[name]
            m, v = self._m[i], self._v[i]
            s = self._scratch[:p.size].reshape(p.shape)
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=s)
            m += s
            v *= self.beta2
            np.multiply(g, g, out=s)
            s *= 1.0 - self.beta2
            v += s
            np.sqrt(v, out=s)
            s += self.eps * corr2
            np.divide(m, s, out=s)
            s *= alpha
            p -= s


def _dataset_loss(model: NetworkModel, x: np.ndarray, y: np.ndarray,
                  batch_size: int) -> float:
    """Mean cross-entropy with batch-statistic normalization, dropout off,
    running statistics untouched; comparable to the per-epoch train losses."""
    total = 0.0
    for i in range(0, x.shape[0], batch_size):
        xb, yb = x[i:i + batch_size], y[i:i + batch_size]
        loss, _ = cross_entropy(
            model.logits(xb, training=True, rng=None, update_stats=False), yb)
        total += loss * xb.shape[0]
    return total / x.shape[0]


def train(model: NetworkModel, x: np.ndarray, y: np.ndarray,
          cfg: TrainConfig) -> NetworkModel:
    """Adam on softmax cross-entropy with a seed-fixed shuffling schedule.

    ``model.loss_curve`` records the loss at initialization followed by the
    mean batch loss of each epoch. Raises :class:`TrainingError` as soon as
    a batch produces a non-finite loss, naming epoch and batch.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training set must be a non-empty (N, d) matrix")
    if y.shape != (x.shape[0],):
        raise ValueError("labels do not align with the training matrix")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ValueError(f"labels must lie in [0, {model.n_classes})")
    rng = np.random.default_rng(cfg.seed)
    adam = Adam(model.layers, cfg.learning_rate, cfg.beta1, cfg.beta2,
                cfg.epsilon)
    n = x.shape[0]
    model.loss_curve = [_dataset_loss(model, x, y, cfg.batch_size)]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            logits = model.logits(xb, training=True, rng=rng)
            loss, dlogits = cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {bi}"
                )
            model.backward(dlogits)
            adam.step()
            epoch_loss += loss * xb.shape[0]
        model.loss_curve.append(epoch_loss / n)
    return model


@dataclass(frozen=True)
class PredictionVector:
    """One model's responses to a test set: hard classes plus probabilities."""

    model_id: str
    classes: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        classes = np.asarray(self.classes, dtype=np.int64)
        probs = np.asarray(self.probabilities, dtype=np.float64)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "probabilities", probs)
        if probs.ndim != 2 or classes.shape != (probs.shape[0],):
            raise ValueError("classes and probabilities do not align")
        if np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("probability rows must sum to 1")
        if not np.array_equal(probs.argmax(axis=1), classes):
            raise ValueError("predicted classes must be the argmax rows")
        classes.setflags(write=False)
        probs.setflags(write=False)

    @property
    def n_instances(self) -> int:
        return self.classes.shape[0]


def predict_dataset(model: NetworkModel, x: np.ndarray,
                    model_id: str, batch_size: int = 512) -> PredictionVector:
    """Deterministic evaluation-mode predictions for a whole matrix."""
    probs = np.concatenate([
        model.forward(x[i:i + batch_size])
        for i in range(0, x.shape[0], batch_size)
    ])
    return PredictionVector(model_id=model_id, classes=probs.argmax(axis=1),
                            probabilities=probs)


def param_count(model: NetworkModel | list[Layer]) -> int:
    """Exact element count over all weight and bias tensors."""
    if isinstance(model, NetworkModel):
        return model.param_count
    return _stack_param_count(model)


def gradient_check(model: NetworkModel, instance: np.ndarray, label: int,
                   epsilon: float = 1e-5, n_samples: int = 200,
                   seed: int = 0) -> float:
    """Max relative error between backprop and central finite differences.

    Samples ``n_samples`` weights uniformly across all parameter tensors (or
    all weights when the model is smaller). The loss is evaluated with batch
    statistics and dropout disabled, so it is a smooth deterministic function
    of the parameters. Relative error uses an absolute floor of 1e-6 to keep
    vanishing gradients comparable.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    x = np.asarray(instance, dtype=np.float64).reshape(1, -1)
    y = np.asarray([label], dtype=np.int64)

    def loss() -> float:
        logits = model.logits(x, training=True, rng=None, update_stats=False)
        return cross_entropy(logits, y)[0]

    logits = model.logits(x, training=True, rng=None, update_stats=False)
    _, dlogits = cross_entropy(logits, y)
    model.backward(dlogits)

    slots = [(layer, name) for layer in model.layers for name in layer.params]
    sizes = np.array([layer.params[name].size for layer, name in slots])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    chosen = (np.arange(total) if total <= n_samples
              else rng.choice(total, size=n_samples, replace=False))

    worst = 0.0
    for flat in np.sort(chosen):
        slot = int(np.searchsorted(offsets, flat, side="right")) - 1
        layer, name = slots[slot]
        local = int(flat - offsets[slot])
        params = layer.params[name]
        original = params.flat[local]
        params.flat[local] = original + epsilon
        up = loss()
        params.flat[local] = original - epsilon
        down = loss()
        params.flat[local] = original
        numeric = (up - down) / (2.0 * epsilon)
        analytic = layer.grads[name].flat[local]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, err)
    return worst
