"""Small fully connected networks trained from scratch with numpy.

The regression model is an MLP with ReLU hidden layers and one affine head
per predicted parameter. Heads live in log space (log mu, and log gamma /
log dispersion / log variance depending on the family); exponentiation
happens inside the losses, so backpropagation picks up the chain factor
mu for d/d(log mu) and gamma for d/d(log gamma).

Training uses mini-batch AdamW with decoupled weight decay, a cosine decay
of the learning rate over epochs, and keeps the weights from the epoch with
the best validation loss. Features are standardized with statistics of the
training split; the standardizer is stored with the weights so checkpoints
are self-contained. An empty hidden_widths tuple degrades the model to a
log-linear GLM, which is handy for sanity checks.

Everything is deterministic for a fixed seed.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from ddpnkit.errors import DomainError, NumericDivergence, ShapeError
from ddpnkit.losses import LossSpec, baseline_nll, ddpn_beta_nll, ddpn_grads

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CKPT_HEADER = "ddpnkit-ckpt v1"


@dataclass(frozen=True)
class HeadOutput:
    """Raw affine head outputs for one example, still in log space."""

    log_mu: float
    log_gamma_or_disp: float | None = None


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int
    hidden_widths: tuple = (128, 128, 128, 64)
    activation: str = "relu"
    head_count: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1:
            raise DomainError(f"input_dim must be positive, got {self.input_dim}")
        if self.activation != "relu":
            raise DomainError(f"only relu activation is supported, got {self.activation!r}")
        if self.head_count not in (1, 2):
            raise DomainError(f"head_count must be 1 or 2, got {self.head_count}")
        if any(w < 1 for w in self.hidden_widths):
            raise DomainError(f"hidden widths must be positive, got {self.hidden_widths}")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))


@dataclass
class MLPWeights:
    """Hidden layer parameters, head parameters and the input standardizer.

    hidden holds [W, b] pairs with W of shape (out, in). head_w has shape
    (head_count, last_width); row 0 is the log-mu head, row 1 (if present)
    the log-dispersion head.
    """

    hidden: list
    head_w: np.ndarray
    head_b: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray

    @property
    def head_count(self) -> int:
        return int(self.head_b.size)

    def copy(self) -> "MLPWeights":
        return copy.deepcopy(self)


@dataclass
class MLPGradients:
    hidden: list
    head_w: np.ndarray
    head_b: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-5
    seed: int = 0
    gamma_bias_init: float = 0.0
    hidden_widths: tuple = (128, 128, 128, 64)
    select_unscaled: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr <= 0.0:
            raise DomainError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0.0:
            raise DomainError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))


@dataclass
class TrainReport:
    train_loss: list
    val_loss: list
    best_epoch: int
    seed: int
    wall_time: float
    config: TrainConfig
    final_weights: MLPWeights | None = None
    best_weights: MLPWeights | None = None


@dataclass(frozen=True)
class SplitIndices:
    """Row indices of a dataset assigned to the train/val/test roles."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    """Cosine decay from lr0 at epoch 0 toward 0 at epoch total_epochs."""
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def init_mlp(config: MLPConfig, gamma_bias_init: float = 0.0) -> MLPWeights:
    """Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    The second head's bias is set to gamma_bias_init so the network starts
    from a chosen dispersion level (initial predicted log gamma equals
    gamma_bias_init at the origin of standardized feature space).
    """
    rng = np.random.default_rng(config.seed)
    hidden = []
    fan_in = config.input_dim
    for width in config.hidden_widths:
        bound = 1.0 / math.sqrt(fan_in)
        hidden.append([
            rng.uniform(-bound, bound, size=(width, fan_in)),
            rng.uniform(-bound, bound, size=width),
        ])
        fan_in = width
    bound = 1.0 / math.sqrt(fan_in)
    head_w = rng.uniform(-bound, bound, size=(config.head_count, fan_in))
    head_b = rng.uniform(-bound, bound, size=config.head_count)
    if config.head_count == 2:
        head_b[1] = gamma_bias_init
    return MLPWeights(
        hidden=hidden,
        head_w=head_w,
        head_b=head_b,
        x_mean=np.zeros(config.input_dim),
        x_std=np.ones(config.input_dim),
    )


def _forward_cached(weights: MLPWeights, X: np.ndarray):
    """Forward pass keeping activations for backprop.

    Returns (activations, heads) where activations[0] is the standardized
    input and heads has shape (n, head_count).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != weights.x_mean.size:
        raise ShapeError(f"expected {weights.x_mean.size} features, got {X.shape[1]}")
    acts = [(X - weights.x_mean) / weights.x_std]
    for W, b in weights.hidden:
        acts.append(np.maximum(acts[-1] @ W.T + b, 0.0))
    heads = acts[-1] @ weights.head_w.T + weights.head_b
    return acts, heads


def forward_batch(weights: MLPWeights, X: np.ndarray) -> np.ndarray:
    """Head outputs, shape (n, head_count), still in log space."""
    return _forward_cached(weights, X)[1]


def forward(weights: MLPWeights, x: np.ndarray) -> HeadOutput:
    """Single-example forward pass."""
    heads = forward_batch(weights, np.atleast_2d(x))[0]
    second = float(heads[1]) if heads.size > 1 else None
    return HeadOutput(log_mu=float(heads[0]), log_gamma_or_disp=second)


def _head_loss_and_grads(spec: LossSpec, ys: np.ndarray, heads: np.ndarray):
    """Per-example loss values and gradients w.r.t. the log-space heads."""
    a1 = heads[:, 0]
    if spec.family == "double_poisson":
        mu = np.exp(a1)
        gamma = np.exp(heads[:, 1])
        # exp overflow/underflow leaves the positive range; that is a numeric
        # blow-up of the optimization, not bad user input
        for arr in (mu, gamma):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
                raise NumericDivergence("head outputs overflowed out of the positive range")
        values, _ = ddpn_beta_nll(ys, mu, gamma, spec.beta)
        dmu, dgamma = ddpn_grads(ys, mu, gamma, spec.beta)
        return values, np.stack([dmu * mu, dgamma * gamma], axis=1)
    head = HeadOutput(a1, heads[:, 1] if spec.head_count == 2 else None)
    values, (g1, g2) = baseline_nll(spec, ys, head)
    if g2 is None:
        return values, g1[:, None]
    return values, np.stack([g1, g2], axis=1)


def batch_loss(weights: MLPWeights, X: np.ndarray, ys: np.ndarray, spec: LossSpec) -> float:
    """Mean per-example loss of the batch, inf if the model has blown up.

    Returning inf rather than raising keeps validation evaluation usable
    while the training batches themselves are still finite.
    """
    ys = np.asarray(ys, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        heads = forward_batch(weights, X)
        try:
            values, _ = _head_loss_and_grads(spec, ys, heads)
        except NumericDivergence:
            return math.inf
    return float(np.mean(values))


def backward(weights: MLPWeights, X: np.ndarray, ys: np.ndarray, spec: LossSpec):
    """Mean-over-batch gradients for every trainable array.

    Returns (grads, mean_loss). Raises NumericDivergence if the batch loss
    is not finite.
    """
    ys = np.asarray(ys, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        acts, heads = _forward_cached(weights, X)
        if ys.size != heads.shape[0]:
            raise ShapeError(f"batch has {heads.shape[0]} inputs but {ys.size} labels")
        values, dheads = _head_loss_and_grads(spec, ys, heads)
        mean_loss = float(np.mean(values))
        if not math.isfinite(mean_loss):
            raise NumericDivergence("non-finite batch loss")
        n = float(ys.size)
        dheads = dheads / n
        grad_head_w = dheads.T @ acts[-1]
        grad_head_b = dheads.sum(axis=0)
        delta = dheads @ weights.head_w
        grads_hidden = []
        for i in range(len(weights.hidden) - 1, -1, -1):
            delta = delta * (acts[i + 1] > 0.0)
            grads_hidden.append([delta.T @ acts[i], delta.sum(axis=0)])
            delta = delta @ weights.hidden[i][0]
        grads_hidden.reverse()
    return MLPGradients(grads_hidden, grad_head_w, grad_head_b), mean_loss


def _trainable(obj) -> list:
    arrays = []
    for W, b in obj.hidden:
        arrays.extend([W, b])
    arrays.extend([obj.head_w, obj.head_b])
    return arrays


def train(dataset, split: SplitIndices, config: TrainConfig, epoch_hook=None):
    """Fit an MLP on the dataset's train rows, selecting on validation loss.

    dataset needs xs of shape (n, d) and ys of shape (n,). The returned
    weights are the best-validation copy; the report also carries the final
    weights, loss curves and timing. epoch_hook, if given, is called as
    epoch_hook(epoch, weights) after each epoch with 1-based epoch numbers.

    Raises NumericDivergence (with the partial report attached) if a batch
    loss becomes non-finite.
    """
    t0 = time.perf_counter()
    xs = np.atleast_2d(np.asarray(dataset.xs, dtype=float))
    ys = np.asarray(dataset.ys, dtype=float)
    if xs.shape[0] != ys.size:
        raise ShapeError(f"dataset has {xs.shape[0]} inputs but {ys.size} labels")
    if split.train.size == 0 or split.val.size == 0:
        raise DomainError("train and val splits must be nonempty")

    model_cfg = MLPConfig(
        input_dim=xs.shape[1],
        hidden_widths=config.hidden_widths,
        head_count=config.loss.head_count,
        seed=config.seed,
    )
    weights = init_mlp(model_cfg, gamma_bias_init=config.gamma_bias_init)
    train_x, train_y = xs[split.train], ys[split.train]
    std = train_x.std(axis=0)
    std[std < 1e-12] = 1.0
    weights.x_mean = train_x.mean(axis=0)
    weights.x_std = std
    val_x, val_y = xs[split.val], ys[split.val]
    val_spec = LossSpec(config.loss.family, 0.0) if config.select_unscaled else config.loss

    params = _trainable(weights)
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    step = 0
    shuffle_rng = np.random.default_rng(config.seed + 1)

    report = TrainReport(
        train_loss=[], val_loss=[], best_epoch=0, seed=config.seed,
        wall_time=0.0, config=config,
    )
    best_val = math.inf
    best_weights = weights.copy()

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr)
        order = shuffle_rng.permutation(split.train.size)
        epoch_loss = 0.0
        for start in range(0, order.size, config.batch_size):
            rows = order[start : start + config.batch_size]
            try:
                grads, loss_value = backward(weights, train_x[rows], train_y[rows], config.loss)
            except NumericDivergence:
                report.wall_time = time.perf_counter() - t0
                report.final_weights = weights
                raise NumericDivergence(
                    f"training diverged at epoch {epoch + 1}, batch {start // config.batch_size}",
                    report=report,
                ) from None
            epoch_loss += loss_value * rows.size
            step += 1
            bias1 = 1.0 - ADAM_BETA1**step
            bias2 = 1.0 - ADAM_BETA2**step
            for p, g, m, v in zip(params, _trainable(grads), m_state, v_state):
                m *= ADAM_BETA1
                m += (1.0 - ADAM_BETA1) * g
                v *= ADAM_BETA2
                v += (1.0 - ADAM_BETA2) * g * g
                p -= lr * ((m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
                           + config.weight_decay * p)
        report.train_loss.append(epoch_loss / split.train.size)
        val_loss = batch_loss(weights, val_x, val_y, val_spec)
        report.val_loss.append(val_loss)
        if math.isfinite(val_loss) and val_loss < best_val:
            best_val = val_loss
            best_weights = weights.copy()
            report.best_epoch = epoch + 1
        if epoch_hook is not None:
            epoch_hook(epoch + 1, weights)

    report.wall_time = time.perf_counter() - t0
    report.final_weights = weights
    report.best_weights = best_weights
    return best_weights, report


# --- checkpoint I/O -----------------------------------------------------------


def _format_tensor(name: str, arr: np.ndarray) -> list:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        lines = [f"tensor {name} 1 {arr.size}"]
        lines.append(" ".join(repr(float(v)) for v in arr))
    elif arr.ndim == 2:
        lines = [f"tensor {name} 2 {arr.shape[0]} {arr.shape[1]}"]
        for row in arr:
            lines.append(" ".join(repr(float(v)) for v in row))
    else:
        raise ShapeError(f"cannot serialize tensor of rank {arr.ndim}")
    return lines


def render_checkpoint(weights: MLPWeights, meta: dict) -> str:
    """Checkpoint text: header, key=value metadata echo, then each tensor as
    a dimension-prefixed block of decimal floats. repr round-trips doubles
    exactly, so save/load is bit-identical."""
    lines = [CKPT_HEADER]
    for key, value in meta.items():
        lines.append(f"{key}={value}")
    named = [("x_mean", weights.x_mean), ("x_std", weights.x_std)]
    for i, (W, b) in enumerate(weights.hidden):
        named.append((f"hidden{i}.W", W))
        named.append((f"hidden{i}.b", b))
    named.append(("head.W", weights.head_w))
    named.append(("head.b", weights.head_b))
    for name, arr in named:
        lines.extend(_format_tensor(name, arr))
    return "\n".join(lines) + "\n"


def save_checkpoint(weights: MLPWeights, meta: dict, path) -> None:
    """Write a versioned flat-text checkpoint (see render_checkpoint)."""
    with open(path, "w") as fh:
        fh.write(render_checkpoint(weights, meta))


class CheckpointFormatError(DomainError):
    """The checkpoint file does not follow the expected layout."""


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint.

    Returns (MLPWeights, meta dict with string values).
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CKPT_HEADER:
        raise CheckpointFormatError(f"{path}: missing header {CKPT_HEADER!r}")
    meta = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("tensor "):
        if "=" not in lines[i]:
            raise CheckpointFormatError(f"{path}: bad metadata line {lines[i]!r}")
        key, _, value = lines[i].partition("=")
        meta[key] = value
        i += 1
    tensors = {}
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] != "tensor" or len(parts) < 4:
            raise CheckpointFormatError(f"{path}: bad tensor line {lines[i]!r}")
        name, rank = parts[1], int(parts[2])
        if rank == 1:
            n = int(parts[3])
            row = np.array([float(v) for v in lines[i + 1].split()])
            if row.size != n:
                raise CheckpointFormatError(f"{path}: tensor {name} expected {n} values")
            tensors[name] = row
            i += 2
        elif rank == 2:
            r, c = int(parts[3]), int(parts[4])
            block = [np.array([float(v) for v in lines[i + 1 + j].split()]) for j in range(r)]
            arr = np.stack(block) if r else np.zeros((0, c))
            if arr.shape != (r, c):
                raise CheckpointFormatError(f"{path}: tensor {name} expected shape {(r, c)}")
            tensors[name] = arr
            i += 1 + r
        else:
            raise CheckpointFormatError(f"{path}: unsupported tensor rank {rank}")
    hidden = []
    j = 0
    while f"hidden{j}.W" in tensors:
        hidden.append([tensors[f"hidden{j}.W"], tensors[f"hidden{j}.b"]])
        j += 1
    for required in ("x_mean", "x_std", "head.W", "head.b"):
        if required not in tensors:
            raise CheckpointFormatError(f"{path}: missing tensor {required}")
    weights = MLPWeights(
        hidden=hidden,
        head_w=tensors["head.W"],
        head_b=tensors["head.b"],
        x_mean=tensors["x_mean"],
        x_std=tensors["x_std"],
    )
    return weights, meta


def train_meta(config: TrainConfig, input_dim: int) -> dict:
    """Checkpoint metadata echo of a training configuration."""
    meta = {"family": config.loss.family, "beta": repr(config.loss.beta),
            "input_dim": str(input_dim)}
    for f in fields(TrainConfig):
        if f.name == "loss":
            continue
        value = getattr(config, f.name)
        if f.name == "hidden_widths":
            value = ",".join(str(w) for w in value)
        meta[f.name] = repr(value) if isinstance(value, float) else str(value)
    return meta
