"""SGD with momentum and weight decay, plus the sparsity-preserving loop.

Every training step runs forward, backward, then for each masked layer zeroes
the masked gradient entries and re-zeroes the masked weights immediately
before the optimizer step. Because masked gradients and masked weights are
exact zeros entering the step, weight decay contributes nothing at pruned
positions and the zero count never moves; a post-step assertion enforces that
with no tolerance. Momentum buffers are deliberately left untouched by the
masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network, count_zero_weights
from .seeds import derive_seed


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    lr_milestones: tuple[int, ...] = ()
    lr_gamma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        ms = tuple(self.lr_milestones)
        object.__setattr__(self, "lr_milestones", ms)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"lr_milestones must be strictly increasing, got {ms}")
        if ms and ms[-1] >= self.epochs:
            raise ValueError(f"lr_milestones must be < epochs={self.epochs}, got {ms}")


class OptimizerState:
    """Momentum buffers, one per parameter, shapes tracking the parameters."""

    def __init__(self, buffers: dict[str, np.ndarray]):
        self.buffers = buffers

    @classmethod
    def for_network(cls, net: Network) -> "OptimizerState":
        buffers = {}
        for layer in net.weighted_layers:
            buffers[f"{layer.layer_id}.weight"] = np.zeros_like(layer.weights)
            buffers[f"{layer.layer_id}.bias"] = np.zeros_like(layer.bias)
        return cls(buffers)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_accuracy: float
    achieved_sparsity: float  # recomputed from actual weights, not masks
    zero_count: int


@dataclass
class StepResult:
    loss: float
    correct: int
    count: int


class SparsityViolationError(RuntimeError):
    """A masked weight position became non-zero after an optimizer step."""

    def __init__(self, layer_id: str, indices: np.ndarray):
        self.layer_id = layer_id
        self.indices = indices
        shown = indices[:8].tolist()
        super().__init__(
            f"masked weights became non-zero in layer {layer_id!r} at flat "
            f"indices {shown}{'...' if len(indices) > 8 else ''}"
        )


def sgd_step(net: Network, state: OptimizerState, lr: float, cfg: TrainConfig) -> None:
    """Momentum SGD over every trainable parameter, biases included:

        buf <- momentum * buf + (grad + weight_decay * param)
        param <- param - lr * buf
    """
    for layer in net.weighted_layers:
        if layer.grad_weights is None or layer.grad_bias is None:
            raise RuntimeError(f"no gradients for layer {layer.layer_id!r}: run backward first")
        for key, param, grad in (
            (f"{layer.layer_id}.weight", layer.weights, layer.grad_weights),
            (f"{layer.layer_id}.bias", layer.bias, layer.grad_bias),
        ):
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError(
                    f"non-finite gradient in {key} (max |grad| = {np.nanmax(np.abs(grad))})"
                )
            buf = state.buffers[key]
            buf *= cfg.momentum
            buf += grad + cfg.weight_decay * param
            param -= lr * buf
    net.invalidate_cache()


def masked_train_step(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    state: OptimizerState,
    lr: float,
    cfg: TrainConfig,
) -> StepResult:
    """One training step with strict mask enforcement.

    Order is fixed: forward, backward, then per masked layer gradient masking
    and weight re-masking, then the optimizer step. Afterwards every masked
    position must hold exactly 0.0 or the step fails hard.
    """
    logits = net.forward(x)
    loss = net.backward(y)
    for layer in net.masked_layers:
        layer.grad_weights *= layer.mask
        layer.weights *= layer.mask
    sgd_step(net, state, lr, cfg)
    for layer in net.masked_layers:
        violations = np.flatnonzero((layer.mask == 0.0) & (layer.weights != 0.0))
        if violations.size:
            raise SparsityViolationError(layer.layer_id, violations)
    correct = int((logits.argmax(axis=1) == np.asarray(y)).sum())
    return StepResult(loss=loss, correct=correct, count=len(y))


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for an epoch: base lr decayed by lr_gamma at each
    milestone already reached."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    decays = sum(1 for m in cfg.lr_milestones if m <= epoch)
    return cfg.lr * cfg.lr_gamma**decays


def evaluate(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    """Top-1 accuracy on a split."""
    correct = 0
    for start in range(0, len(x), batch_size):
        logits = net.forward(x[start : start + batch_size])
        correct += int((logits.argmax(axis=1) == y[start : start + batch_size]).sum())
    return correct / len(x)


def model_input(net: Network, dataset, x: np.ndarray) -> np.ndarray:
    """Reshape flat features into image stacks when the network starts with a
    conv layer."""
    if net.input_kind == "image":
        if dataset.image_shape is None:
            raise ValueError("network expects image input but the dataset has no image shape")
        c, h, w = dataset.image_shape
        return x.reshape(len(x), c, h, w)
    return x


def run_training(
    net: Network, dataset, cfg: TrainConfig, on_epoch_end=None
) -> list[EpochMetrics]:
    """Train for cfg.epochs with seeded per-epoch shuffling.

    Returns one metrics record per epoch; the sparsity figures are recounted
    from the live weights every epoch, so any drift would show up here even
    if the per-step assertion were disabled. ``on_epoch_end(epoch, net,
    metrics)``, when given, runs after each epoch (log appending, periodic
    checkpoints).
    """
    state = OptimizerState.for_network(net)
    train_x = model_input(net, dataset, dataset.train_x)
    test_x = model_input(net, dataset, dataset.test_x)
    n = len(train_x)
    metrics: list[EpochMetrics] = []
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle", epoch))
        perm = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            result = masked_train_step(net, train_x[idx], dataset.train_y[idx], state, lr, cfg)
            loss_sum += result.loss * result.count
            correct += result.correct
        report = count_zero_weights(net)
        epoch_metrics = EpochMetrics(
            epoch=epoch,
            train_loss=loss_sum / n,
            train_accuracy=correct / n,
            test_accuracy=evaluate(net, test_x, dataset.test_y),
            achieved_sparsity=report.global_sparsity,
            zero_count=report.global_zeros,
        )
        metrics.append(epoch_metrics)
        if on_epoch_end is not None:
            on_epoch_end(epoch, net, epoch_metrics)
    return metrics
