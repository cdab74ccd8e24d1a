"""Mini-batch SGD with L2 regularization, dev-driven learning-rate halving,
best-on-dev checkpointing, and the gradient-check harness.

Determinism: all randomness flows from the config seed. Identical
(queries, config, initial params) produce identical logs and checkpoints.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from entrel import crf
from entrel.kernels import rel_error
from entrel.model import (
    ModelParams,
    backward_query,
    forward_query,
    gold_indices,
    predict_queries,
    save_checkpoint,
    softmax_loss_and_grad,
)
from entrel.evaluation import score_queries
from entrel.querygen import ConfigError


@dataclass
class TrainConfig:
    batch_size: int = 10
    learning_rate: float = 0.1
    l2: float = 1e-3
    max_epochs: int = 20
    seed: int = 13
    setup: int = 1
    output_layer: str = "crf"
    neg_keep_prob: float | None = None
    lr_floor: float = 1e-6
    masked_decode: bool = False
    freeze_embeddings: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.learning_rate <= 0 or self.l2 < 0:
            raise ConfigError("batch_size, learning_rate and l2 must be positive")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.setup not in (1, 2, 3):
            raise ConfigError(f"setup must be 1, 2 or 3, got {self.setup}")
        if self.output_layer not in ("crf", "softmax"):
            raise ConfigError(f"unknown output layer {self.output_layer!r}")


@dataclass
class TrainState:
    epoch: int = 0
    lr: float = 0.0
    best_metric: float | None = None
    best_path: str | None = None
    epochs_since_improvement: int = 0
    log: list = field(default_factory=list)


def query_loss_and_backward(query, params: ModelParams) -> float:
    """Forward + loss + full backward for one query; grads accumulate."""
    gold = gold_indices(query, params.label_space)
    d, cache = forward_query(query, params)
    if params.hyper.output_layer == "crf":
        loss, grad_d, grad_q = crf.nll_and_gradients(d, params.transitions.value, gold)
        params.transitions.grad += grad_q
    else:
        loss, grad_d = softmax_loss_and_grad(d, params.label_space, gold)
    backward_query(grad_d, cache, params)
    return float(loss)


def query_loss(query, params: ModelParams) -> float:
    """Forward-only loss for one query (used by the gradient checker)."""
    gold = gold_indices(query, params.label_space)
    d, _ = forward_query(query, params)
    if params.hyper.output_layer == "crf":
        q = params.transitions.value
        return crf.forward_logZ(d, q) - crf.sequence_score(d, gold, q)
    loss, _ = softmax_loss_and_grad(d, params.label_space, gold)
    return loss


def sgd_step(params: ModelParams, lr: float, l2: float):
    """theta <- theta - lr * (grad + l2 * theta) for every trainable tensor.

    Gradient buffers must already hold the batch mean.
    """
    for tensor in params.trainable_tensors():
        if not np.isfinite(tensor.grad).all():
            raise RuntimeError(f"non-finite gradient in tensor {tensor.name}")
        tensor.value -= lr * (tensor.grad + l2 * tensor.value)


def train_loop(params: ModelParams, train_queries, dev_queries, config: TrainConfig,
               out_dir=None, dev_sentences=None, log_path=None) -> TrainState:
    """Epochs of seeded shuffled mini-batches with dev-driven lr halving.

    After each epoch the dev Avg EC+RE is computed; when it drops below the
    previous epoch's value the learning rate halves. The best-on-dev
    checkpoint is kept alongside the final one. Stops at max_epochs or when
    the learning rate underflows the floor.
    """
    if not train_queries:
        raise ConfigError("empty train set")
    if params.embeddings.trainable and config.freeze_embeddings:
        params.embeddings.trainable = False
    ls = params.label_space
    out_dir = Path(out_dir) if out_dir is not None else None
    state = TrainState(lr=config.learning_rate)
    rng = np.random.default_rng((config.seed, 1))
    prev_metric = None
    trainable = params.trainable_tensors()

    for epoch in range(1, config.max_epochs + 1):
        state.epoch = epoch
        order = rng.permutation(len(train_queries))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            params.zero_grads()
            for index in batch:
                epoch_loss += query_loss_and_backward(train_queries[int(index)], params)
            scale = 1.0 / len(batch)
            for tensor in trainable:
                tensor.grad *= scale
            sgd_step(params, state.lr, config.l2)
        train_loss = epoch_loss / len(train_queries)

        metric = 0.0
        report = None
        if dev_queries:
            preds = predict_queries(dev_queries, params, config.masked_decode)
            report = score_queries(dev_queries, preds, config.setup, ls, dev_sentences)
            metric = report.avg_ec_re if report.avg_ec_re is not None else 0.0

        improved = state.best_metric is None or metric > state.best_metric
        if improved:
            state.best_metric = metric
            state.epochs_since_improvement = 0
            if out_dir is not None:
                best = out_dir / "best"
                save_checkpoint(best, params, config.seed, extra={"epoch": epoch})
                state.best_path = str(best)
        else:
            state.epochs_since_improvement += 1

        halved = prev_metric is not None and metric < prev_metric
        lr_used = state.lr
        if halved:
            state.lr = state.lr / 2.0
        prev_metric = metric

        record = {
            "epoch": epoch,
            "lr": lr_used,
            "train_loss": train_loss,
            "dev_avg_ec": None if report is None else report.avg_ec,
            "dev_avg_re": None if report is None else report.avg_re,
            "dev_avg_ec_re": None if report is None else report.avg_ec_re,
            "halved": halved,
            "lr_next": state.lr,
            "improved": improved,
        }
        state.log.append(record)
        if state.lr < config.lr_floor:
            break

    if out_dir is not None:
        save_checkpoint(out_dir / "final", params, config.seed,
                        extra={"epoch": state.epoch})
        if state.best_path is None:
            state.best_path = str(out_dir / "final")
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as handle:
            for record in state.log:
                handle.write(json.dumps(record, sort_keys=True))
                handle.write("\n")
    return state


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict  # tensor name -> max scaled discrepancy

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.errors.values())

    @property
    def failures(self):
        return sorted(name for name, err in self.errors.items() if err >= self.tolerance)


def grad_check(params: ModelParams, queries, l2: float = 0.0, epsilon: float = 1e-5,
               tolerance: float = 1e-4, tensors=None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    The objective is the mean query loss plus l2/2 * sum of squared trainable
    parameters (matching what sgd_step descends). Runs in 64-bit mode only.
    An explicit empty tensor list is a vacuous pass.
    """
    if params.hyper.dtype != "float64":
        raise ConfigError("grad_check requires float64 parameters")
    selected = [t for t in params.trainable_tensors()
                if tensors is None or t.name in tensors]
    if tensors is not None:
        unknown = set(tensors) - {t.name for t in params.trainable_tensors()}
        if unknown:
            raise ConfigError(f"unknown or frozen tensors requested: {sorted(unknown)}")
    if not queries:
        raise ConfigError("grad_check needs at least one query")

    def objective():
        total = sum(query_loss(q, params) for q in queries) / len(queries)
        if l2 > 0:
            total += 0.5 * l2 * sum(float((t.value ** 2).sum())
                                    for t in params.trainable_tensors())
        return total

    params.zero_grads()
    for query in queries:
        query_loss_and_backward(query, params)
    analytic = {}
    for tensor in selected:
        grad = tensor.grad / len(queries)
        if l2 > 0:
            grad = grad + l2 * tensor.value
        analytic[tensor.name] = grad.copy()

    errors = {}
    for tensor in selected:
        numeric = np.zeros_like(tensor.value)
        flat_value = tensor.value.reshape(-1)
        flat_numeric = numeric.reshape(-1)
        for idx in range(flat_value.size):
            original = flat_value[idx]
            flat_value[idx] = original + epsilon
            up = objective()
            flat_value[idx] = original - epsilon
            down = objective()
            flat_value[idx] = original
            flat_numeric[idx] = (up - down) / (2 * epsilon)
        errors[tensor.name] = rel_error(analytic[tensor.name], numeric)
    report = GradCheckReport(tolerance, errors)
    if math.isnan(sum(errors.values(), 0.0)):
        raise RuntimeError("gradient check produced NaN discrepancies")
    return report


def triple_accuracy(queries, params: ModelParams, masked: bool = False) -> float:
    """Fraction of queries whose full (t1, r, t2) triple decodes exactly."""
    if not queries:
        return 0.0
    preds = predict_queries(queries, params, masked)
    hits = 0
    for query, pred in zip(queries, preds):
        if pred == gold_indices(query, params.label_space):
            hits += 1
    return hits / len(queries)
