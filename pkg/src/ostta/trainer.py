"""Mini-batch momentum-SGD training and source embedding bank extraction."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Sample
from .losses import LossConfig, ce_loss, ugd_loss
from .model import ModelGrads, ModelParams, backward, forward
from .numeric import l2_normalize


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.01
    momentum: float = 0.9
    shuffle_seed: int = 0
    objective: str = "ugd"  # "ugd" or "ce"
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs/batch_size/learning_rate out of range")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.objective not in ("ugd", "ce"):
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass
class EmbeddingBank:
    """Frozen L2-normalized source embeddings with labels plus per-class
    prototypes (renormalized class means)."""
    embeddings: np.ndarray  # (n, embed_dim), unit rows
    labels: np.ndarray      # (n,), known indices
    prototypes: np.ndarray  # (num_known, embed_dim), unit rows

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def _sample_loss(params: ModelParams, sample: Sample, config: TrainConfig):
    trace = forward(params, sample.features)
    if config.objective == "ce":
        value, dlogits = ce_loss(trace.logits, sample.label)
    else:
        value, dlogits = ugd_loss(trace.logits, sample.label, config.loss)
    return value, backward(params, trace, dlogits)


def train(
    params: ModelParams,
    train_set: list[Sample],
    config: TrainConfig,
) -> tuple[ModelParams, list[float]]:
    """Momentum SGD over shuffled mini-batches; returns new params and the
    mean loss per epoch. Aborts on non-finite loss."""
    config.validate()
    if any(s.label < 0 for s in train_set):
        raise ValueError("train set must contain known labels only")
    params = params.copy()
    velocity = ModelGrads.zeros_like(params)
    rng = np.random.default_rng(config.shuffle_seed)
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            grad = ModelGrads.zeros_like(params)
            for sample in batch:
                try:
                    value, g = _sample_loss(params, sample, config)
                except ValueError as exc:
                    # overflowing parameters surface as non-normalizable
                    # embeddings before the loss itself goes non-finite
                    raise RuntimeError(
                        f"training diverged at epoch {epoch}: {exc}"
                    ) from exc
                if not np.isfinite(value):
                    raise RuntimeError(
                        f"training diverged: non-finite loss at epoch {epoch}"
                    )
                epoch_losses.append(value)
                grad.add_(g)
            grad = grad.scale(1.0 / len(batch))
            for i in range(len(params.weights)):
                velocity.weights[i] = config.momentum * velocity.weights[i] + grad.weights[i]
                velocity.biases[i] = config.momentum * velocity.biases[i] + grad.biases[i]
                params.weights[i] -= config.learning_rate * velocity.weights[i]
                params.biases[i] -= config.learning_rate * velocity.biases[i]
            velocity.head = config.momentum * velocity.head + grad.head
            params.head -= config.learning_rate * velocity.head
        history.append(float(np.mean(epoch_losses)))
    return params, history


def extract_bank(params: ModelParams, train_set: list[Sample]) -> EmbeddingBank:
    """One normalized embedding per training sample (input order) plus
    renormalized per-class mean prototypes."""
    if any(s.label < 0 for s in train_set):
        raise ValueError("train set must contain known labels only")
    embeddings = np.stack([forward(params, s.features).z for s in train_set])
    labels = np.array([s.label for s in train_set], dtype=np.int64)
    prototypes = []
    for k in range(params.num_known):
        members = embeddings[labels == k]
        if members.shape[0] == 0:
            raise ValueError(f"class {k} absent from train set: no prototype")
        mean = members.mean(axis=0)
        if np.linalg.norm(mean) == 0.0:
            raise ValueError(f"class {k} embeddings average to zero: prototype undefined")
        prototypes.append(l2_normalize(mean))
    return EmbeddingBank(embeddings, labels, np.stack(prototypes))


def save_bank(bank: EmbeddingBank, path: str) -> None:
    """Bank entries as CSV plus a `<path>.proto.csv` prototype sidecar."""
    dim = bank.embeddings.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"z{i}" for i in range(dim)] + ["label"])
        for z, lab in zip(bank.embeddings, bank.labels):
            writer.writerow([repr(float(v)) for v in z] + [str(int(lab))])
    with open(path + ".proto.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"z{i}" for i in range(dim)] + ["label"])
        for k, p in enumerate(bank.prototypes):
            writer.writerow([repr(float(v)) for v in p] + [str(k)])


def load_bank(path: str) -> EmbeddingBank:
    def read(p: str) -> tuple[np.ndarray, np.ndarray]:
        rows, labs = [], []
        with open(p, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            dim = len(header) - 1
            for row in reader:
                rows.append([float(v) for v in row[:dim]])
                labs.append(int(row[dim]))
        return np.array(rows), np.array(labs, dtype=np.int64)

    embeddings, labels = read(path)
    prototypes, proto_labels = read(path + ".proto.csv")
    if not np.array_equal(proto_labels, np.arange(len(proto_labels))):
        raise ValueError("prototype sidecar labels must be 0..num_known-1 in order")
    return EmbeddingBank(embeddings, labels, prototypes)
