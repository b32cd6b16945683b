"""
Downstream evaluation of frozen embeddings: metrics, a linear probe and a
nearest-neighbour retrieval check.
"""

import logging
import math
from dataclasses import dataclass
from logging import Logger
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.stats import rankdata

from graphmsl.scripts.diffcore import (
    Tape,
    Tensor,
    backward,
    concat,
    cosine_rows,
    matmul,
    mul,
    row_log_softmax,
    scalar_mul,
    sum_all,
)
from graphmsl.scripts.errors import (
    ConfigError,
    DataError,
    DegenerateLabelsError,
    InsufficientDataError,
    LengthMismatchError,
)
from graphmsl.scripts.fingerprint import Fingerprint
from graphmsl.scripts.loss import NORM_FLOOR
from graphmsl.scripts.similarity import fingerprint_self_similarity

MIN_PROBE_SIZE = 10
MIN_RETRIEVAL_SIZE = 20

module_logger = logging.getLogger("graphmsl")


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Area under the ROC curve from rank sums (Mann-Whitney U).

    Ties between a positive and a negative count one half.

    Args:
        scores: Real-valued scores, higher means more likely positive
        labels: 0/1 labels

    Returns:
        float: ``P(score+ > score-) + P(tie) / 2``

    Raises:
        LengthMismatchError: Scores and labels differ in length
        DegenerateLabelsError: Only one class present
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise LengthMismatchError(f"{scores.size} scores for {labels.size} labels")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("ROC-AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def rmse(pred: Sequence[float], truth: Sequence[float]) -> float:
    """
    Root mean squared error.

    Raises:
        LengthMismatchError: Inputs differ in length or are empty
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.size == 0:
        raise LengthMismatchError(f"cannot compare {pred.size} predictions with {truth.size} values")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


class ProbeConfig(BaseModel):
    """
    Linear probe settings.

    Attributes:
        task (str): "classification" or "regression" ("cls" / "reg" accepted)
        split (tuple[float, float, float]): Train, validation and test fractions
        seed (int): Split seed
        iterations (int): Gradient descent steps of the logistic head
        learning_rate (float): Gradient descent step size
        eval_every (int): Validation interval used to choose the iteration
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    task: Literal["classification", "regression"] = "classification"
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = Field(default=0, ge=0)
    iterations: int = Field(default=500, ge=1)
    learning_rate: float = Field(default=0.5, gt=0)
    eval_every: int = Field(default=10, ge=1)

    @field_validator("task", mode="before")
    @classmethod
    def _short_names(cls, value):
        return {"cls": "classification", "reg": "regression"}.get(value, value)

    @field_validator("split")
    @classmethod
    def _fractions(cls, value):
        if any(f <= 0 for f in value) or abs(sum(value) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {value}")
        return value


@dataclass(frozen=True, eq=False)
class ProbeResult:
    """
    Test metric of a linear head trained on frozen embeddings.

    Attributes:
        task (str): classification or regression
        metric (str): roc_auc or rmse
        value (float): Test metric
        seed (int): Split seed
        split (tuple[float, float, float]): Split fractions
        validation_value (float | None): Validation metric of the chosen head
        iterations (int): Gradient steps of the chosen head (0 for least squares)
        head (np.ndarray): Affine head weights, bias last, in standardized feature space
    """

    task: str
    metric: str
    value: float
    seed: int
    split: tuple[float, float, float]
    validation_value: float | None
    iterations: int
    head: np.ndarray

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metric": self.metric,
            "value": self.value,
            "seed": self.seed,
            "split": list(self.split),
        }


def _split_sizes(n: int, split: tuple[float, float, float]) -> tuple[int, int, int]:
    # Train and test get at least one member each, validation one when n >= 3
    if n < 2:
        return n, 0, 0
    if n == 2:
        return 1, 0, 1
    n_test = min(max(1, round(split[2] * n)), n - 2)
    n_val = min(max(1, round(split[1] * n)), n - 1 - n_test)
    return n - n_val - n_test, n_val, n_test


def split_indices(
    labels: np.ndarray, task: str, split: tuple[float, float, float], seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Seeded random train/validation/test split.

    Classification splits each class separately. A class with two members or
    more lands in both train and test; validation sees it from three members on.
    """
    rng = np.random.default_rng(seed)
    if task == "classification":
        groups = [np.flatnonzero(labels == c) for c in (0, 1)]
    else:
        groups = [np.arange(labels.size)]
    parts = ([], [], [])
    for group in groups:
        order = group[rng.permutation(group.size)]
        n_train, n_val, _ = _split_sizes(group.size, split)
        parts[0].append(order[:n_train])
        parts[1].append(order[n_train : n_train + n_val])
        parts[2].append(order[n_train + n_val :])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def _standardize(X: np.ndarray, train: np.ndarray) -> np.ndarray:
    mean = X[train].mean(axis=0)
    std = X[train].std(axis=0)
    std[std == 0] = 1.0
    Z = (X - mean) / std
    return np.hstack([Z, np.ones((X.shape[0], 1))])


def _logistic_loss(X: np.ndarray, onehot: np.ndarray, w: Tensor) -> Tensor:
    z = matmul(Tensor(X), w)
    logits = concat(Tensor(np.zeros_like(z.data)), z, axis=1)
    return scalar_mul(sum_all(mul(Tensor(onehot), row_log_softmax(logits))), -1.0 / X.shape[0])


def _fit_logistic(X, y, train, val, cfg: ProbeConfig) -> tuple[np.ndarray, int, float | None]:
    onehot = np.stack([1.0 - y, y], axis=1)
    w = np.zeros((X.shape[1], 1))
    best = (w, 0, None)
    for iteration in range(1, cfg.iterations + 1):
        with Tape():
            weights = Tensor(w, requires_grad=True)
            loss = _logistic_loss(X[train], onehot[train], weights)
            backward(loss)
        w = w - cfg.learning_rate * weights.grad
        if iteration % cfg.eval_every == 0 or iteration == cfg.iterations:
            try:
                score = roc_auc((X[val] @ w)[:, 0], y[val])
            except DegenerateLabelsError:
                score = None
            if score is None or best[2] is None or score > best[2]:
                best = (w, iteration, score)
    return best


def linear_probe(
    embeddings,
    labels: Sequence[float | None],
    task: str = "classification",
    split: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    config: ProbeConfig | None = None,
    logger: Logger = module_logger,
) -> ProbeResult:
    """
    Train an affine head on frozen embeddings and report its test metric.

    Classification trains a logistic head by gradient descent and keeps the
    iteration with the best validation ROC-AUC. Regression solves least squares.
    Molecules with a missing label are dropped.

    Args:
        embeddings: ``n x d`` embedding matrix
        labels: One label per molecule, ``None``/NaN when missing
        task (str): classification (0/1 labels) or regression
        split (tuple): Train, validation and test fractions
        seed (int): Split seed
        config (ProbeConfig | None): Overrides ``task``, ``split`` and ``seed`` when given

    Returns:
        ProbeResult: ROC-AUC or RMSE on the test split

    Raises:
        InsufficientDataError: Fewer than 10 labeled molecules
            or a classification class with a single member
        DegenerateLabelsError: Classification labels contain a single class
    """
    cfg = config or ProbeConfig(task=task, split=split, seed=seed)
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.array([np.nan if v is None else v for v in labels], dtype=np.float64)
    if X.shape[0] != y.size:
        raise LengthMismatchError(f"{X.shape[0]} embeddings for {y.size} labels")
    keep = np.isfinite(y)
    X, y = X[keep], y[keep]
    if y.size < MIN_PROBE_SIZE:
        raise InsufficientDataError(
            f"linear probe needs at least {MIN_PROBE_SIZE} labeled molecules, got {y.size}"
        )

    if cfg.task == "classification":
        if not np.all((y == 0) | (y == 1)):
            raise DataError("classification labels must be 0 or 1")
        if np.unique(y).size < 2:
            raise DegenerateLabelsError("classification labels contain a single class")
        rarest = int(min(np.sum(y == 0), np.sum(y == 1)))
        if rarest < 2:
            raise InsufficientDataError(
                f"each class needs at least 2 labeled molecules to reach train and test, got {rarest}"
            )

    train, val, test = split_indices(y, cfg.task, cfg.split, cfg.seed)
    if train.size == 0:
        raise InsufficientDataError("split leaves no training molecules")
    Z = _standardize(X, train)

    if cfg.task == "classification":
        head, iterations, val_value = _fit_logistic(Z, y, train, val, cfg)
        value = roc_auc((Z[test] @ head)[:, 0], y[test])
        metric = "roc_auc"
    else:
        head, *_ = np.linalg.lstsq(Z[train], y[train], rcond=None)
        head = head[:, None]
        iterations = 0
        val_value = rmse((Z[val] @ head)[:, 0], y[val])
        value = rmse((Z[test] @ head)[:, 0], y[test])
        metric = "rmse"

    logger.info(
        f"Linear probe ({cfg.task}, seed {cfg.seed}): test {metric} {value:.6f} on {test.size} molecules"
    )
    return ProbeResult(
        task=cfg.task,
        metric=metric,
        value=value,
        seed=cfg.seed,
        split=tuple(cfg.split),
        validation_value=val_value,
        iterations=iterations,
        head=head[:, 0],
    )


def summarize_probes(results: Sequence[ProbeResult]) -> dict:
    """Mean and (population) standard deviation of a metric over split seeds."""
    if not results:
        raise InsufficientDataError("no probe results to summarize")
    values = np.array([r.value for r in results])
    return {
        "task": results[0].task,
        "metric": results[0].metric,
        "mean": float(values.mean()),
        "std": float(values.std()),
        "seeds": [r.seed for r in results],
        "values": values.tolist(),
    }


@dataclass(frozen=True)
class RetrievalReport:
    mean_nn_tanimoto: float
    mean_random_tanimoto: float

    def to_dict(self) -> dict:
        return {
            "mean_nn_tanimoto": self.mean_nn_tanimoto,
            "mean_random_tanimoto": self.mean_random_tanimoto,
        }


def retrieval_check(embeddings, fingerprints: Sequence[Fingerprint], seed: int = 0) -> RetrievalReport:
    """
    Compare the Tanimoto similarity of latent nearest neighbours with random pairs.

    Every molecule's nearest neighbour is the other molecule with the highest
    embedding cosine; its random partner is a uniformly drawn other molecule.
    A zero embedding has cosine 0 to every other molecule.

    Raises:
        InsufficientDataError: Fewer than 20 molecules
    """
    X = np.asarray(embeddings, dtype=np.float64)
    n = X.shape[0]
    if n != len(fingerprints):
        raise LengthMismatchError(f"{n} embeddings for {len(fingerprints)} fingerprints")
    if n < MIN_RETRIEVAL_SIZE:
        raise InsufficientDataError(
            f"retrieval check needs at least {MIN_RETRIEVAL_SIZE} molecules, got {n}"
        )

    ids = [str(i) for i in range(n)]
    cosine = cosine_rows(X, X, eps=NORM_FLOOR).data.copy()
    np.fill_diagonal(cosine, -math.inf)
    neighbours = np.argmax(cosine, axis=1)

    rng = np.random.default_rng(seed)
    partners = rng.integers(0, n - 1, size=n)
    partners = partners + (partners >= np.arange(n))

    tanimoto = fingerprint_self_similarity(list(fingerprints), ids).values
    rows = np.arange(n)
    return RetrievalReport(
        mean_nn_tanimoto=float(tanimoto[rows, neighbours].mean()),
        mean_random_tanimoto=float(tanimoto[rows, partners].mean()),
    )
