"""
Latent similarities and the cross-entropy losses that pull them towards targets.

For a pool of size n with row-stochastic targets T and latent similarities D,

    L = -(1/n) * sum_i sum_j T[i, j] * log softmax(D[i])[j]

which is the mean over anchors of the cross-entropy between the target row and
the softmax of the latent row. Its gradient with respect to D is
``(softmax(D) - T) / n`` and it is minimal exactly where softmax(D) = T.
"""

from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import entr, softmax

from graphmsl.scripts.diffcore import (
    Tensor,
    add,
    cosine_rows,
    matmul,
    mul,
    row_log_softmax,
    scalar_mul,
    stack_rows,
    sum_all,
    transpose,
)
from graphmsl.scripts.errors import ShapeError
from graphmsl.scripts.similarity import TargetSimilarityMatrix

NORM_FLOOR = 1e-8


class LatentSimilarityConfig(BaseModel):
    """
    Functional form of the latent similarity ``d``.

    Attributes:
        mode (str): "dot" (unbounded inner product) or "scaled_cosine" (cosine / temperature)
        temperature (float): Divisor of the cosine in scaled_cosine mode
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["dot", "scaled_cosine"] = "scaled_cosine"
    temperature: float = Field(default=0.1, gt=0)

    @field_validator("mode", mode="before")
    @classmethod
    def _cosine_alias(cls, value):
        return "scaled_cosine" if value == "cosine" else value


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def latent_similarity(Ei, Ej, cfg: LatentSimilarityConfig) -> Tensor:
    """
    Latent similarity of two embedding vectors (differentiable scalar).

    Raises:
        ShapeError: The embeddings differ in dimension
        ZeroNormError: A zero embedding in scaled_cosine mode
    """
    Ei, Ej = _tensor(Ei), _tensor(Ej)
    if Ei.shape != Ej.shape:
        raise ShapeError(f"embeddings of shapes {Ei.shape} and {Ej.shape} cannot be compared")
    if cfg.mode == "dot":
        return sum_all(mul(Ei, Ej))
    cosine = sum_all(cosine_rows(stack_rows([Ei]), stack_rows([Ej])))
    return scalar_mul(cosine, 1.0 / cfg.temperature)


def latent_matrix(E, cfg: LatentSimilarityConfig) -> Tensor:
    """
    All pairwise latent similarities of the rows of ``E`` (``n x d`` -> ``n x n``).

    In scaled_cosine mode norms are floored at ``NORM_FLOOR``: a zero row (an
    encoder whose ReLU outputs all vanish) has similarity 0 to every molecule.
    """
    E = _tensor(E)
    if cfg.mode == "dot":
        return matmul(E, transpose(E))
    return scalar_mul(cosine_rows(E, E, eps=NORM_FLOOR), 1.0 / cfg.temperature)


def _target_values(T) -> np.ndarray:
    return T.values if isinstance(T, TargetSimilarityMatrix) else np.asarray(T, dtype=np.float64)


def _cross_entropy(T, D) -> Tensor:
    targets = _target_values(T)
    D = _tensor(D)
    if targets.ndim != 2 or targets.shape[0] != targets.shape[1] or D.shape != targets.shape:
        raise ShapeError(f"targets {targets.shape} and latent matrix {D.shape} must be equal squares")
    n = targets.shape[0]
    return scalar_mul(sum_all(mul(Tensor(targets), row_log_softmax(D))), -1.0 / n)


def graph_loss(T, D) -> Tensor:
    """
    Graph-level loss over a pool of molecules.

    Args:
        T: TargetSimilarityMatrix (or array) of the molecule pool
        D: Latent similarity matrix of the same pool

    Returns:
        Tensor: Scalar loss
    """
    return _cross_entropy(T, D)


def node_loss(Tn, Dn) -> Tensor:
    """Node-level loss over a pool of annotated atoms; same contract as ``graph_loss``."""
    return _cross_entropy(Tn, Dn)


def bilevel_loss(Lg, Ln) -> Tensor:
    return add(_tensor(Lg), _tensor(Ln))


def mean_row_entropy(T) -> float:
    """Mean Shannon entropy (nats) of the target rows, the minimum of the loss."""
    targets = _target_values(T)
    return float(entr(targets).sum() / targets.shape[0])


def graph_loss_gradient(T, D: np.ndarray) -> np.ndarray:
    """Closed-form gradient ``(softmax(D) - T) / n``."""
    targets = _target_values(T)
    return (softmax(np.asarray(D, dtype=np.float64), axis=1) - targets) / targets.shape[0]
