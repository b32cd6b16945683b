"""
Directed message passing encoder.

Hidden states live on directed edges. The state of edge v->w starts from the
source atom and bond features and is refined by summing the states of the
edges entering v, except the reverse edge w->v, which keeps walks from
immediately backtracking. Atom embeddings combine the atom features with the
final incoming edge states and the molecule embedding is their mean or sum.
"""

from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from graphmsl.scripts.diffcore import (
    Tensor,
    add,
    concat,
    gather_sum,
    matmul,
    relu,
    scalar_mul,
    scale_rows,
    sum_rows,
)
from graphmsl.scripts.errors import ShapeError
from graphmsl.scripts.molgraph import ATOM_FEATURE_DIM, BOND_FEATURE_DIM, FeaturizedGraph
from graphmsl.scripts.utils import ordered_map

PARAM_NAMES = ("W_in", "W_msg", "W_node")


class EncoderConfig(BaseModel):
    """
    Encoder hyper-parameters.

    Attributes:
        hidden_dim (int): Width of edge states and atom embeddings
        depth (int): Number of edge-state generations; ``depth - 1`` message passing updates
        readout (str): "mean" or "sum" over atom embeddings
        seed (int): Seed of the parameter initializer
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    hidden_dim: int = Field(default=300, ge=1)
    depth: int = Field(default=3, ge=1)
    readout: Literal["mean", "sum"] = "mean"
    seed: int = Field(default=0, ge=0, lt=2**64)


@dataclass(frozen=True, eq=False)
class EncoderParams:
    """
    Weight matrices of the encoder, stored so that layers compute ``rows @ W``.

    Attributes:
        W_in (np.ndarray): ``(F_a + F_b) x hidden``
        W_msg (np.ndarray): ``hidden x hidden``
        W_node (np.ndarray): ``(F_a + hidden) x hidden``
    """

    W_in: np.ndarray
    W_msg: np.ndarray
    W_node: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ShapeError(f"{name} contains non-finite entries")

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def as_tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {name: Tensor(value, requires_grad) for name, value in self.as_dict().items()}

    @classmethod
    def from_dict(cls, arrays: Mapping[str, np.ndarray]) -> "EncoderParams":
        return cls(**{name: np.array(arrays[name], dtype=np.float64) for name in PARAM_NAMES})


@dataclass(frozen=True)
class EncoderOutput:
    """
    Result of encoding one molecule.

    Attributes:
        node_embeddings (Tensor): ``|atoms| x hidden``
        graph_embedding (Tensor): ``hidden``
        edge_states (tuple[Tensor, ...]): Directed-edge states of every generation
    """

    node_embeddings: Tensor
    graph_embedding: Tensor
    edge_states: tuple[Tensor, ...]


@dataclass(frozen=True)
class BatchEncoding:
    """
    Result of encoding a disjoint union of molecules.

    Attributes:
        graph_embeddings (Tensor): ``n_molecules x hidden``
        node_embeddings (Tensor): All atoms of all molecules, molecule by molecule
        atom_offsets (tuple[int, ...]): First row of each molecule in ``node_embeddings``
    """

    graph_embeddings: Tensor
    node_embeddings: Tensor
    atom_offsets: tuple[int, ...]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_params(config: EncoderConfig) -> EncoderParams:
    """
    Glorot-uniform initialization, deterministic in ``config.seed``.

    Args:
        config (EncoderConfig): Encoder hyper-parameters

    Returns:
        EncoderParams: Fresh weights
    """
    rng = np.random.default_rng(config.seed)
    h = config.hidden_dim
    return EncoderParams(
        W_in=_glorot(rng, ATOM_FEATURE_DIM + BOND_FEATURE_DIM, h),
        W_msg=_glorot(rng, h, h),
        W_node=_glorot(rng, ATOM_FEATURE_DIM + h, h),
    )


def message_index_lists(fg: FeaturizedGraph) -> list[list[int]]:
    """For every directed edge v->w, the edges entering v other than w->v."""
    return [
        [k for k in fg.incidence[source] if k != fg.edge_reverse[e]]
        for e, source in enumerate(fg.edge_sources)
    ]


def _resolve(params) -> dict[str, Tensor]:
    if isinstance(params, EncoderParams):
        return params.as_tensors()
    return {name: params[name] for name in PARAM_NAMES}


def _check_shapes(fg: FeaturizedGraph, weights: Mapping[str, Tensor], hidden: int) -> None:
    f_a = fg.atom_features.shape[1]
    f_b = fg.bond_features.shape[1]
    expected = {
        "W_in": (f_a + f_b, hidden),
        "W_msg": (hidden, hidden),
        "W_node": (f_a + hidden, hidden),
    }
    for name, shape in expected.items():
        if weights[name].shape != shape:
            raise ShapeError(
                f"{name} has shape {weights[name].shape}, featurization requires {shape}"
            )


def _propagate(
    atom_features: np.ndarray,
    edge_inputs: np.ndarray,
    messages: Sequence[Sequence[int]],
    incidence: Sequence[Sequence[int]],
    weights: Mapping[str, Tensor],
    depth: int,
) -> tuple[Tensor, list[Tensor]]:
    # h0 on every directed edge from [x_source || e_bond]
    state = relu(matmul(Tensor(edge_inputs), weights["W_in"]))
    initial = state
    states = [state]
    for _ in range(1, depth):
        state = relu(add(initial, matmul(gather_sum(state, messages), weights["W_msg"])))
        states.append(state)

    incoming = gather_sum(state, incidence)
    nodes = relu(matmul(concat(Tensor(atom_features), incoming, axis=1), weights["W_node"]))
    return nodes, states


def _edge_inputs(fg: FeaturizedGraph) -> np.ndarray:
    width = fg.atom_features.shape[1] + fg.bond_features.shape[1]
    if fg.edge_count == 0:
        return np.zeros((0, width))
    return np.hstack(
        [fg.atom_features[list(fg.edge_sources)], fg.bond_features[list(fg.edge_bonds)]]
    )


def encode(fg: FeaturizedGraph, params, config: EncoderConfig) -> EncoderOutput:
    """
    Encode one featurized molecule.

    Args:
        fg (FeaturizedGraph): Featurized molecule
        params: ``EncoderParams`` or a mapping of parameter name to Tensor (for training)
        config (EncoderConfig): Hyper-parameters the params were built for

    Returns:
        EncoderOutput: Atom embeddings, molecule embedding and edge states

    Raises:
        ShapeError: The featurization does not match the parameter shapes
    """
    weights = _resolve(params)
    _check_shapes(fg, weights, config.hidden_dim)

    nodes, states = _propagate(
        fg.atom_features,
        _edge_inputs(fg),
        message_index_lists(fg),
        fg.incidence,
        weights,
        config.depth,
    )
    graph = sum_rows(nodes)
    if config.readout == "mean":
        graph = scalar_mul(graph, 1.0 / fg.atom_count)
    return EncoderOutput(node_embeddings=nodes, graph_embedding=graph, edge_states=tuple(states))


def encode_batch(graphs: Sequence[FeaturizedGraph], params, config: EncoderConfig) -> BatchEncoding:
    """
    Encode several molecules in one pass over their disjoint union.

    Equal to per-molecule ``encode`` up to floating-point summation order.
    """
    if not graphs:
        raise ShapeError("encode_batch needs at least one molecule")
    weights = _resolve(params)
    for fg in graphs:
        _check_shapes(fg, weights, config.hidden_dim)

    # Shift every molecule's atom and edge indices into the union
    atom_offsets, messages, incidence, members = [], [], [], []
    atom_offset = edge_offset = 0
    for fg in graphs:
        atom_offsets.append(atom_offset)
        messages.extend([[k + edge_offset for k in ks] for ks in message_index_lists(fg)])
        incidence.extend([[k + edge_offset for k in ks] for ks in fg.incidence])
        members.append(list(range(atom_offset, atom_offset + fg.atom_count)))
        atom_offset += fg.atom_count
        edge_offset += fg.edge_count

    nodes, _ = _propagate(
        np.vstack([fg.atom_features for fg in graphs]),
        np.vstack([_edge_inputs(fg) for fg in graphs]),
        messages,
        incidence,
        weights,
        config.depth,
    )
    pooled = gather_sum(nodes, members)
    if config.readout == "mean":
        pooled = scale_rows(pooled, [1.0 / fg.atom_count for fg in graphs])
    return BatchEncoding(
        graph_embeddings=pooled, node_embeddings=nodes, atom_offsets=tuple(atom_offsets)
    )


def embed_pool(
    graphs: Sequence[FeaturizedGraph],
    params: EncoderParams,
    config: EncoderConfig,
    threads: int = 1,
) -> np.ndarray:
    """
    Inference-only molecule embeddings, one row per molecule, independent of ``threads``.
    """
    rows = ordered_map(lambda fg: encode(fg, params, config).graph_embedding.numpy(), graphs, threads)
    if not rows:
        return np.zeros((0, config.hidden_dim))
    return np.vstack(rows)
