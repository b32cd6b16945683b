"""
Self-similarities, softmax pair weighting and multimodal fusion.

A self-similarity matrix compares every pair of a pool in one modality. Pair
weighting turns each row into a probability distribution over the pool
(``softmax`` of the row), so a target also encodes how a pair ranks against the
other pairs of the same anchor. Fusion is a convex combination of per-modality
targets and keeps rows stochastic.
"""

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import softmax

from graphmsl.scripts.errors import (
    ConfigError,
    CorruptionError,
    DataError,
    DimensionMismatchError,
    EmptyPoolError,
    IdMismatchError,
    MagicError,
    MissingModalityError,
    NonPositiveTemperatureError,
    VersionError,
    WeightSumError,
    WidthMismatchError,
    ZeroNormError,
)
from graphmsl.scripts.fingerprint import Fingerprint
from graphmsl.scripts.utils import atomic_write, ordered_map

MODALITIES = ("smiles", "nmr", "image", "fingerprint")
MODALITY_TAGS = {"smiles": 0, "nmr": 1, "image": 2, "fingerprint": 3, "ppm": 4, "fused": 5}
TAG_MODALITIES = {tag: name for name, tag in MODALITY_TAGS.items()}

MATRIX_MAGIC = b"GMSM"
MATRIX_VERSION = 1

DEFAULT_TAU1 = 1.0
DEFAULT_TAU2 = 1.0

FUSION_PRESETS = {
    "smiles": (1.0, 0.0, 0.0, 0.0),
    "nmr": (0.0, 1.0, 0.0, 0.0),
    "image": (0.0, 0.0, 1.0, 0.0),
    "fingerprint": (0.0, 0.0, 0.0, 1.0),
    "fusion-smiles": (0.7, 0.1, 0.1, 0.1),
    "fusion-nmr": (0.1, 0.7, 0.1, 0.1),
    "fusion-image": (0.1, 0.1, 0.7, 0.1),
    "fusion-fingerprint": (0.1, 0.1, 0.1, 0.7),
    "fusion-average": (0.25, 0.25, 0.25, 0.25),
}


def _readonly(values) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class SelfSimilarityMatrix:
    """
    Symmetric pairwise similarities of one modality.

    Attributes:
        values (np.ndarray): ``n x n`` similarities
        modality (str): One of smiles, nmr, image, fingerprint, ppm
        ids (tuple[str, ...]): Row/column identifiers
    """

    values: np.ndarray
    modality: str
    ids: tuple[str, ...]

    def __post_init__(self):
        values = _readonly(self.values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ids", tuple(self.ids))
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DataError(f"similarity matrix must be square, got shape {values.shape}")
        if len(self.ids) != values.shape[0]:
            raise IdMismatchError(f"{len(self.ids)} ids for a {values.shape[0]}-row matrix")
        if self.modality not in MODALITY_TAGS:
            raise ConfigError(f"unknown modality '{self.modality}'")
        if not np.all(np.isfinite(values)):
            raise DataError("similarity matrix has non-finite entries")
        if not np.allclose(values, values.T, rtol=0.0, atol=1e-12):
            raise DataError("self-similarity matrix is not symmetric")


@dataclass(frozen=True, eq=False)
class TargetSimilarityMatrix:
    """
    Row-stochastic target similarities.

    Entries may be exactly 0: the diagonal under ``pair_weight(exclude_self=True)``
    and pairs whose softmax weight underflows. A zero target contributes nothing
    to the cross-entropy losses, which stay finite.

    Attributes:
        values (np.ndarray): ``n x n`` non-negative entries, rows sum to 1
        ids (tuple[str, ...]): Row/column identifiers
        modality (str): Source modality, or "fused"
    """

    values: np.ndarray
    ids: tuple[str, ...]
    modality: str = field(default="fused")

    def __post_init__(self):
        values = _readonly(self.values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ids", tuple(self.ids))
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DataError(f"target matrix must be square, got shape {values.shape}")
        if len(self.ids) != values.shape[0]:
            raise IdMismatchError(f"{len(self.ids)} ids for a {values.shape[0]}-row matrix")
        if np.any(values < 0) or not np.allclose(values.sum(axis=1), 1.0, rtol=0.0, atol=1e-9):
            raise DataError("target matrix rows must be non-negative and sum to 1")


@dataclass(frozen=True)
class FusionWeights:
    """
    Convex weights of the four molecule-level modalities.

    Raises:
        WeightSumError: A weight is negative or the weights do not sum to 1 within 1e-12
    """

    smiles: float
    nmr: float
    image: float
    fingerprint: float

    def __post_init__(self):
        weights = self.as_tuple()
        if any(not math.isfinite(w) or w < 0 for w in weights):
            raise WeightSumError(f"fusion weights must be non-negative, got {weights}")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise WeightSumError(f"fusion weights must sum to 1, got {math.fsum(weights)!r}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.smiles, self.nmr, self.image, self.fingerprint)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(MODALITIES, self.as_tuple()))

    def active(self) -> list[str]:
        """Modalities with a positive weight."""
        return [name for name, w in self.as_dict().items() if w > 0]

    @classmethod
    def from_preset(cls, name: str) -> "FusionWeights":
        if name not in FUSION_PRESETS:
            raise ConfigError(f"unknown fusion preset '{name}'; choose from {sorted(FUSION_PRESETS)}")
        return cls(*FUSION_PRESETS[name])

    @classmethod
    def parse(cls, text: str) -> "FusionWeights":
        """Parse ``"w_smiles,w_nmr,w_image,w_fingerprint"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ConfigError(f"expected 4 comma-separated weights, got '{text}'")
        try:
            values = [float(p) for p in parts]
        except ValueError as err:
            raise ConfigError(f"weights must be numbers, got '{text}'") from err
        return cls(*values)


def cosine_self_similarity(
    vectors, ids: Sequence[str], modality: str = "smiles", threads: int = 1
) -> SelfSimilarityMatrix:
    """
    Cosine similarities of embedding vectors.

    Args:
        vectors: ``n`` vectors of one common dimension
        ids: Identifier of every vector
        modality (str): Modality recorded on the result
        threads (int): Rows computed in parallel; the result does not depend on it

    Returns:
        SelfSimilarityMatrix: Symmetric, unit diagonal

    Raises:
        DimensionMismatchError: Vectors differ in length
        ZeroNormError: A vector has zero norm
    """
    rows = [np.asarray(v, dtype=np.float64) for v in vectors]
    if rows and any(r.shape != rows[0].shape for r in rows):
        raise DimensionMismatchError("all vectors must have the same dimension")
    matrix = np.vstack(rows) if rows else np.zeros((0, 0))
    norms = np.linalg.norm(matrix, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ZeroNormError(f"vector '{ids[zero[0]]}' has zero norm")
    unit = matrix / norms[:, None]

    values = np.vstack(ordered_map(lambda i: unit @ unit[i], range(len(rows)), threads)) if rows else matrix
    values = (values + values.T) / 2
    np.fill_diagonal(values, 1.0)
    return SelfSimilarityMatrix(values=values, modality=modality, ids=tuple(ids))


def fingerprint_self_similarity(fps: Sequence[Fingerprint], ids: Sequence[str]) -> SelfSimilarityMatrix:
    """
    Tanimoto similarities of a fingerprint pool.

    Raises:
        WidthMismatchError: Fingerprints differ in width
    """
    if fps and any(fp.n_bits != fps[0].n_bits for fp in fps):
        raise WidthMismatchError("all fingerprints must have the same width")
    if not fps:
        return SelfSimilarityMatrix(values=np.zeros((0, 0)), modality="fingerprint", ids=())
    bits = np.vstack([fp.to_array() for fp in fps])
    # Integer counts are exact in float64, so each ratio equals tanimoto()
    intersection = bits @ bits.T
    counts = bits.sum(axis=1)
    union = counts[:, None] + counts[None, :] - intersection
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(union == 0, 1.0, intersection / union)
    return SelfSimilarityMatrix(values=values, modality="fingerprint", ids=tuple(ids))


def _check_temperatures(tau1: float, tau2: float) -> None:
    if not tau1 > 0 or not tau2 > 0:
        raise NonPositiveTemperatureError(f"tau1 and tau2 must be positive, got {tau1}, {tau2}")


def ppm_self_similarity(
    pl: float, pm: float, tau1: float = DEFAULT_TAU1, tau2: float = DEFAULT_TAU2
) -> float:
    """Chemical-shift similarity ``tau2 / (|pl - pm| + tau1)``."""
    _check_temperatures(tau1, tau2)
    return tau2 / (abs(pl - pm) + tau1)


def ppm_similarity_matrix(
    ppms: Sequence[float],
    ids: Sequence[str] | None = None,
    tau1: float = DEFAULT_TAU1,
    tau2: float = DEFAULT_TAU2,
) -> SelfSimilarityMatrix:
    """Pairwise chemical-shift similarities of a node pool."""
    _check_temperatures(tau1, tau2)
    shifts = np.asarray(ppms, dtype=np.float64)
    if not np.all(np.isfinite(shifts)):
        raise DataError("chemical shifts must be finite")
    values = tau2 / (np.abs(shifts[:, None] - shifts[None, :]) + tau1)
    ids = tuple(ids) if ids is not None else tuple(str(i) for i in range(len(shifts)))
    return SelfSimilarityMatrix(values=values, modality="ppm", ids=ids)


def pair_weight(S: SelfSimilarityMatrix, exclude_self: bool = False) -> TargetSimilarityMatrix:
    """
    Softmax pair weighting of every row of a self-similarity matrix.

    Args:
        S (SelfSimilarityMatrix): Self-similarities
        exclude_self (bool): Drop the anchor itself from its own row (diagonal becomes 0)

    Returns:
        TargetSimilarityMatrix: Row-stochastic, order-preserving within rows
    """
    logits = np.array(S.values)
    if exclude_self:
        if logits.shape[0] < 2:
            raise EmptyPoolError("excluding the anchor leaves an empty pool")
        np.fill_diagonal(logits, -np.inf)
    return TargetSimilarityMatrix(values=softmax(logits, axis=1), ids=S.ids, modality=S.modality)


def _as_weights(w) -> FusionWeights:
    return w if isinstance(w, FusionWeights) else FusionWeights(*w)


def _as_mapping(mats) -> dict:
    if isinstance(mats, Mapping):
        return dict(mats)
    if len(mats) != len(MODALITIES):
        raise ConfigError(f"expected one matrix slot per modality {MODALITIES}, got {len(mats)}")
    return {name: m for name, m in zip(MODALITIES, mats) if m is not None}


def fuse(mats, w) -> TargetSimilarityMatrix:
    """
    Weighted sum of per-modality target matrices.

    Args:
        mats: Mapping modality -> TargetSimilarityMatrix, or four slots in the order
            smiles, nmr, image, fingerprint (``None`` for absent modalities)
        w: FusionWeights or four floats

    Returns:
        TargetSimilarityMatrix: Row-stochastic fused targets

    Raises:
        IdMismatchError: Matrices are indexed by different ids
        WeightSumError: Invalid weights
        MissingModalityError: A modality with positive weight has no matrix
    """
    weights = _as_weights(w)
    mats = _as_mapping(mats)
    active = weights.active()
    for name in active:
        if name not in mats:
            raise MissingModalityError(f"fusion weight for '{name}' is positive but no matrix was given")
    ids = mats[active[0]].ids
    for name in active:
        if mats[name].ids != ids:
            raise IdMismatchError(f"'{name}' matrix ids differ from '{active[0]}' matrix ids")

    fused = np.zeros((len(ids), len(ids)))
    for name in active:
        fused += weights.as_dict()[name] * mats[name].values
    modality = active[0] if len(active) == 1 else "fused"
    return TargetSimilarityMatrix(values=fused, ids=ids, modality=modality)


def fuse_available(
    mats: Mapping[str, TargetSimilarityMatrix], ids: Sequence[str], w
) -> TargetSimilarityMatrix:
    """
    Fusion when some molecules lack some modalities.

    Each modality matrix covers only the molecules that have it. For anchor ``i``
    the weights are renormalized over the modalities available for ``i``, and
    each contributes its row restricted to its own molecules, so every fused row
    still sums to 1.

    Raises:
        MissingModalityError: An anchor has no modality with positive weight
    """
    weights = _as_weights(w).as_dict()
    ids = tuple(ids)
    position = {mol_id: k for k, mol_id in enumerate(ids)}
    n = len(ids)
    fused = np.zeros((n, n))
    totals = np.zeros(n)
    for name, matrix in mats.items():
        if weights.get(name, 0.0) <= 0:
            continue
        try:
            index = np.array([position[mol_id] for mol_id in matrix.ids], dtype=np.int64)
        except KeyError as err:
            raise IdMismatchError(f"'{name}' matrix has id {err.args[0]!r} outside the pool") from err
        fused[np.ix_(index, index)] += weights[name] * matrix.values
        totals[index] += weights[name]
    missing = np.flatnonzero(totals == 0)
    if missing.size:
        raise MissingModalityError(f"molecule '{ids[missing[0]]}' has no weighted modality")
    return TargetSimilarityMatrix(values=fused / totals[:, None], ids=ids)


def node_target_matrix(
    ppms: Sequence[float],
    ids: Sequence[str] | None = None,
    tau1: float = DEFAULT_TAU1,
    tau2: float = DEFAULT_TAU2,
) -> TargetSimilarityMatrix:
    """
    Node-level targets: pair weighting of chemical-shift similarities.

    Raises:
        EmptyPoolError: The node pool is empty
    """
    if len(ppms) == 0:
        raise EmptyPoolError("node pool is empty")
    return pair_weight(ppm_similarity_matrix(ppms, ids, tau1, tau2))


def matrix_to_csv(ids: Sequence[str], values: np.ndarray) -> str:
    """Header row of ids, then one row of 17-significant-digit values per id."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(ids)
    for row in values:
        writer.writerow([f"{v:.17g}" for v in row])
    return buffer.getvalue()


def save_matrix_csv(path: str | Path, matrix) -> None:
    atomic_write(path, matrix_to_csv(matrix.ids, matrix.values))


def save_matrix_bin(path: str | Path, matrix) -> None:
    """GMSM layout: magic | version u32 | n u32 | modality tag u8 | n*n f64, row-major."""
    n = matrix.values.shape[0]
    header = MATRIX_MAGIC + struct.pack("<IIB", MATRIX_VERSION, n, MODALITY_TAGS[matrix.modality])
    atomic_write(path, header + matrix.values.astype("<f8").tobytes())


def load_matrix(path: str | Path) -> tuple[tuple[str, ...], np.ndarray, str | None]:
    """
    Read a matrix written by ``save_matrix_csv`` or ``save_matrix_bin``.

    Binary files carry no ids; their rows get positional ids ``"0".."n-1"``.

    Returns:
        tuple: ids, values, modality (``None`` for CSV)
    """
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == MATRIX_MAGIC:
        return _load_matrix_bin(data, str(path))
    return _load_matrix_csv(data.decode("utf-8"), str(path))


def _load_matrix_bin(data: bytes, path: str):
    if len(data) < 13:
        raise CorruptionError("truncated header", path=path)
    version, n, tag = struct.unpack_from("<IIB", data, 4)
    if version != MATRIX_VERSION:
        raise VersionError(f"unsupported matrix version {version}", path=path)
    if tag not in TAG_MODALITIES:
        raise CorruptionError(f"unknown modality tag {tag}", path=path)
    if len(data) != 13 + 8 * n * n:
        raise CorruptionError(f"expected {n * n} values, file size disagrees", path=path)
    values = np.frombuffer(data, dtype="<f8", offset=13).reshape(n, n).astype(np.float64)
    return tuple(str(i) for i in range(n)), values, TAG_MODALITIES[tag]


def _load_matrix_csv(text: str, path: str):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise EmptyPoolError("empty matrix file", path=path)
    ids = tuple(rows[0])
    body = rows[1:]
    if len(body) != len(ids):
        raise DataError(f"{len(ids)} ids but {len(body)} rows", path=path)
    values = np.zeros((len(ids), len(ids)))
    for r, row in enumerate(body):
        if len(row) != len(ids):
            raise DataError(f"expected {len(ids)} values, got {len(row)}", path=path, line=r + 2)
        try:
            values[r] = [float(v) for v in row]
        except ValueError as err:
            raise DataError(f"not a number: {err}", path=path, line=r + 2) from err
    return ids, values, None
