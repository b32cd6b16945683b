"""
Dataset, embedding and peak ingestion, plus checkpoint persistence.

Text inputs are JSON Lines, one record per line, validated with pydantic models
so every problem is reported with its file and line. Checkpoints use the GMSL
binary layout:

    magic "GMSL" | version u32 | config length u32 | config JSON (UTF-8)
    | array count u32 | per array: name length u16, name, ndim u32, dims u32...,
      float64 little-endian data
"""

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from logging import Logger
from pathlib import Path
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from graphmsl.scripts.encoder import PARAM_NAMES, EncoderConfig, EncoderParams
from graphmsl.scripts.errors import (
    BadAtomIndexError,
    CorruptionError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptyDatasetError,
    MagicError,
    ParseError,
    SmilesError,
    UnknownMoleculeError,
    VersionError,
)
from graphmsl.scripts.molgraph import MolecularGraph, parse_smiles
from graphmsl.scripts.utils import atomic_write

CHECKPOINT_MAGIC = b"GMSL"
CHECKPOINT_VERSION = 1
PPM_SOFT_RANGE = (-20.0, 250.0)

module_logger = logging.getLogger("graphmsl")


class _MoleculeLine(BaseModel):
    model_config = ConfigDict(extra="ignore", strict=True)

    id: str
    smiles: str
    labels: list[float | None] | None = None


class _EmbeddingLine(BaseModel):
    model_config = ConfigDict(extra="ignore", strict=True)

    id: str
    vector: list[float]


class _PeakEntry(BaseModel):
    model_config = ConfigDict(extra="ignore", strict=True)

    atom: int
    ppm: float


class _PeakLine(BaseModel):
    model_config = ConfigDict(extra="ignore", strict=True)

    id: str
    peaks: list[_PeakEntry]


@dataclass(frozen=True)
class MoleculeRecord:
    id: str
    smiles: str
    graph: MolecularGraph
    labels: tuple[float | None, ...] = ()


@dataclass(frozen=True)
class MoleculePool:
    """
    Molecules in file order, indexable by id.

    Attributes:
        records (tuple[MoleculeRecord, ...]): All molecules
    """

    records: tuple[MoleculeRecord, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "_index", {r.id: k for k, r in enumerate(self.records)})

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[MoleculeRecord]:
        return iter(self.records)

    def __contains__(self, mol_id: str) -> bool:
        return mol_id in self._index

    def __getitem__(self, mol_id: str) -> MoleculeRecord:
        return self.records[self._index[mol_id]]

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def position(self, mol_id: str) -> int:
        return self._index[mol_id]


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """
    Precomputed modality vectors.

    Attributes:
        modality (str): smiles, nmr or image
        dim (int): Common vector length
        rows (Mapping[str, np.ndarray]): Read-only vectors by molecule id, in file order
    """

    modality: str
    dim: int
    rows: Mapping[str, np.ndarray]

    def __contains__(self, mol_id: str) -> bool:
        return mol_id in self.rows

    @property
    def ids(self) -> list[str]:
        return list(self.rows)

    def vectors(self, ids: Sequence[str]) -> np.ndarray:
        return np.vstack([self.rows[i] for i in ids]) if ids else np.zeros((0, self.dim))


@dataclass(frozen=True)
class PeakTable:
    """
    Carbon chemical shifts by molecule id: ``peaks[id] = ((atom, ppm), ...)``.
    """

    peaks: Mapping[str, tuple[tuple[int, float], ...]]

    def __contains__(self, mol_id: str) -> bool:
        return mol_id in self.peaks

    def for_molecule(self, mol_id: str) -> tuple[tuple[int, float], ...]:
        return self.peaks.get(mol_id, ())


class LossRecord(NamedTuple):
    epoch: int
    batch: int
    loss: float
    grad_norm: float


def _lines(path: Path) -> Iterator[tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if line.strip():
                yield number, line


def _validate(model, text: str, path: Path, number: int):
    try:
        return model.model_validate_json(text)
    except ValidationError as err:
        problem = err.errors()[0]
        where = ".".join(str(p) for p in problem["loc"]) or "record"
        raise ParseError(f"{where}: {problem['msg']}", path=str(path), line=number) from err


def load_molecules(
    path: str | Path,
    strict_valence: bool = False,
    keep_largest_fragment: bool = False,
    logger: Logger = module_logger,
) -> MoleculePool:
    """
    Read a molecule dataset.

    Args:
        path: JSON Lines file of ``{"id", "smiles", "labels"?}`` objects
        strict_valence (bool): Reject atoms whose bonds exceed their valence
        keep_largest_fragment (bool): Keep the largest fragment of dotted SMILES

    Returns:
        MoleculePool: Parsed molecules in file order

    Raises:
        ParseError: Invalid JSON, record or SMILES (with line number)
        DuplicateIdError: An id appears twice
        EmptyDatasetError: The file has no records
    """
    path = Path(path)
    records, seen = [], {}
    for number, text in _lines(path):
        row = _validate(_MoleculeLine, text, path, number)
        if row.id in seen:
            raise DuplicateIdError(
                f"id '{row.id}' already defined on line {seen[row.id]}", path=str(path), line=number
            )
        seen[row.id] = number
        try:
            graph = parse_smiles(
                row.smiles, strict_valence=strict_valence, keep_largest_fragment=keep_largest_fragment
            )
        except SmilesError as err:
            raise ParseError(
                f"{type(err).__name__} in '{row.smiles}': {err.detail}", path=str(path), line=number
            ) from err
        if graph.multi_fragment:
            logger.warning(f"{path}:{number}: kept the largest fragment of '{row.smiles}'")
        records.append(MoleculeRecord(row.id, row.smiles, graph, tuple(row.labels or ())))

    if not records:
        raise EmptyDatasetError("no molecules", path=str(path))
    logger.info(f"Loaded {len(records)} molecules from {path}")
    return MoleculePool(tuple(records))


def load_embeddings(path: str | Path, modality: str, logger: Logger = module_logger) -> EmbeddingTable:
    """
    Read precomputed modality vectors from ``{"id", "vector"}`` JSON Lines.

    Raises:
        DimensionMismatchError: A vector length differs from the first one
        DuplicateIdError: An id appears twice
        EmptyDatasetError: The file has no records
    """
    path = Path(path)
    rows: dict[str, np.ndarray] = {}
    dim = None
    for number, text in _lines(path):
        row = _validate(_EmbeddingLine, text, path, number)
        if row.id in rows:
            raise DuplicateIdError(f"id '{row.id}' appears twice", path=str(path), line=number)
        if dim is None:
            dim = len(row.vector)
        if len(row.vector) != dim or dim == 0:
            raise DimensionMismatchError(
                f"expected dimension {dim}, got {len(row.vector)}", path=str(path), line=number
            )
        vector = np.array(row.vector, dtype=np.float64)
        vector.flags.writeable = False
        rows[row.id] = vector

    if dim is None:
        raise EmptyDatasetError("no embeddings", path=str(path))
    logger.info(f"Loaded {len(rows)} {modality} embeddings of dimension {dim} from {path}")
    return EmbeddingTable(modality=modality, dim=dim, rows=rows)


def save_embeddings(path: str | Path, table: EmbeddingTable) -> None:
    """Write a table in the format ``load_embeddings`` reads."""
    lines = [
        json.dumps({"id": mol_id, "vector": [float(v) for v in vector]})
        for mol_id, vector in table.rows.items()
    ]
    atomic_write(path, "".join(line + "\n" for line in lines))


def load_peaks(
    path: str | Path, pool: MoleculePool | None = None, logger: Logger = module_logger
) -> PeakTable:
    """
    Read carbon chemical shifts from ``{"id", "peaks": [{"atom", "ppm"}]}`` JSON Lines.

    Args:
        path: Peak file
        pool (MoleculePool | None): When given, ids and atom indices are checked against it

    Raises:
        UnknownMoleculeError: An id is not in the pool
        BadAtomIndexError: An atom index is out of range, repeated or not a carbon
    """
    path = Path(path)
    peaks: dict[str, tuple[tuple[int, float], ...]] = {}
    low, high = PPM_SOFT_RANGE
    for number, text in _lines(path):
        row = _validate(_PeakLine, text, path, number)
        if row.id in peaks:
            raise DuplicateIdError(f"id '{row.id}' appears twice", path=str(path), line=number)
        graph = None
        if pool is not None:
            if row.id not in pool:
                raise UnknownMoleculeError(f"unknown molecule '{row.id}'", path=str(path), line=number)
            graph = pool[row.id].graph

        entries, atoms = [], set()
        for peak in row.peaks:
            if not math.isfinite(peak.ppm):
                raise ParseError(f"non-finite shift on atom {peak.atom}", path=str(path), line=number)
            if peak.atom < 0 or peak.atom in atoms:
                raise BadAtomIndexError(f"invalid atom index {peak.atom}", path=str(path), line=number)
            if graph is not None:
                if peak.atom >= len(graph.atoms):
                    raise BadAtomIndexError(
                        f"atom {peak.atom} out of range for {len(graph.atoms)} atoms",
                        path=str(path),
                        line=number,
                    )
                if graph.atoms[peak.atom].element != "C":
                    raise BadAtomIndexError(
                        f"atom {peak.atom} is {graph.atoms[peak.atom].element}, not carbon",
                        path=str(path),
                        line=number,
                    )
            if not low <= peak.ppm <= high:
                logger.warning(f"{path}:{number}: shift {peak.ppm} ppm outside [{low}, {high}]")
            atoms.add(peak.atom)
            entries.append((peak.atom, peak.ppm))
        peaks[row.id] = tuple(entries)

    logger.info(f"Loaded peaks for {len(peaks)} molecules from {path}")
    return PeakTable(peaks)


def save_loss_history(path: str | Path, history: Sequence[LossRecord]) -> None:
    """CSV with columns epoch, batch, loss, grad_norm."""
    lines = ["epoch,batch,loss,grad_norm"]
    lines += [f"{r.epoch},{r.batch},{r.loss:.17g},{r.grad_norm:.17g}" for r in history]
    atomic_write(path, "\n".join(lines) + "\n")


@dataclass(frozen=True, eq=False)
class ModelCheckpoint:
    """
    Everything needed to embed molecules or continue training.

    Attributes:
        encoder_config (EncoderConfig): Encoder hyper-parameters
        params (EncoderParams): Encoder weights
        adam_m (dict[str, np.ndarray]): Adam first moments per parameter
        adam_v (dict[str, np.ndarray]): Adam second moments per parameter
        adam_step (int): Optimizer steps taken
        train_config (dict): Serialized training configuration
        epoch (int): Epoch of the next batch to run
        next_batch (int): Index of the next batch within that epoch
        loss_history (tuple[LossRecord, ...]): One record per optimizer step
        format_version (int): Layout version
    """

    encoder_config: EncoderConfig
    params: EncoderParams
    adam_m: dict
    adam_v: dict
    adam_step: int = 0
    train_config: dict = field(default_factory=dict)
    epoch: int = 0
    next_batch: int = 0
    loss_history: tuple[LossRecord, ...] = ()
    format_version: int = CHECKPOINT_VERSION

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelCheckpoint):
            return NotImplemented
        return (
            _config_block(self) == _config_block(other)
            and all(
                _bit_equal(a, b) for a, b in zip(_named_arrays(self).values(), _named_arrays(other).values())
            )
            and list(_named_arrays(self)) == list(_named_arrays(other))
        )


def _bit_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.astype("<f8").tobytes() == b.astype("<f8").tobytes()


def _config_block(ckpt: ModelCheckpoint) -> dict:
    return {
        "encoder": ckpt.encoder_config.model_dump(),
        "train": ckpt.train_config,
        "adam_step": ckpt.adam_step,
        "epoch": ckpt.epoch,
        "next_batch": ckpt.next_batch,
        "history_epochs": [r.epoch for r in ckpt.loss_history],
        "history_batches": [r.batch for r in ckpt.loss_history],
    }


def _named_arrays(ckpt: ModelCheckpoint) -> dict[str, np.ndarray]:
    arrays = {f"params/{name}": value for name, value in ckpt.params.as_dict().items()}
    arrays.update({f"adam_m/{name}": ckpt.adam_m[name] for name in PARAM_NAMES})
    arrays.update({f"adam_v/{name}": ckpt.adam_v[name] for name in PARAM_NAMES})
    arrays["history"] = np.array(
        [[r.loss, r.grad_norm] for r in ckpt.loss_history], dtype=np.float64
    ).reshape(len(ckpt.loss_history), 2)
    return arrays


def checkpoint_bytes(ckpt: ModelCheckpoint) -> bytes:
    config = json.dumps(_config_block(ckpt), sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", ckpt.format_version, len(config)), config]
    arrays = _named_arrays(ckpt)
    chunks.append(struct.pack("<I", len(arrays)))
    for name, array in arrays.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> None:
    atomic_write(path, checkpoint_bytes(ckpt))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CorruptionError("file is truncated", path=self.path)
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    """
    Read a GMSL checkpoint; ``load_checkpoint(p)`` equals the saved checkpoint bit for bit.

    Raises:
        MagicError: Not a checkpoint
        VersionError: Unsupported layout version
        CorruptionError: Truncated file, inconsistent lengths or trailing bytes
    """
    path = str(path)
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.data[:4] != CHECKPOINT_MAGIC:
        raise MagicError("not a GMSL checkpoint", path=path)
    reader.take(4)
    version, config_length = reader.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}", path=path)
    try:
        config = json.loads(reader.take(config_length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CorruptionError("unreadable config block", path=path) from err

    (count,) = reader.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name = reader.take(name_length).decode("utf-8", errors="replace")
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = reader.take(8 * size)
        arrays[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    if reader.offset != len(reader.data):
        raise CorruptionError("trailing bytes after the last array", path=path)

    try:
        history_values = arrays["history"]
        history = tuple(
            LossRecord(int(e), int(b), float(loss), float(norm))
            for e, b, (loss, norm) in zip(
                config["history_epochs"], config["history_batches"], history_values
            )
        )
        if len(history) != history_values.shape[0]:
            raise CorruptionError("loss history lengths disagree", path=path)
        return ModelCheckpoint(
            encoder_config=EncoderConfig(**config["encoder"]),
            params=EncoderParams.from_dict({n: arrays[f"params/{n}"] for n in PARAM_NAMES}),
            adam_m={n: arrays[f"adam_m/{n}"] for n in PARAM_NAMES},
            adam_v={n: arrays[f"adam_v/{n}"] for n in PARAM_NAMES},
            adam_step=int(config["adam_step"]),
            train_config=config["train"],
            epoch=int(config["epoch"]),
            next_batch=int(config["next_batch"]),
            loss_history=history,
            format_version=version,
        )
    except (KeyError, ValueError, TypeError) as err:
        if isinstance(err, CorruptionError):
            raise
        raise CorruptionError(f"inconsistent checkpoint contents: {err}", path=path) from err
