"""
Circular substructure fingerprints and Tanimoto similarity.

Every atom starts from an order-independent descriptor (element, degree,
charge, hydrogen count, aromaticity). Each iteration rehashes an atom's
identifier together with the sorted identifiers of its neighbours, so after
``r`` iterations an identifier describes the radius-``r`` environment. All
identifiers of all iterations are folded into a fixed-width bitset.
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from graphmsl.scripts.errors import (
    ConfigError,
    CorruptionError,
    MagicError,
    VersionError,
    WidthMismatchError,
)
from graphmsl.scripts.molgraph import MolecularGraph
from graphmsl.scripts.utils import atomic_write, ordered_map

DEFAULT_RADIUS = 2
DEFAULT_N_BITS = 2048
ALLOWED_N_BITS = (512, 1024, 2048, 4096)
MAX_RADIUS = 5

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF

CACHE_MAGIC = b"GMFP"
CACHE_VERSION = 1


@dataclass(frozen=True)
class Fingerprint:
    """
    Binary fingerprint stored as a Python integer bitset.

    Attributes:
        bits (int): Bit ``i`` set means feature ``i`` is present
        n_bits (int): Width of the bitset
        radius (int): Circular radius used to build it
    """

    bits: int
    n_bits: int = DEFAULT_N_BITS
    radius: int = DEFAULT_RADIUS

    def popcount(self) -> int:
        return self.bits.bit_count()

    def on_bits(self) -> list[int]:
        return [i for i in range(self.n_bits) if (self.bits >> i) & 1]

    def to_array(self) -> np.ndarray:
        """Dense 0/1 float64 vector of length ``n_bits``."""
        raw = np.frombuffer(self.bits.to_bytes(self.n_bits // 8, "little"), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little").astype(np.float64)

    @classmethod
    def from_indices(cls, indices, n_bits: int = DEFAULT_N_BITS, radius: int = DEFAULT_RADIUS):
        bits = 0
        for i in indices:
            bits |= 1 << int(i)
        return cls(bits=bits, n_bits=n_bits, radius=radius)


def fnv1a_64(payload: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = FNV_OFFSET
    for byte in payload:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def _initial_identifier(g: MolecularGraph, index: int) -> int:
    atom = g.atoms[index]
    payload = struct.pack(
        "<6q",
        0,
        atom.atomic_number,
        g.degree(index),
        atom.formal_charge,
        atom.total_h,
        1 if atom.aromatic else 0,
    )
    return fnv1a_64(payload)


def ecfp(g: MolecularGraph, radius: int = DEFAULT_RADIUS, n_bits: int = DEFAULT_N_BITS) -> Fingerprint:
    """
    Compute the circular fingerprint of a molecule.

    Args:
        g (MolecularGraph): Parsed molecule
        radius (int): Number of refinement iterations, 0..5
        n_bits (int): Fingerprint width, one of 512, 1024, 2048, 4096

    Returns:
        Fingerprint: Bitset invariant under atom renumbering
    """
    if not 0 <= radius <= MAX_RADIUS:
        raise ConfigError(f"radius must be in [0, {MAX_RADIUS}], got {radius}")
    if n_bits not in ALLOWED_N_BITS:
        raise ConfigError(f"n_bits must be one of {ALLOWED_N_BITS}, got {n_bits}")

    # Neighbour lists with bond order codes, built once
    neighbours: list[list[tuple[int, int]]] = [[] for _ in g.atoms]
    for bond in g.bonds:
        neighbours[bond.a].append((bond.order.value, bond.b))
        neighbours[bond.b].append((bond.order.value, bond.a))

    identifiers = [_initial_identifier(g, i) for i in range(len(g.atoms))]
    mask = n_bits - 1
    bits = 0
    for identifier in identifiers:
        bits |= 1 << (identifier & mask)

    for iteration in range(1, radius + 1):
        refined = []
        for i, current in enumerate(identifiers):
            environment = sorted((order, identifiers[j]) for order, j in neighbours[i])
            payload = struct.pack("<qQ", iteration, current)
            payload += b"".join(struct.pack("<qQ", order, ident) for order, ident in environment)
            refined.append(fnv1a_64(payload))
        identifiers = refined
        for identifier in identifiers:
            bits |= 1 << (identifier & mask)

    return Fingerprint(bits=bits, n_bits=n_bits, radius=radius)


def ecfp_batch(
    graphs: Sequence[MolecularGraph],
    radius: int = DEFAULT_RADIUS,
    n_bits: int = DEFAULT_N_BITS,
    threads: int = 1,
) -> list[Fingerprint]:
    """Fingerprint many molecules; identical to serial calls for any thread count."""
    return ordered_map(lambda g: ecfp(g, radius, n_bits), graphs, threads)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """
    Tanimoto similarity ``|A & B| / |A | B|`` of two fingerprints.

    Two empty fingerprints are considered identical (similarity 1).

    Raises:
        WidthMismatchError: The fingerprints have different widths
    """
    if a.n_bits != b.n_bits:
        raise WidthMismatchError(f"cannot compare {a.n_bits}-bit and {b.n_bits}-bit fingerprints")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union


def save_fingerprints(path: str | Path, ids: Sequence[str], fps: Sequence[Fingerprint]) -> None:
    """
    Write a GMFP fingerprint cache.

    Layout: magic ``GMFP`` | version u32 | n_bits u32 | radius u32, then per
    record: id length u16 | UTF-8 id | ``n_bits / 8`` raw little-endian bytes.
    """
    if len(ids) != len(fps):
        raise ConfigError("ids and fingerprints must have the same length")
    if not fps:
        n_bits, radius = DEFAULT_N_BITS, DEFAULT_RADIUS
    else:
        n_bits, radius = fps[0].n_bits, fps[0].radius
    chunks = [CACHE_MAGIC, struct.pack("<3I", CACHE_VERSION, n_bits, radius)]
    for mol_id, fp in zip(ids, fps):
        if fp.n_bits != n_bits or fp.radius != radius:
            raise WidthMismatchError("all cached fingerprints must share n_bits and radius")
        encoded = mol_id.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(fp.bits.to_bytes(n_bits // 8, "little"))
    atomic_write(path, b"".join(chunks))


def load_fingerprints(path: str | Path) -> tuple[list[str], list[Fingerprint]]:
    """
    Read a GMFP fingerprint cache.

    Returns:
        tuple[list[str], list[Fingerprint]]: Ids and fingerprints in file order

    Raises:
        MagicError, VersionError, CorruptionError
    """
    data = Path(path).read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise MagicError("not a GMFP fingerprint cache", path=str(path))
    if len(data) < 16:
        raise CorruptionError("truncated header", path=str(path))
    version, n_bits, radius = struct.unpack_from("<3I", data, 4)
    if version != CACHE_VERSION:
        raise VersionError(f"unsupported fingerprint cache version {version}", path=str(path))
    width = n_bits // 8
    offset = 16
    ids, fps = [], []
    while offset < len(data):
        if offset + 2 > len(data):
            raise CorruptionError("truncated record header", path=str(path))
        (length,) = struct.unpack_from("<H", data, offset)
        offset += 2
        end = offset + length + width
        if end > len(data):
            raise CorruptionError("truncated record", path=str(path))
        ids.append(data[offset : offset + length].decode("utf-8"))
        bits = int.from_bytes(data[offset + length : end], "little")
        fps.append(Fingerprint(bits=bits, n_bits=n_bits, radius=radius))
        offset = end
    return ids, fps
