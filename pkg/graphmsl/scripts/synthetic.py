"""
Deterministic desk-scale dataset: molecules, carbon shifts, modality embeddings and labels.

Molecules are chains of fragments drawn from a small grammar, so every string
parses under the supported SMILES subset. Shifts follow a crude additive model
(aromatic, heteroatom-neighbour and carbonyl increments plus noise). Modality
embeddings are seeded random projections of a fingerprint, so they carry real
structural similarity the way encoder outputs would.
"""

import json
from pathlib import Path

import numpy as np

from graphmsl.scripts.dataio import EmbeddingTable, MoleculePool, MoleculeRecord, PeakTable, save_embeddings
from graphmsl.scripts.fingerprint import ecfp
from graphmsl.scripts.molgraph import BondOrder, MolecularGraph, parse_smiles
from graphmsl.scripts.similarity import MODALITY_TAGS
from graphmsl.scripts.utils import atomic_write

# "{r}" is replaced by a fresh ring-closure number
CHAIN_FRAGMENTS = (
    "C",
    "CC",
    "CCC",
    "C(C)C",
    "N",
    "O",
    "S",
    "OC",
    "C{r}CCCCC{r}",
    "c{r}ccccc{r}",
    "c{r}ccncc{r}",
)
TERMINAL_FRAGMENTS = ("C#N", "Cl", "Br", "F", "C(F)(F)F", "C(=O)O")

EMBEDDING_MODALITIES = ("smiles", "nmr", "image")
PROJECTION_BITS = 512


def synthetic_smiles(n: int, seed: int) -> list[str]:
    """
    Generate ``n`` fragment-chain SMILES strings.

    Args:
        n (int): Number of molecules
        seed (int): Generator seed

    Returns:
        list[str]: SMILES strings, deterministic in ``seed``
    """
    rng = np.random.default_rng(seed)
    smiles = []
    for _ in range(n):
        ring = 0
        parts = []
        for _ in range(1 + int(rng.integers(0, 4))):
            fragment = CHAIN_FRAGMENTS[int(rng.integers(len(CHAIN_FRAGMENTS)))]
            if "{r}" in fragment:
                ring += 1
                fragment = fragment.format(r=ring)
            parts.append(fragment)
        if rng.random() < 0.5:
            parts.append(TERMINAL_FRAGMENTS[int(rng.integers(len(TERMINAL_FRAGMENTS)))])
        smiles.append("".join(parts))
    return smiles


def synthetic_pool(n: int, seed: int) -> MoleculePool:
    """Parsed synthetic molecules with ids ``mol0000``... and synthetic labels."""
    records = []
    for k, text in enumerate(synthetic_smiles(n, seed)):
        graph = parse_smiles(text)
        records.append(MoleculeRecord(f"mol{k:04d}", text, graph, tuple(synthetic_labels(graph))))
    return MoleculePool(tuple(records))


def _carbon_shift(g: MolecularGraph, index: int) -> float:
    atom = g.atoms[index]
    shift = 20.0 + (100.0 if atom.aromatic else 0.0)
    for bond in g.bonds:
        if index not in (bond.a, bond.b):
            continue
        other = g.atoms[bond.b if bond.a == index else bond.a]
        if other.element != "C":
            shift += 30.0
        if other.element == "O" and bond.order is BondOrder.DOUBLE:
            shift += 50.0
    return shift


def synthetic_peaks(pool: MoleculePool, seed: int) -> PeakTable:
    """One shift per carbon atom, clamped to [0, 220] ppm."""
    rng = np.random.default_rng(seed)
    peaks = {}
    for record in pool:
        g = record.graph
        entries = []
        for index, atom in enumerate(g.atoms):
            if atom.element == "C":
                shift = _carbon_shift(g, index) + float(rng.normal(0.0, 2.0))
                entries.append((index, float(np.clip(shift, 0.0, 220.0))))
        peaks[record.id] = tuple(entries)
    return PeakTable(peaks)


def synthetic_embeddings(pool: MoleculePool, modality: str, dim: int = 32, seed: int = 0) -> EmbeddingTable:
    """
    Embedding table for one modality: fingerprint projection plus small noise.

    Every vector has a nonzero norm.
    """
    rng = np.random.default_rng([seed, MODALITY_TAGS[modality]])
    projection = rng.standard_normal((PROJECTION_BITS, dim)) / np.sqrt(PROJECTION_BITS)
    rows = {}
    for record in pool:
        bits = ecfp(record.graph, radius=2, n_bits=PROJECTION_BITS).to_array()
        vector = bits @ projection + 0.1 * rng.standard_normal(dim)
        if not np.any(vector):
            vector[0] = 1.0
        vector.flags.writeable = False
        rows[record.id] = vector
    return EmbeddingTable(modality=modality, dim=dim, rows=rows)


def synthetic_labels(g: MolecularGraph) -> list[float]:
    """
    Two tasks: aromatic ring present (0/1) and a linear function of heteroatom
    and heavy-atom counts.
    """
    aromatic = 1.0 if any(atom.aromatic for atom in g.atoms) else 0.0
    hetero = sum(1 for atom in g.atoms if atom.element != "C")
    return [aromatic, 0.5 * hetero + 0.1 * len(g.atoms)]


def write_synthetic_dataset(out_dir: str | Path, n: int, seed: int, dim: int = 32) -> dict[str, Path]:
    """
    Write molecules, peaks and the three embedding tables as JSON Lines.

    Returns:
        dict[str, Path]: File path by role ("mols", "peaks", "smiles", "nmr", "image")
    """
    out = Path(out_dir)
    pool = synthetic_pool(n, seed)
    paths = {"mols": out / "mols.jsonl", "peaks": out / "peaks.jsonl"}

    lines = [json.dumps({"id": r.id, "smiles": r.smiles, "labels": list(r.labels)}) for r in pool]
    atomic_write(paths["mols"], "".join(line + "\n" for line in lines))

    peaks = synthetic_peaks(pool, seed)
    lines = [
        json.dumps({"id": mol_id, "peaks": [{"atom": a, "ppm": p} for a, p in entries]})
        for mol_id, entries in peaks.peaks.items()
    ]
    atomic_write(paths["peaks"], "".join(line + "\n" for line in lines))

    for modality in EMBEDDING_MODALITIES:
        paths[modality] = out / f"embeddings_{modality}.jsonl"
        save_embeddings(paths[modality], synthetic_embeddings(pool, modality, dim, seed))
    return paths
