"""
graphmsl - molecular graph encoder pre-training against fused multi-similarity targets.

Molecules are parsed from SMILES into directed-edge graphs, every available
modality (fingerprints, precomputed SMILES / NMR / image embeddings, carbon
shifts) is turned into a self-similarity matrix, softmax pair weighting lifts
each matrix to row-stochastic targets, and a weighted fusion of the targets
trains a directed message passing encoder.

Usage:
    >>> from graphmsl.scripts.synthetic import synthetic_pool
    >>> from graphmsl.scripts.trainer import ModalityInputs, TrainConfig, pretrain
    >>> pool = synthetic_pool(32, seed=0)
    >>> ckpt = pretrain(pool, ModalityInputs(), TrainConfig(epochs=5, batch_size=16))

The ``graphmsl`` command wraps the same steps (``graphmsl --help``).
"""

__version__ = "0.1.0"
