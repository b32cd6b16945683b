"""
Pre-training loop, Adam optimizer and the convergence verification harness.
"""

import logging
import math
from dataclasses import dataclass, field
from logging import Logger
from typing import Literal, Mapping

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import softmax

from graphmsl.scripts.dataio import (
    EmbeddingTable,
    LossRecord,
    ModelCheckpoint,
    MoleculePool,
    PeakTable,
)
from graphmsl.scripts.diffcore import Tape, Tensor, backward, scalar_mul, take_rows
from graphmsl.scripts.encoder import EncoderConfig, EncoderParams, encode_batch, init_params
from graphmsl.scripts.errors import (
    ConfigError,
    EmptyNodePoolError,
    EmptyPoolError,
    MissingModalityError,
    NonConvergenceError,
    ShapeError,
)
from graphmsl.scripts.fingerprint import DEFAULT_N_BITS, DEFAULT_RADIUS, ecfp_batch
from graphmsl.scripts.loss import (
    LatentSimilarityConfig,
    bilevel_loss,
    graph_loss,
    latent_matrix,
    node_loss,
)
from graphmsl.scripts.molgraph import featurize
from graphmsl.scripts.similarity import (
    DEFAULT_TAU1,
    DEFAULT_TAU2,
    FusionWeights,
    cosine_self_similarity,
    fingerprint_self_similarity,
    fuse,
    fuse_available,
    node_target_matrix,
    pair_weight,
)
from graphmsl.scripts.utils import ordered_map

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8

module_logger = logging.getLogger("graphmsl")


class TrainConfig(BaseModel):
    """
    Pre-training configuration.

    Attributes:
        learning_rate (float): Adam step size
        epochs (int): Passes over the molecule pool
        batch_size (int): Molecules per similarity pool, at least 2
        level (str): "graph", "node" or "bilevel" loss
        fusion (FusionWeights): Modality weights, or a preset name on input
        seed (int): Seed of the per-epoch shuffles
        latent (LatentSimilarityConfig): Latent similarity form
        encoder (EncoderConfig): Encoder hyper-parameters
        tau1 (float): Chemical-shift similarity offset
        tau2 (float): Chemical-shift similarity scale
        node_pool (str): "batch" pools annotated carbons across the batch, "molecule" per molecule
        permissive (bool): Renormalize fusion weights when molecules lack a modality
        exclude_self (bool): Drop the anchor from its own softmax pool
        fingerprint_radius (int): Circular fingerprint radius
        fingerprint_bits (int): Circular fingerprint width
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(default=0.001, gt=0)
    epochs: int = Field(default=200, ge=1)
    batch_size: int = Field(default=256, ge=2)
    level: Literal["graph", "node", "bilevel"] = "graph"
    fusion: FusionWeights = Field(default_factory=lambda: FusionWeights.from_preset("fingerprint"))
    seed: int = Field(default=0, ge=0, lt=2**64)
    latent: LatentSimilarityConfig = Field(default_factory=LatentSimilarityConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    tau1: float = Field(default=DEFAULT_TAU1, gt=0)
    tau2: float = Field(default=DEFAULT_TAU2, gt=0)
    node_pool: Literal["batch", "molecule"] = "batch"
    permissive: bool = False
    exclude_self: bool = False
    fingerprint_radius: int = Field(default=DEFAULT_RADIUS, ge=0, le=5)
    fingerprint_bits: int = DEFAULT_N_BITS

    @field_validator("fusion", mode="before")
    @classmethod
    def _resolve_fusion(cls, value):
        if isinstance(value, str):
            return FusionWeights.from_preset(value)
        if isinstance(value, (list, tuple)):
            return FusionWeights(*value)
        return value


@dataclass(frozen=True)
class ModalityInputs:
    """
    Per-molecule inputs beyond the molecular graph.

    Attributes:
        embeddings (Mapping[str, EmbeddingTable]): Tables keyed by smiles, nmr, image
        peaks (PeakTable | None): Carbon chemical shifts for node-level training
    """

    embeddings: Mapping[str, EmbeddingTable] = field(default_factory=dict)
    peaks: PeakTable | None = None


@dataclass(frozen=True, eq=False)
class AdamState:
    """
    Adam moment buffers per parameter plus the step counter.
    """

    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8).

    Args:
        params: Current parameters by name
        grads: Gradients with the same names and shapes
        state (AdamState): Moments before the update
        lr (float): Step size

    Returns:
        tuple: Updated parameters and state; the inputs are not modified

    Raises:
        ShapeError: Names or shapes of params, grads and moments disagree
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeError("params, grads and optimizer state must name the same tensors")
    step = state.step + 1
    new_params, m, v = {}, {}, {}
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape or state.m[name].shape != value.shape:
            raise ShapeError(f"shape mismatch for '{name}': {value.shape} vs {g.shape}")
        m[name] = BETA1 * state.m[name] + (1 - BETA1) * g
        v[name] = BETA2 * state.v[name] + (1 - BETA2) * g * g
        m_hat = m[name] / (1 - BETA1**step)
        v_hat = v[name] / (1 - BETA2**step)
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new_params, AdamState(m=m, v=v, step=step)


class _TrainingData:
    """Featurized graphs, fingerprints and peak lookups prepared once per run."""

    def __init__(self, pool: MoleculePool, inputs: ModalityInputs, cfg: TrainConfig, threads: int):
        self.ids = pool.ids
        graphs = [record.graph for record in pool]
        self.featurized = ordered_map(featurize, graphs, threads)
        self.fingerprints = None
        if cfg.fusion.fingerprint > 0:
            self.fingerprints = ecfp_batch(graphs, cfg.fingerprint_radius, cfg.fingerprint_bits, threads)
        self.inputs = inputs
        self.cfg = cfg

    def graph_targets(self, batch: list[int]):
        cfg = self.cfg
        ids = [self.ids[k] for k in batch]
        targets = {}
        for modality in cfg.fusion.active():
            if modality == "fingerprint":
                S = fingerprint_self_similarity([self.fingerprints[k] for k in batch], ids)
            else:
                table = self.inputs.embeddings[modality]
                present = [i for i in ids if i in table]
                if not present:
                    continue
                S = cosine_self_similarity(table.vectors(present), present, modality)
            if cfg.exclude_self and len(S.ids) < 2:
                continue
            targets[modality] = pair_weight(S, cfg.exclude_self)
        if cfg.permissive:
            return fuse_available(targets, ids, cfg.fusion)
        return fuse(targets, cfg.fusion)

    def node_pools(self, batch: list[int], offsets: tuple[int, ...]) -> list[tuple[list[int], list[float]]]:
        """Node embedding rows and chemical shifts of every node pool of a batch."""
        peaks = self.inputs.peaks
        pools = []
        for k, offset in zip(batch, offsets):
            entries = peaks.for_molecule(self.ids[k])
            pools.append(([offset + atom for atom, _ in entries], [ppm for _, ppm in entries]))
        if self.cfg.node_pool == "batch":
            rows = [r for pool_rows, _ in pools for r in pool_rows]
            shifts = [s for _, pool_shifts in pools for s in pool_shifts]
            pools = [(rows, shifts)]
        pools = [pool for pool in pools if pool[0]]
        if not pools:
            raise EmptyNodePoolError("no annotated carbon atoms in this batch")
        return pools


def _check_inputs(pool: MoleculePool, inputs: ModalityInputs, cfg: TrainConfig) -> None:
    if cfg.level != "node":
        for modality in cfg.fusion.active():
            if modality == "fingerprint":
                continue
            table = inputs.embeddings.get(modality)
            if table is None:
                raise MissingModalityError(f"fusion uses '{modality}' but no embeddings were given")
            missing = [i for i in pool.ids if i not in table]
            if missing and not cfg.permissive:
                raise MissingModalityError(
                    f"{len(missing)} molecules lack '{modality}' embeddings, first '{missing[0]}'"
                )
    if cfg.level != "graph" and inputs.peaks is None:
        raise MissingModalityError(f"level '{cfg.level}' needs a peak table")


def _batch_loss(data: _TrainingData, batch: list[int], weights: dict, cfg: TrainConfig):
    encoded = encode_batch([data.featurized[k] for k in batch], weights, cfg.encoder)
    losses = []
    if cfg.level in ("graph", "bilevel"):
        T = data.graph_targets(batch)
        losses.append(graph_loss(T, latent_matrix(encoded.graph_embeddings, cfg.latent)))
    if cfg.level in ("node", "bilevel"):
        node_losses = []
        for rows, shifts in data.node_pools(batch, encoded.atom_offsets):
            Tn = node_target_matrix(shifts, tau1=cfg.tau1, tau2=cfg.tau2)
            Dn = latent_matrix(take_rows(encoded.node_embeddings, rows), cfg.latent)
            node_losses.append(node_loss(Tn, Dn))
        # Per-molecule pools contribute their mean
        total = node_losses[0]
        for extra in node_losses[1:]:
            total = bilevel_loss(total, extra)
        if len(node_losses) > 1:
            total = scalar_mul(total, 1.0 / len(node_losses))
        losses.append(total)
    return losses[0] if len(losses) == 1 else bilevel_loss(losses[0], losses[1])


def _batches(n: int, cfg: TrainConfig, epoch: int) -> list[list[int]]:
    order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
    batches = [order[i : i + cfg.batch_size].tolist() for i in range(0, n, cfg.batch_size)]
    # A one-molecule pool has a trivial target
    if len(batches[-1]) < 2:
        batches.pop()
    return batches


def _resume_config(cfg: TrainConfig) -> dict:
    dumped = cfg.model_dump(mode="json")
    dumped.pop("epochs")
    return dumped


def pretrain(
    pool: MoleculePool,
    inputs: ModalityInputs,
    cfg: TrainConfig,
    resume: ModelCheckpoint | None = None,
    max_steps: int | None = None,
    threads: int = 1,
    logger: Logger = module_logger,
) -> ModelCheckpoint:
    """
    Train the encoder so latent similarities match the fused targets.

    Each epoch shuffles the pool with a generator seeded by ``(seed, epoch)`` and
    walks it in batches; every batch is one similarity pool and one Adam step.

    Args:
        pool (MoleculePool): Training molecules
        inputs (ModalityInputs): Embedding tables and peaks required by ``cfg``
        cfg (TrainConfig): Training configuration
        resume (ModelCheckpoint | None): Continue from this checkpoint's cursor
        max_steps (int | None): Stop after this many optimizer steps in this call
        threads (int): Workers for featurization and fingerprints
        logger (Logger): Progress and per-epoch losses

    Returns:
        ModelCheckpoint: Final (or interrupted) state including the loss history

    Raises:
        MissingModalityError: Inputs required by the fusion weights or level are missing
        EmptyNodePoolError: A batch has no annotated carbons under node or bilevel level
    """
    if len(pool) < 2:
        raise EmptyPoolError("pre-training needs at least 2 molecules")
    _check_inputs(pool, inputs, cfg)
    data = _TrainingData(pool, inputs, cfg, threads)

    if resume is None:
        params = init_params(cfg.encoder).as_dict()
        state = AdamState.zeros(params)
        start_epoch, start_batch, history = 0, 0, []
    else:
        saved = dict(resume.train_config)
        saved.pop("epochs", None)
        if saved != _resume_config(cfg):
            raise ConfigError("resume checkpoint was trained with a different configuration")
        params = resume.params.as_dict()
        state = AdamState(m=dict(resume.adam_m), v=dict(resume.adam_v), step=resume.adam_step)
        start_epoch, start_batch, history = resume.epoch, resume.next_batch, list(resume.loss_history)
        logger.info(f"Resuming at epoch {start_epoch}, batch {start_batch}, step {state.step}")

    def checkpoint(epoch: int, next_batch: int) -> ModelCheckpoint:
        return ModelCheckpoint(
            encoder_config=cfg.encoder,
            params=EncoderParams.from_dict(params),
            adam_m=state.m,
            adam_v=state.v,
            adam_step=state.step,
            train_config=cfg.model_dump(mode="json"),
            epoch=epoch,
            next_batch=next_batch,
            loss_history=tuple(history),
        )

    steps = 0
    for epoch in range(start_epoch, cfg.epochs):
        batches = _batches(len(pool), cfg, epoch)
        first = start_batch if epoch == start_epoch else 0
        epoch_losses = []
        for b in range(first, len(batches)):
            if max_steps is not None and steps >= max_steps:
                logger.info(f"Stopping after {steps} steps at epoch {epoch}, batch {b}")
                return checkpoint(epoch, b)

            with Tape():
                weights = {name: Tensor(value, requires_grad=True) for name, value in params.items()}
                loss = _batch_loss(data, batches[b], weights, cfg)
                backward(loss)
            grads = {name: weights[name].grad for name in params}
            grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            params, state = adam_step(params, grads, state, cfg.learning_rate)

            history.append(LossRecord(epoch, b, loss.item(), grad_norm))
            epoch_losses.append(loss.item())
            steps += 1
        if epoch_losses:
            logger.info(f"Epoch {epoch}: mean loss {np.mean(epoch_losses):.6f} over {len(epoch_losses)} batches")

    return checkpoint(cfg.epochs, 0)


def epoch_mean_losses(history) -> dict[int, float]:
    """Mean batch loss of every epoch in a loss history."""
    per_epoch: dict[int, list[float]] = {}
    for record in history:
        per_epoch.setdefault(record.epoch, []).append(record.loss)
    return {epoch: float(np.mean(values)) for epoch, values in per_epoch.items()}


@dataclass(frozen=True)
class LatentFit:
    """
    Result of minimizing the loss over a free latent matrix.

    Attributes:
        D (np.ndarray): Final latent similarities
        steps (int): Adam steps taken
        grad_norm (float): Final gradient norm
        deviation (float): ``max |softmax(D) - T|``
        converged (bool): The gradient norm went below the threshold
        trace (tuple[float, ...]): Deviation sampled every ``trace_every`` steps
    """

    D: np.ndarray
    steps: int
    grad_norm: float
    deviation: float
    converged: bool
    trace: tuple[float, ...]


def minimize_latent(
    T: np.ndarray,
    max_steps: int = 50000,
    grad_tol: float = 1e-10,
    lr: float = 0.1,
    patience: int = 50,
    trace_every: int = 10,
) -> LatentFit:
    """
    Minimize the summed per-anchor cross-entropy over a free latent matrix with Adam.

    D starts at zero. The gradient ``softmax(D) - T`` is exact. When the gradient
    norm has not reached a new minimum for ``patience`` steps, the step size is
    halved and the moments restart, which lets Adam settle below any threshold.
    """
    T = np.asarray(T, dtype=np.float64)
    D = np.zeros_like(T)
    params = {"D": D}
    state = AdamState.zeros(params)
    best = math.inf
    since_best = 0
    trace = []

    def measure(D):
        probs = softmax(D, axis=1)
        return probs - T, float(np.max(np.abs(probs - T)))

    grad, deviation = measure(D)
    grad_norm = float(np.linalg.norm(grad))
    step = 0
    while grad_norm >= grad_tol and step < max_steps:
        params, state = adam_step(params, {"D": grad}, state, lr)
        step += 1
        grad, deviation = measure(params["D"])
        grad_norm = float(np.linalg.norm(grad))
        if step % trace_every == 0:
            trace.append(deviation)
        if grad_norm < best:
            best, since_best = grad_norm, 0
        else:
            since_best += 1
            if since_best >= patience:
                lr /= 2
                state = AdamState.zeros(params)
                since_best = 0

    return LatentFit(
        D=params["D"],
        steps=step,
        grad_norm=grad_norm,
        deviation=deviation,
        converged=grad_norm < grad_tol,
        trace=tuple(trace),
    )


def ordering_violations(T: np.ndarray, D: np.ndarray) -> int:
    """Within-row pairs with ``T[i, j] > T[i, k]`` but not ``D[i, j] > D[i, k]``."""
    larger = T[:, :, None] > T[:, None, :]
    kept = D[:, :, None] > D[:, None, :]
    return int(np.sum(larger & ~kept))


@dataclass(frozen=True)
class TheoremReport:
    n: int
    trials: int
    seed: int
    max_softmax_deviation: float
    ordering_violations: int
    runs: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "trials": self.trials,
            "seed": self.seed,
            "max_softmax_deviation": self.max_softmax_deviation,
            "ordering_violations": self.ordering_violations,
            "runs": list(self.runs),
        }


def random_targets(n: int, rng: np.random.Generator) -> np.ndarray:
    """Strictly positive row-stochastic ``n x n`` matrix (softmax of Gaussian logits)."""
    return softmax(rng.standard_normal((n, n)), axis=1)


def verify_theorem(
    n: int,
    trials: int,
    seed: int,
    max_steps: int = 50000,
    tol: float = 1e-3,
    logger: Logger = module_logger,
) -> TheoremReport:
    """
    Check numerically that minimizing the loss drives softmax(D) to the targets.

    Every trial samples random targets, minimizes over a free latent matrix and
    records the largest softmax deviation and the within-row ordering violations.

    Args:
        n (int): Pool size, at least 2
        trials (int): Number of random target matrices
        seed (int): Seed of the target sampler
        max_steps (int): Adam step cap per trial
        tol (float): Deviation accepted when the gradient threshold is not reached

    Returns:
        TheoremReport: Worst deviation and total ordering violations over trials

    Raises:
        NonConvergenceError: A trial hit the step cap with deviation above ``tol``
    """
    if n < 2:
        raise ConfigError(f"pool size must be at least 2, got {n}")
    if trials < 1:
        raise ConfigError(f"trials must be at least 1, got {trials}")
    rng = np.random.default_rng(seed)
    runs = []
    for trial in range(trials):
        T = random_targets(n, rng)
        fit = minimize_latent(T, max_steps=max_steps)
        violations = ordering_violations(T, fit.D)
        run = {
            "trial": trial,
            "steps": fit.steps,
            "grad_norm": fit.grad_norm,
            "deviation": fit.deviation,
            "ordering_violations": violations,
            "converged": fit.converged,
        }
        runs.append(run)
        if not fit.converged:
            if fit.deviation > tol:
                raise NonConvergenceError(
                    f"trial {trial}: gradient norm {fit.grad_norm:.3e} after {fit.steps} steps, "
                    f"deviation {fit.deviation:.3e} above {tol}",
                    report={"n": n, "trials": trials, "seed": seed, "runs": runs},
                )
            logger.warning(
                f"Trial {trial} hit the step cap with gradient norm {fit.grad_norm:.3e}; "
                f"deviation {fit.deviation:.3e} is within {tol}"
            )
        logger.info(
            f"Trial {trial}: {fit.steps} steps, deviation {fit.deviation:.3e}, violations {violations}"
        )

    return TheoremReport(
        n=n,
        trials=trials,
        seed=seed,
        max_softmax_deviation=max(r["deviation"] for r in runs),
        ordering_violations=sum(r["ordering_violations"] for r in runs),
        runs=tuple(runs),
    )
