import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.special import softmax

from graphmsl.scripts.dataio import (
    EmbeddingTable,
    MoleculePool,
    MoleculeRecord,
    load_checkpoint,
    save_checkpoint,
)
from graphmsl.scripts.encoder import EncoderConfig, embed_pool, encode_batch, init_params
from graphmsl.scripts.errors import (
    ConfigError,
    EmptyPoolError,
    MissingModalityError,
    NonConvergenceError,
    ShapeError,
)
from graphmsl.scripts.evalkit import retrieval_check
from graphmsl.scripts.fingerprint import ecfp_batch
from graphmsl.scripts.loss import LatentSimilarityConfig, graph_loss, latent_matrix, mean_row_entropy
from graphmsl.scripts.molgraph import featurize, parse_smiles
from graphmsl.scripts.similarity import fingerprint_self_similarity, pair_weight
from graphmsl.scripts.synthetic import synthetic_embeddings, synthetic_peaks, synthetic_pool
from graphmsl.scripts.trainer import (
    AdamState,
    ModalityInputs,
    TrainConfig,
    adam_step,
    epoch_mean_losses,
    minimize_latent,
    ordering_violations,
    pretrain,
    verify_theorem,
)

TINY_ENCODER = EncoderConfig(hidden_dim=16, depth=2, seed=3)


def tiny_config(**overrides) -> TrainConfig:
    settings = dict(learning_rate=0.01, epochs=3, batch_size=8, encoder=TINY_ENCODER, seed=1)
    settings.update(overrides)
    return TrainConfig(**settings)


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.epochs, cfg.batch_size, cfg.level) == (0.001, 200, 256, "graph")
    assert cfg.fusion.active() == ["fingerprint"]
    assert cfg.latent.mode == "scaled_cosine"
    assert cfg.encoder.hidden_dim == 300


def test_config_accepts_preset_names_and_lists():
    assert TrainConfig(fusion="fusion-nmr").fusion.nmr == 0.7
    assert TrainConfig(fusion=[0.25, 0.25, 0.25, 0.25]).fusion.image == 0.25


@pytest.mark.parametrize("overrides", [
    {"batch_size": 1},
    {"learning_rate": 0.0},
    {"level": "atom"},
    {"fusion": "unknown"},
    {"fusion": [0.5, 0.5, 0.5, 0.5]},
    {"tau1": -1.0},
    {"unexpected": 1},
])
def test_config_validation(overrides):
    with pytest.raises(ValidationError):
        TrainConfig(**overrides)


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    new, state = adam_step(params, {"w": np.zeros(2)}, AdamState.zeros(params), lr=0.1)
    np.testing.assert_array_equal(new["w"], params["w"])
    assert state.step == 1


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([3.0, -0.5, 1e-3])}
    new, _ = adam_step(params, grads, AdamState.zeros(params), lr=0.01)
    expected = 0.01 * np.abs(grads["w"]) / (np.abs(grads["w"]) + 1e-8)
    np.testing.assert_allclose(np.abs(new["w"] - params["w"]), expected, rtol=1e-9)


def test_adam_shape_errors():
    params = {"w": np.zeros(2)}
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros(3)}, AdamState.zeros(params), lr=0.1)
    with pytest.raises(ShapeError):
        adam_step(params, {"v": np.zeros(2)}, AdamState.zeros(params), lr=0.1)


def test_pretraining_reduces_loss():
    pool = synthetic_pool(8, seed=0)
    ckpt = pretrain(pool, ModalityInputs(), tiny_config(epochs=50))
    means = epoch_mean_losses(ckpt.loss_history)
    assert len(means) == 50
    assert means[49] < means[0]
    assert (ckpt.epoch, ckpt.next_batch, ckpt.adam_step) == (50, 0, 50)


def test_pretraining_is_deterministic():
    pool = synthetic_pool(12, seed=4)
    a = pretrain(pool, ModalityInputs(), tiny_config(batch_size=4))
    b = pretrain(pool, ModalityInputs(), tiny_config(batch_size=4))
    assert a.loss_history == b.loss_history
    assert a == b


def test_identical_molecules_start_at_log_batch_size():
    pool = MoleculePool(tuple(MoleculeRecord(f"m{k}", "CCO", parse_smiles("CCO")) for k in range(4)))
    cfg = tiny_config(epochs=1, batch_size=4, latent=LatentSimilarityConfig(mode="dot"))
    ckpt = pretrain(pool, ModalityInputs(), cfg)
    assert ckpt.loss_history[0].loss == pytest.approx(math.log(4), rel=1e-9)


def test_single_molecule_leftover_batch_is_dropped():
    pool = synthetic_pool(9, seed=2)
    ckpt = pretrain(pool, ModalityInputs(), tiny_config(epochs=1, batch_size=4))
    assert [r.batch for r in ckpt.loss_history] == [0, 1]


def test_resume_matches_uninterrupted_run(tmp_path):
    pool = synthetic_pool(12, seed=5)
    cfg = tiny_config(batch_size=4)
    full = pretrain(pool, ModalityInputs(), cfg)

    partial = pretrain(pool, ModalityInputs(), cfg, max_steps=4)
    assert (partial.epoch, partial.next_batch) == (1, 1)
    save_checkpoint(partial, tmp_path / "partial.gmsl")
    resumed = pretrain(pool, ModalityInputs(), cfg, resume=load_checkpoint(tmp_path / "partial.gmsl"))
    assert resumed == full


def test_resume_with_more_epochs():
    pool = synthetic_pool(8, seed=6)
    first = pretrain(pool, ModalityInputs(), tiny_config(epochs=2))
    longer = pretrain(pool, ModalityInputs(), tiny_config(epochs=4), resume=first)
    assert longer == pretrain(pool, ModalityInputs(), tiny_config(epochs=4))


def test_resume_rejects_other_config():
    pool = synthetic_pool(8, seed=6)
    first = pretrain(pool, ModalityInputs(), tiny_config(epochs=1))
    with pytest.raises(ConfigError):
        pretrain(pool, ModalityInputs(), tiny_config(epochs=2, learning_rate=0.5), resume=first)


def test_missing_inputs():
    pool = synthetic_pool(8, seed=0)
    with pytest.raises(MissingModalityError):
        pretrain(pool, ModalityInputs(), tiny_config(fusion="fusion-average"))
    with pytest.raises(MissingModalityError):
        pretrain(pool, ModalityInputs(), tiny_config(level="node"))
    with pytest.raises(EmptyPoolError):
        pretrain(MoleculePool(pool.records[:1]), ModalityInputs(), tiny_config())


def test_multimodal_bilevel_training():
    pool = synthetic_pool(16, seed=7)
    inputs = ModalityInputs(
        embeddings={m: synthetic_embeddings(pool, m, dim=8, seed=7) for m in ("smiles", "nmr", "image")},
        peaks=synthetic_peaks(pool, seed=7),
    )
    cfg = tiny_config(
        level="bilevel", fusion="fusion-average", epochs=2, latent=LatentSimilarityConfig(mode="dot")
    )
    ckpt = pretrain(pool, inputs, cfg)
    assert len(ckpt.loss_history) == 4
    assert all(math.isfinite(r.loss) and r.loss > 0 for r in ckpt.loss_history)


@pytest.mark.parametrize("node_pool", ["batch", "molecule"])
def test_node_level_training(node_pool):
    pool = synthetic_pool(8, seed=8)
    inputs = ModalityInputs(peaks=synthetic_peaks(pool, seed=8))
    cfg = tiny_config(level="node", node_pool=node_pool, epochs=2, latent=LatentSimilarityConfig(mode="dot"))
    ckpt = pretrain(pool, inputs, cfg)
    assert len(ckpt.loss_history) == 2
    assert all(math.isfinite(r.loss) for r in ckpt.loss_history)


@pytest.mark.parametrize("level", ["graph", "node"])
def test_narrow_encoder_trains_with_cosine_latents(level):
    pool = synthetic_pool(40, seed=0)
    inputs = ModalityInputs(peaks=synthetic_peaks(pool, seed=0))
    cfg = tiny_config(level=level, epochs=2, encoder=EncoderConfig(hidden_dim=2, depth=2, seed=0))
    assert cfg.latent.mode == "scaled_cosine"
    ckpt = pretrain(pool, inputs, cfg)
    assert len(ckpt.loss_history) == 10
    assert all(math.isfinite(r.loss) and math.isfinite(r.grad_norm) for r in ckpt.loss_history)


def test_oversized_batch_is_one_full_batch():
    pool = synthetic_pool(10, seed=12)
    exact = pretrain(pool, ModalityInputs(), tiny_config(epochs=2, batch_size=10))
    oversized = pretrain(pool, ModalityInputs(), tiny_config(epochs=2, batch_size=100))
    assert [(r.epoch, r.batch) for r in oversized.loss_history] == [(0, 0), (1, 0)]
    assert oversized.loss_history == exact.loss_history
    for name, value in exact.params.as_dict().items():
        np.testing.assert_array_equal(oversized.params.as_dict()[name], value)

    graphs = [record.graph for record in pool]
    T = pair_weight(fingerprint_self_similarity(ecfp_batch(graphs), pool.ids))
    encoded = encode_batch([featurize(g) for g in graphs], init_params(TINY_ENCODER), TINY_ENCODER)
    full = graph_loss(T, latent_matrix(encoded.graph_embeddings, LatentSimilarityConfig()))
    assert oversized.loss_history[0].loss == pytest.approx(full.item(), rel=1e-9)


def test_desk_scale_learning_signal():
    pool = synthetic_pool(200, seed=0)
    cfg = TrainConfig(
        learning_rate=0.01, epochs=40, batch_size=200, encoder=EncoderConfig(hidden_dim=64, seed=0)
    )
    ckpt = pretrain(pool, ModalityInputs(), cfg)
    means = epoch_mean_losses(ckpt.loss_history)

    graphs = [record.graph for record in pool]
    fps = ecfp_batch(graphs)
    # cross-entropy never drops below the target entropy
    floor = mean_row_entropy(pair_weight(fingerprint_self_similarity(fps, pool.ids)))
    assert means[39] - floor < 0.9 * (means[0] - floor)

    embeddings = embed_pool([featurize(g) for g in graphs], ckpt.params, ckpt.encoder_config)
    report = retrieval_check(embeddings, fps, seed=0)
    assert report.mean_nn_tanimoto > report.mean_random_tanimoto + 0.05


def test_permissive_fusion_with_partial_embeddings():
    pool = synthetic_pool(8, seed=9)
    table = synthetic_embeddings(pool, "smiles", dim=8, seed=9)
    partial = EmbeddingTable(modality="smiles", dim=8, rows={k: v for k, v in list(table.rows.items())[:5]})
    inputs = ModalityInputs(embeddings={"smiles": partial})
    with pytest.raises(MissingModalityError):
        pretrain(pool, inputs, tiny_config(fusion="fusion-smiles"))
    cfg = tiny_config(fusion=[0.5, 0.0, 0.0, 0.5], permissive=True, epochs=1)
    assert len(pretrain(pool, inputs, cfg).loss_history) == 1


def test_two_by_two_gap_is_log_three():
    T = np.array([[0.75, 0.25], [0.25, 0.75]])
    fit = minimize_latent(T)
    assert fit.D[0, 0] - fit.D[0, 1] == pytest.approx(math.log(3), abs=1e-4)
    assert fit.D[1, 1] - fit.D[1, 0] == pytest.approx(math.log(3), abs=1e-4)


def test_uniform_targets_are_already_optimal():
    fit = minimize_latent(np.full((5, 5), 0.2))
    assert fit.deviation < 1e-6
    assert fit.converged
    assert fit.steps == 0


def test_deviation_trace_shrinks():
    T = softmax(np.random.default_rng(0).normal(size=(6, 6)), axis=1)
    fit = minimize_latent(T, max_steps=2000)
    assert np.mean(fit.trace[-5:]) < np.mean(fit.trace[:5])
    assert np.allclose(softmax(fit.D, axis=1), T, atol=1e-3)


def test_ordering_violations():
    T = np.array([[0.5, 0.3, 0.2]])
    assert ordering_violations(T, np.array([[3.0, 2.0, 1.0]])) == 0
    assert ordering_violations(T, np.array([[1.0, 2.0, 3.0]])) == 3


def test_verify_theorem():
    report = verify_theorem(n=16, trials=10, seed=7)
    assert report.max_softmax_deviation < 1e-3
    assert report.ordering_violations == 0
    assert len(report.runs) == 10
    assert report.to_dict()["n"] == 16


def test_verify_theorem_step_cap():
    with pytest.raises(NonConvergenceError) as info:
        verify_theorem(n=8, trials=2, seed=0, max_steps=1, tol=1e-12)
    assert info.value.report["runs"][0]["steps"] == 1
    assert info.value.exit_code == 3


@pytest.mark.parametrize("n, trials", [(1, 3), (4, 0)])
def test_verify_theorem_rejects_bad_sizes(n, trials):
    with pytest.raises(ConfigError):
        verify_theorem(n=n, trials=trials, seed=0)
