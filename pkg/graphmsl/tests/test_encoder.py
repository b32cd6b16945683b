import numpy as np
import pytest
from pydantic import ValidationError

from graphmsl.scripts.diffcore import Tape, Tensor, backward, mul, sum_all
from graphmsl.scripts.encoder import (
    EncoderConfig,
    EncoderParams,
    embed_pool,
    encode,
    encode_batch,
    init_params,
    message_index_lists,
)
from graphmsl.scripts.errors import ShapeError
from graphmsl.scripts.molgraph import ATOM_FEATURE_DIM, BOND_FEATURE_DIM, featurize, parse_smiles, permute_atoms

SMALL = EncoderConfig(hidden_dim=8, depth=3, seed=5)


def relu(x):
    return np.maximum(x, 0.0)


def test_init_is_deterministic():
    a = init_params(SMALL)
    b = init_params(SMALL)
    for name, value in a.as_dict().items():
        np.testing.assert_array_equal(value, b.as_dict()[name])


def test_init_depends_on_seed():
    a = init_params(SMALL)
    b = init_params(SMALL.model_copy(update={"seed": 6}))
    assert not np.array_equal(a.W_in, b.W_in)


def test_param_shapes():
    p = init_params(EncoderConfig(hidden_dim=4))
    assert p.W_in.shape == (ATOM_FEATURE_DIM + BOND_FEATURE_DIM, 4)
    assert p.W_msg.shape == (4, 4)
    assert p.W_node.shape == (ATOM_FEATURE_DIM + 4, 4)


def test_params_reject_non_finite():
    p = init_params(SMALL).as_dict()
    p["W_msg"] = p["W_msg"].copy()
    p["W_msg"][0, 0] = np.nan
    with pytest.raises(ShapeError):
        EncoderParams.from_dict(p)


@pytest.mark.parametrize("field, value", [("hidden_dim", 0), ("depth", 0), ("readout", "max")])
def test_config_validation(field, value):
    with pytest.raises(ValidationError):
        EncoderConfig(**{field: value})


def test_single_atom_embedding():
    fg = featurize(parse_smiles("C"))
    p = init_params(SMALL)
    out = encode(fg, p, SMALL)
    x = fg.atom_features[0]
    expected = relu(np.concatenate([x, np.zeros(SMALL.hidden_dim)]) @ p.W_node)
    np.testing.assert_allclose(out.graph_embedding.data, expected, rtol=0, atol=1e-12)
    assert out.node_embeddings.shape == (1, SMALL.hidden_dim)


def test_two_atom_messages_skip_reverse_edge():
    fg = featurize(parse_smiles("CO"))
    out = encode(fg, init_params(SMALL), SMALL)
    assert message_index_lists(fg) == [[], []]
    # no other edge enters either source atom, so the update is relu(h0 + 0)
    np.testing.assert_array_equal(out.edge_states[1].data, out.edge_states[0].data)


def test_path_graph_totter_exclusion():
    fg = featurize(parse_smiles("CCO"))
    p = init_params(SMALL)
    # edge 2 is 1->2; edges entering atom 1 are 0 (0->1) and 3 (2->1, its reverse)
    assert message_index_lists(fg)[2] == [0]
    out = encode(fg, p, SMALL)
    h0 = out.edge_states[0].data
    expected = relu(h0[2] + h0[0] @ p.W_msg)
    np.testing.assert_allclose(out.edge_states[1].data[2], expected, rtol=0, atol=1e-12)


def test_permutation_invariance():
    g = parse_smiles("CC(=O)Nc1ccc(O)cc1")
    order = [int(i) for i in np.random.default_rng(11).permutation(len(g.atoms))]
    p = init_params(SMALL)
    a = encode(featurize(g), p, SMALL).graph_embedding.data
    b = encode(featurize(permute_atoms(g, order)), p, SMALL).graph_embedding.data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)


def test_sum_readout_scales_mean():
    fg = featurize(parse_smiles("CCN"))
    mean_cfg = SMALL
    sum_cfg = SMALL.model_copy(update={"readout": "sum"})
    p = init_params(SMALL)
    mean = encode(fg, p, mean_cfg).graph_embedding.data
    total = encode(fg, p, sum_cfg).graph_embedding.data
    np.testing.assert_allclose(total, 3 * mean, rtol=1e-12)


def test_batch_matches_single_encodes():
    graphs = [featurize(parse_smiles(s)) for s in ("C", "CCO", "c1ccccc1", "CC(=O)O")]
    p = init_params(SMALL)
    batch = encode_batch(graphs, p, SMALL)
    assert batch.atom_offsets == (0, 1, 4, 10)
    for k, fg in enumerate(graphs):
        single = encode(fg, p, SMALL)
        np.testing.assert_allclose(batch.graph_embeddings.data[k], single.graph_embedding.data, atol=1e-10)
        rows = slice(batch.atom_offsets[k], batch.atom_offsets[k] + fg.atom_count)
        np.testing.assert_allclose(batch.node_embeddings.data[rows], single.node_embeddings.data, atol=1e-10)


def test_shape_mismatch():
    fg = featurize(parse_smiles("CC"))
    with pytest.raises(ShapeError):
        encode(fg, init_params(EncoderConfig(hidden_dim=8)), EncoderConfig(hidden_dim=4))


def test_embed_pool_thread_invariance():
    graphs = [featurize(parse_smiles(s)) for s in ("C", "CCO", "c1ccccc1", "CCN", "OCCO")]
    p = init_params(SMALL)
    np.testing.assert_array_equal(embed_pool(graphs, p, SMALL, threads=1), embed_pool(graphs, p, SMALL, threads=4))
    assert embed_pool([], p, SMALL).shape == (0, SMALL.hidden_dim)


def test_encoder_gradients_match_finite_differences():
    cfg = EncoderConfig(hidden_dim=8, depth=2, seed=1)
    graphs = [featurize(parse_smiles(s)) for s in ("CCO", "c1ccncc1", "CC(=O)N")]
    params = init_params(cfg).as_dict()
    R = np.random.default_rng(0).normal(size=(len(graphs), cfg.hidden_dim))

    def loss_value(arrays):
        tensors = {name: Tensor(value) for name, value in arrays.items()}
        return sum_all(mul(encode_batch(graphs, tensors, cfg).graph_embeddings, Tensor(R))).item()

    with Tape():
        tensors = {name: Tensor(value, requires_grad=True) for name, value in params.items()}
        backward(sum_all(mul(encode_batch(graphs, tensors, cfg).graph_embeddings, Tensor(R))))

    rng = np.random.default_rng(1)
    eps = 1e-6
    for name, value in params.items():
        direction = rng.normal(size=value.shape)
        plus = dict(params, **{name: value + eps * direction})
        minus = dict(params, **{name: value - eps * direction})
        numeric = (loss_value(plus) - loss_value(minus)) / (2 * eps)
        analytic = float((tensors[name].grad * direction).sum())
        assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-8)
