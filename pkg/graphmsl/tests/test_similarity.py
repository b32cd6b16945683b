import math

import numpy as np
import pytest

from graphmsl.scripts.errors import (
    ConfigError,
    CorruptionError,
    DataError,
    EmptyPoolError,
    IdMismatchError,
    MissingModalityError,
    NonPositiveTemperatureError,
    WeightSumError,
    ZeroNormError,
)
from graphmsl.scripts.fingerprint import Fingerprint, ecfp, tanimoto
from graphmsl.scripts.molgraph import parse_smiles
from graphmsl.scripts.similarity import (
    FUSION_PRESETS,
    FusionWeights,
    SelfSimilarityMatrix,
    TargetSimilarityMatrix,
    cosine_self_similarity,
    fingerprint_self_similarity,
    fuse,
    fuse_available,
    load_matrix,
    node_target_matrix,
    pair_weight,
    ppm_self_similarity,
    save_matrix_bin,
    save_matrix_csv,
)


def random_targets(n, seed, ids=None):
    values = np.random.default_rng(seed).dirichlet(np.ones(n), size=n)
    return TargetSimilarityMatrix(values=values, ids=ids or tuple("abcdefgh"[:n]))


def test_cosine_values():
    S = cosine_self_similarity([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0], [3.0, 0.0]], ["a", "b", "c", "d"])
    assert S.values[0, 1] == pytest.approx(math.sqrt(2) / 2, abs=1e-8)
    assert S.values[0, 2] == pytest.approx(0.0, abs=1e-15)
    assert S.values[0, 3] == pytest.approx(1.0)
    np.testing.assert_array_equal(np.diag(S.values), 1.0)
    np.testing.assert_array_equal(S.values, S.values.T)


def test_cosine_thread_invariance():
    vectors = np.random.default_rng(0).normal(size=(7, 5))
    ids = [str(i) for i in range(7)]
    a = cosine_self_similarity(vectors, ids, threads=1).values
    b = cosine_self_similarity(vectors, ids, threads=3).values
    np.testing.assert_array_equal(a, b)


def test_cosine_zero_vector():
    with pytest.raises(ZeroNormError):
        cosine_self_similarity([[1.0, 0.0], [0.0, 0.0]], ["a", "b"])


def test_fingerprint_matrix_matches_pairwise_tanimoto():
    fps = [ecfp(parse_smiles(s)) for s in ("CCO", "CCN", "c1ccccc1")]
    S = fingerprint_self_similarity(fps, ["a", "b", "c"])
    for i in range(3):
        for j in range(3):
            assert S.values[i, j] == tanimoto(fps[i], fps[j])


def test_fingerprint_matrix_edge_cases():
    same = fingerprint_self_similarity([Fingerprint.from_indices([1, 5])] * 3, ["a", "b", "c"])
    np.testing.assert_array_equal(same.values, np.ones((3, 3)))
    disjoint = fingerprint_self_similarity(
        [Fingerprint.from_indices([1]), Fingerprint.from_indices([2])], ["a", "b"]
    )
    assert disjoint.values[0, 1] == 0.0


def test_ppm_similarity():
    assert ppm_self_similarity(42.0, 42.0) == 1.0
    assert ppm_self_similarity(10.0, 19.0) == pytest.approx(0.1)
    assert ppm_self_similarity(0.0, 0.0, tau1=2.0, tau2=3.0) == pytest.approx(1.5)
    with pytest.raises(NonPositiveTemperatureError):
        ppm_self_similarity(0.0, 1.0, tau1=0.0)


def test_pair_weight_constant_row():
    S = SelfSimilarityMatrix(values=np.full((4, 4), 0.3), modality="smiles", ids=tuple("abcd"))
    np.testing.assert_allclose(pair_weight(S).values, 0.25)


def test_pair_weight_log_two():
    S = SelfSimilarityMatrix(values=[[math.log(2), 0.0], [0.0, math.log(2)]], modality="nmr", ids=("a", "b"))
    T = pair_weight(S)
    np.testing.assert_allclose(T.values[0], [2 / 3, 1 / 3])
    assert T.modality == "nmr"


def test_pair_weight_preserves_row_order():
    values = np.random.default_rng(1).random((6, 6))
    S = SelfSimilarityMatrix(values=(values + values.T) / 2, modality="image", ids=tuple("abcdef"))
    T = pair_weight(S).values
    for i in range(6):
        np.testing.assert_array_equal(np.argsort(S.values[i]), np.argsort(T[i]))


def test_pair_weight_exclude_self():
    S = SelfSimilarityMatrix(values=np.eye(3), modality="smiles", ids=tuple("abc"))
    T = pair_weight(S, exclude_self=True).values
    np.testing.assert_array_equal(np.diag(T), 0.0)
    np.testing.assert_allclose(T.sum(axis=1), 1.0)
    with pytest.raises(EmptyPoolError):
        pair_weight(SelfSimilarityMatrix(values=[[1.0]], modality="smiles", ids=("a",)), exclude_self=True)


def test_pair_weight_rows_over_random_matrices():
    rng = np.random.default_rng(13)
    asymmetric = 0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        A = rng.normal(scale=2.0, size=(n, n))
        ids = tuple(f"m{k}" for k in range(n))
        S = SelfSimilarityMatrix(values=(A + A.T) / 2, modality="smiles", ids=ids)
        T = pair_weight(S).values
        np.testing.assert_allclose(T.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(T > 0)
        shifted = SelfSimilarityMatrix(values=S.values + rng.uniform(-20.0, 20.0), modality="smiles", ids=ids)
        np.testing.assert_allclose(pair_weight(shifted).values, T, rtol=1e-9, atol=1e-15)
        asymmetric += not np.allclose(T, T.T)
    assert asymmetric >= 990


def test_self_similarity_must_be_symmetric():
    with pytest.raises(DataError):
        SelfSimilarityMatrix(values=[[1.0, 0.2], [0.3, 1.0]], modality="smiles", ids=("a", "b"))


def test_target_rows_must_sum_to_one():
    with pytest.raises(DataError):
        TargetSimilarityMatrix(values=[[0.5, 0.4], [0.5, 0.5]], ids=("a", "b"))


def test_presets():
    assert FusionWeights.from_preset("fusion-smiles").as_tuple() == (0.7, 0.1, 0.1, 0.1)
    assert FusionWeights.from_preset("fusion-average").as_tuple() == (0.25, 0.25, 0.25, 0.25)
    assert FusionWeights.from_preset("fingerprint").active() == ["fingerprint"]
    assert len(FUSION_PRESETS) == 9
    with pytest.raises(ConfigError):
        FusionWeights.from_preset("fusion-everything")


def test_weight_parsing():
    assert FusionWeights.parse("0.7,0.1,0.1,0.1").as_tuple() == (0.7, 0.1, 0.1, 0.1)
    with pytest.raises(WeightSumError):
        FusionWeights.parse("0.7,0.1,0.1,0.2")
    with pytest.raises(WeightSumError):
        FusionWeights(1.2, -0.2, 0.0, 0.0)
    with pytest.raises(ConfigError):
        FusionWeights.parse("0.5,0.5")
    with pytest.raises(ConfigError):
        FusionWeights.parse("a,b,c,d")


def test_fuse_single_modality_is_identity():
    T = random_targets(4, 0)
    fused = fuse({"nmr": T}, FusionWeights.from_preset("nmr"))
    np.testing.assert_array_equal(fused.values, T.values)
    assert fused.modality == "nmr"


def test_fuse_identical_matrices():
    T = random_targets(5, 1)
    fused = fuse([T, T, T, T], (0.4, 0.3, 0.2, 0.1))
    np.testing.assert_allclose(fused.values, T.values, atol=1e-14)
    assert fused.modality == "fused"


def test_fuse_rows_sum_to_one():
    mats = [random_targets(6, seed) for seed in range(4)]
    fused = fuse(mats, FusionWeights.from_preset("fusion-average"))
    np.testing.assert_allclose(fused.values.sum(axis=1), 1.0, atol=1e-9)


def test_fuse_errors():
    T = random_targets(3, 2)
    with pytest.raises(MissingModalityError):
        fuse({"smiles": T}, FusionWeights.from_preset("fusion-smiles"))
    other = random_targets(3, 3, ids=("x", "y", "z"))
    with pytest.raises(IdMismatchError):
        fuse({"smiles": T, "nmr": other}, (0.5, 0.5, 0.0, 0.0))


def test_fuse_available_renormalizes_per_anchor():
    ids = ("a", "b", "c")
    full = random_targets(3, 4, ids=ids)
    partial = TargetSimilarityMatrix(values=[[0.5, 0.5], [0.5, 0.5]], ids=("a", "b"))
    fused = fuse_available({"fingerprint": full, "nmr": partial}, ids, (0.0, 0.5, 0.0, 0.5))
    np.testing.assert_allclose(fused.values.sum(axis=1), 1.0, atol=1e-12)
    # c has only the fingerprint matrix
    np.testing.assert_allclose(fused.values[2], full.values[2])
    np.testing.assert_allclose(fused.values[0, :2], 0.5 * full.values[0, :2] + 0.25)


def test_node_targets():
    np.testing.assert_allclose(node_target_matrix([30.0, 30.0]).values, 0.5)
    row = node_target_matrix([0.0, 10.0, 200.0]).values[0]
    assert row[0] > row[1] > row[2]
    T = node_target_matrix(np.random.default_rng(5).uniform(0, 220, size=9))
    np.testing.assert_allclose(T.values.sum(axis=1), 1.0, atol=1e-9)
    with pytest.raises(EmptyPoolError):
        node_target_matrix([])


def test_csv_round_trip(tmp_path):
    T = random_targets(4, 6)
    path = tmp_path / "t.csv"
    save_matrix_csv(path, T)
    ids, values, modality = load_matrix(path)
    assert ids == T.ids
    assert modality is None
    np.testing.assert_array_equal(values, T.values)


def test_binary_round_trip(tmp_path):
    S = cosine_self_similarity(np.random.default_rng(7).normal(size=(3, 4)), ["p", "q", "r"], modality="image")
    path = tmp_path / "s.bin"
    save_matrix_bin(path, S)
    ids, values, modality = load_matrix(path)
    assert ids == ("0", "1", "2")
    assert modality == "image"
    np.testing.assert_array_equal(values, S.values)

    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CorruptionError):
        load_matrix(path)
