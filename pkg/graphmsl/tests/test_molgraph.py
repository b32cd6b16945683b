import numpy as np
import pytest

from graphmsl.scripts.errors import (
    DataError,
    FragmentError,
    RingClosureError,
    SmilesSyntaxError,
    UnknownElementError,
    ValenceError,
)
from graphmsl.scripts.molgraph import (
    ATOM_FEATURE_DIM,
    BOND_FEATURE_DIM,
    FEATURE_ELEMENTS,
    BondOrder,
    featurize,
    graph_stats,
    heavy_atom_count,
    parse_smiles,
    permute_atoms,
)
from graphmsl.scripts.synthetic import synthetic_smiles

TEN_ATOM = "CC(=O)Nc1ccc(O)cc1"  # paracetamol, 11 heavy atoms


def test_methane():
    g = parse_smiles("C")
    assert len(g.atoms) == 1
    assert g.bonds == ()
    assert g.atoms[0].element == "C"
    assert g.atoms[0].implicit_h == 4


def test_ethanol_chain():
    g = parse_smiles("CCO")
    assert [a.element for a in g.atoms] == ["C", "C", "O"]
    assert len(g.bonds) == 2
    assert all(b.order is BondOrder.SINGLE for b in g.bonds)
    assert len(g.directed_edges) == 4


def test_benzene_is_aromatic():
    g = parse_smiles("c1ccccc1")
    assert len(g.atoms) == 6
    assert all(a.aromatic for a in g.atoms)
    assert len(g.bonds) == 6
    assert all(b.order is BondOrder.AROMATIC and b.in_ring for b in g.bonds)
    assert all(a.implicit_h == 1 for a in g.atoms)


def test_directed_edge_pairs():
    g = parse_smiles("CCO")
    for k, bond in enumerate(g.bonds):
        forward, backward = g.directed_edges[2 * k], g.directed_edges[2 * k + 1]
        assert (forward.source, forward.target) == (bond.a, bond.b)
        assert (backward.source, backward.target) == (bond.b, bond.a)
        assert forward.reverse == 2 * k + 1
        assert backward.reverse == 2 * k


def test_biphenyl_link_is_single():
    g = parse_smiles("c1ccccc1-c1ccccc1")
    links = [b for b in g.bonds if not b.in_ring]
    assert len(links) == 1
    assert links[0].order is BondOrder.SINGLE


def test_bracket_atom():
    g = parse_smiles("[13CH3+]")
    atom = g.atoms[0]
    assert (atom.element, atom.isotope, atom.explicit_h, atom.formal_charge) == ("C", 13, 3, 1)
    assert atom.implicit_h == 0


def test_explicit_bond_orders():
    g = parse_smiles("C=CC#N")
    assert [b.order for b in g.bonds] == [BondOrder.DOUBLE, BondOrder.SINGLE, BondOrder.TRIPLE]


@pytest.mark.parametrize("text, error", [
    ("C1CC", RingClosureError),
    ("C(C", SmilesSyntaxError),
    ("CC)", SmilesSyntaxError),
    ("C=", SmilesSyntaxError),
    ("", SmilesSyntaxError),
    ("C C", SmilesSyntaxError),
    ("[Xx]", UnknownElementError),
    ("CQ", UnknownElementError),
    ("CC.O", FragmentError),
])
def test_parse_errors(text, error):
    with pytest.raises(error):
        parse_smiles(text)


def test_smiles_errors_are_data_errors():
    with pytest.raises(DataError):
        parse_smiles("C1CC")


def test_strict_valence():
    text = "CC(C)(C)(C)C"  # pentavalent carbon
    parse_smiles(text)
    with pytest.raises(ValenceError):
        parse_smiles(text, strict_valence=True)


def test_keep_largest_fragment():
    g = parse_smiles("CCO.[Na+]", keep_largest_fragment=True)
    assert [a.element for a in g.atoms] == ["C", "C", "O"]
    assert g.multi_fragment


@pytest.mark.parametrize("text, count", [("C", 1), ("CCO", 3), ("c1ccccc1", 6)])
def test_heavy_atom_count(text, count):
    assert heavy_atom_count(parse_smiles(text)) == count


def test_featurize_methane():
    fg = featurize(parse_smiles("C"))
    assert fg.atom_features.shape == (1, ATOM_FEATURE_DIM)
    element_block = fg.atom_features[0, : len(FEATURE_ELEMENTS) + 1]
    assert element_block.sum() == 1.0
    assert element_block[FEATURE_ELEMENTS.index("C")] == 1.0
    assert fg.bond_features.shape == (0, BOND_FEATURE_DIM)
    assert fg.incidence == ((),)


def test_featurize_ethanol():
    fg = featurize(parse_smiles("CCO"))
    assert fg.bond_features.shape == (2, BOND_FEATURE_DIM)
    assert fg.edge_count == 4
    assert fg.edge_reverse == (1, 0, 3, 2)
    # the middle carbon receives one edge from each neighbour
    assert sorted(fg.edge_sources[e] for e in fg.incidence[1]) == [0, 2]


def test_featurize_is_deterministic_and_read_only():
    a = featurize(parse_smiles(TEN_ATOM))
    b = featurize(parse_smiles(TEN_ATOM))
    np.testing.assert_array_equal(a.atom_features, b.atom_features)
    np.testing.assert_array_equal(a.bond_features, b.bond_features)
    assert a.incidence == b.incidence
    with pytest.raises(ValueError):
        a.atom_features[0, 0] = 5.0


def test_permute_atoms_keeps_molecule():
    g = parse_smiles(TEN_ATOM)
    order = list(reversed(range(len(g.atoms))))
    p = permute_atoms(g, order)
    assert sorted(a.element for a in p.atoms) == sorted(a.element for a in g.atoms)
    assert len(p.bonds) == len(g.bonds)
    assert p.atoms[0] == g.atoms[-1]


def test_permute_atoms_rejects_non_permutation():
    g = parse_smiles("CCO")
    with pytest.raises(DataError):
        permute_atoms(g, [0, 0, 1])


def test_graph_stats():
    stats = graph_stats(parse_smiles("c1ccccc1O"))
    assert stats["atoms"] == 7
    assert stats["bonds"] == 7
    assert stats["directed_edges"] == 14
    assert stats["aromatic_atoms"] == 6
    assert stats["rings"] == 1


MALFORMED = [
    "", "((", "[", "]", "[]", "%", "%1", "C%1", "C%", "1C", "C==C", "C.", ".C", "C..C", "c1cc",
    "[Xx]", "é", "C C", "C((C))", "C(C", "C)", "[C@@H+2:12]", "[C:]", "[13CH3+]", "[H+]",
    "[2H]", "C(=O)(=O)(=O)=O", "C1CC1C1", "C11", "C=1CC-1", "[nH]1cccc1", "[se]1cccc1",
    "[cl]", "Clc1ccccc1Br", "C%12CC%12", "[C+++]", "[C+-]", "[CH9]", "*", "C*", "l", "CBrr",
]
ALPHABET = "CNOSPFIBrlcnos()[]=#%0123456789@+-H.:*"


def smiles_corpus(seed=0):
    rng = np.random.default_rng(seed)
    valid = synthetic_smiles(30, seed=seed) + ["c1ccccc1", "CC(=O)O", TEN_ATOM, "OC(=O)C1CC1"]
    corpus = list(MALFORMED)
    while len(corpus) < 100:
        text = valid[int(rng.integers(len(valid)))]
        k = int(rng.integers(0, len(text) + 1))
        operation = int(rng.integers(3))
        if operation == 0:
            text = text[:k] + text[k + 1 :]
        elif operation == 1:
            text = text[:k] + ALPHABET[int(rng.integers(len(ALPHABET)))] + text[k:]
        else:
            text = text[:k]
        corpus.append(text)
    return corpus


def test_parser_never_crashes_on_corpus():
    parsed = 0
    for k, text in enumerate(smiles_corpus()):
        try:
            g = parse_smiles(text, strict_valence=k % 2 == 0, keep_largest_fragment=k % 3 == 0)
        except DataError:
            continue
        parsed += 1
        fg = featurize(g)
        assert fg.atom_features.shape == (len(g.atoms), ATOM_FEATURE_DIM)
        assert fg.bond_features.shape == (len(g.bonds), BOND_FEATURE_DIM)
    assert 0 < parsed < 100
