import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crnreduce.benchmarks import h2o2_mechanism, h2o2_text
from crnreduce.mechanism import (
    Mechanism,
    MechanismError,
    Reaction,
    build_stoichiometric_matrix,
    load_mechanism,
    mechanism_digest,
    parse_mechanism,
    restrict,
    serialize_mechanism,
)


def test_single_unimolecular_reaction():
    mech = parse_mechanism("species: A B\nA -> B ; k=2.0\n")
    assert mech.M.tolist() == [[-1], [1]]
    assert mech.rate_constants.tolist() == [2.0]
    assert mech.species_names == ["A", "B"]


def test_third_body_cancels_in_net_column():
    mech = parse_mechanism("species: H H2 M_\n2 H + M_ -> H2 + M_ ; k=1.5\n")
    assert mech.M[:, 0].tolist() == [-2, 1, 0]
    # the collider still enters the rate law
    assert mech.reactant_orders[0].tolist() == [2, 0, 1]


def test_undeclared_species_named_with_line():
    text = "species: A B\n# comment\nA -> B ; k=1\nA + C -> B ; k=1\n"
    with pytest.raises(MechanismError) as info:
        parse_mechanism(text)
    assert "'C'" in str(info.value)
    assert info.value.line == 4
    assert "line 4" in str(info.value)


@pytest.mark.parametrize(
    "line, fragment",
    [
        ("A -> B ; k=0", "positive"),
        ("A -> B ; k=-1.0", "positive"),
        ("A -> B", "missing rate constant"),
        ("1.5 A -> B ; k=1", "positive integer"),
        ("A -> B -> A ; k=1", "'->'"),
        ("-> B ; k=1", "no reactants"),
        ("A -> B ; k=1 ; fast", "unknown attribute"),
        ("A -> B ; k=abc", "bad rate constant"),
        ("A + -> B ; k=1", "cannot parse"),
    ],
)
def test_reaction_line_errors(line, fragment):
    with pytest.raises(MechanismError, match=fragment):
        parse_mechanism(f"species: A B\n{line}\n")


def test_species_declaration_errors():
    with pytest.raises(MechanismError, match="duplicate species"):
        parse_mechanism("species: A B A\n")
    with pytest.raises(MechanismError, match="before species"):
        parse_mechanism("A -> B ; k=1\nspecies: A B\n")
    with pytest.raises(MechanismError, match="no species"):
        parse_mechanism("# nothing here\n")
    with pytest.raises(MechanismError, match="invalid species"):
        parse_mechanism("species: A 2B\n")


def test_source_reaction_and_blank_lines():
    mech = parse_mechanism("species: A\n\n -> A ; k=0.5 ; source\nA -> ; k=1\n")
    assert mech.M.tolist() == [[1, -1]]
    assert mech.reactions[0].source
    assert mech.reactions[1].products == {}


def test_stoichiometric_matrix_examples():
    rev = parse_mechanism("species: A B\nA -> B ; k=1\nB -> A ; k=1\n")
    assert rev.M.tolist() == [[-1, 1], [1, -1]]
    abc = parse_mechanism("species: A B C\nA + B -> C ; k=1\n")
    assert abc.M[:, 0].tolist() == [-1, -1, 1]
    empty = build_stoichiometric_matrix(abc.species, [])
    assert empty.shape == (3, 0)


def test_column_sums_match_molecule_counts():
    mech = h2o2_mechanism()
    for r in mech.reactions:
        assert mech.M[:, r.id].sum() == sum(r.products.values()) - sum(r.reactants.values())


def test_builtin_is_atom_balanced():
    mech = h2o2_mechanism()
    atoms = {"H2": (2, 0), "O2": (0, 2), "H": (1, 0), "O": (0, 1), "OH": (1, 1),
             "H2O": (2, 1), "HO2": (1, 2), "H2O2": (2, 2)}
    E = np.array([atoms[n] for n in mech.species_names]).T
    assert mech.n_species == 8 and mech.n_reactions == 58
    assert not np.any(E @ mech.M)


def test_mechanism_is_immutable():
    mech = parse_mechanism("species: A B\nA -> B ; k=1\n")
    with pytest.raises(ValueError):
        mech.M[0, 0] = 5


def test_reaction_validation():
    with pytest.raises(MechanismError):
        Reaction(0, {0: 1}, {1: 1}, 0.0)
    with pytest.raises(MechanismError):
        Reaction(0, {0: 0}, {1: 1}, 1.0)
    with pytest.raises(MechanismError):
        Reaction(0, {}, {1: 1}, 1.0)
    with pytest.raises(MechanismError, match="out of range"):
        Mechanism.from_parts(["A"], [Reaction(0, {0: 1}, {3: 1}, 1.0)])


def test_restrict_examples():
    mech = parse_mechanism("species: A B C\nA -> B ; k=1\nB -> C ; k=2\nC -> A ; k=3\n")
    sub, mapping = restrict(mech, {0, 2})
    assert sub.n_reactions == 2
    assert np.array_equal(sub.M, mech.M[:, [0, 2]])
    assert mapping == {0: 0, 2: 1}
    assert sub.rate_constants.tolist() == [1.0, 3.0]
    full, ident = restrict(mech, range(3))
    assert full == mech and ident == {0: 0, 1: 1, 2: 2}
    none, _ = restrict(mech, set())
    assert none.n_reactions == 0 and none.M.shape == (3, 0)
    assert none.species_names == mech.species_names
    with pytest.raises(IndexError):
        restrict(mech, {3})


def test_restrict_idempotent():
    mech = h2o2_mechanism()
    sub, _ = restrict(mech, {1, 5, 9, 40})
    again, _ = restrict(sub, range(sub.n_reactions))
    assert again == sub


def test_builtin_round_trip_and_digest(tmp_path):
    mech = parse_mechanism(h2o2_text())
    text = serialize_mechanism(mech)
    assert parse_mechanism(text) == mech
    path = tmp_path / "m.mech"
    path.write_text(text)
    assert load_mechanism(path) == mech
    assert mechanism_digest(load_mechanism(path)) == mechanism_digest(mech)


_names = st.lists(st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,4}", fullmatch=True), min_size=1, max_size=6, unique=True)


@st.composite
def mechanism_texts(draw):
    names = draw(_names)
    lines = ["species: " + " ".join(names)]
    for _ in range(draw(st.integers(0, 6))):
        def side(min_size):
            picks = draw(st.lists(st.sampled_from(names), min_size=min_size, max_size=3, unique=True))
            return " + ".join(
                (f"{c} {n}" if (c := draw(st.integers(1, 3))) > 1 else n) for n in picks
            )
        k = draw(st.floats(min_value=1e-6, max_value=1e6, allow_nan=False))
        lines.append(f"{side(1)} -> {side(0)} ; k={k!r}")
    return "\n".join(lines) + "\n"


@given(mechanism_texts())
def test_serialize_round_trip(text):
    mech = parse_mechanism(text)
    again = parse_mechanism(serialize_mechanism(mech))
    assert again == mech
    assert again.rate_constants.tolist() == mech.rate_constants.tolist()
