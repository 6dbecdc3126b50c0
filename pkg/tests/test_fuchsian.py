import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weyllab import fuchsian as F
from weyllab.errors import GeneratorFileError, InvalidGroup
from weyllab.geometry import MoebiusElement, translation_length

SYSTOLE = 2.0 * math.acosh(1.0 + math.sqrt(2.0))

# (length, number of oriented classes) for Bolza up to 8, counted with the tile oracle
BOLZA_SPECTRUM = [(3.05714, 24), (4.89690, 24), (5.82807, 48), (6.11428, 24), (6.67201, 96),
                  (7.10738, 48), (7.26316, 48), (7.59569, 8), (7.88069, 96)]

letters4 = st.sampled_from([1, -1, 2, -2, 3, -3, 4, -4])


@st.composite
def reduced_words(draw, min_size=1, max_size=8):
    w = draw(st.lists(letters4, min_size=min_size, max_size=max_size))
    r = F.GroupWord.reduce(w)
    if len(r) < min_size:
        r = F.GroupWord((1,))
    return r


# ---------------------------------------------------------------- generator files

def test_data_file_round_trip(bolza):
    text = F.format_generators(bolza)
    again = F.parse_generators(text, name="bolza")
    assert F.format_generators(again) == text
    for g, h in zip(bolza.generators, again.generators):
        assert (g.a, g.b, g.c, g.d) == (h.a, h.b, h.c, h.d)
    assert bolza.rank == 4 and bolza.name == "bolza"


def test_data_file_matches_exact_construction(bolza):
    exact = F.bolza_generators_exact()
    for g, h in zip(bolza.generators, exact):
        assert np.abs(g.matrix - np.array(h, dtype=float).reshape(2, 2)).max() < 1e-15


def test_relations_hold(bolza):
    for r in bolza.relationWords:
        m = F.evaluate_word(bolza, F.GroupWord(r)).matrix
        assert min(np.abs(m - np.eye(2)).max(), np.abs(m + np.eye(2)).max()) < 1e-9


def test_parse_errors():
    with pytest.raises(GeneratorFileError, match="line 2"):
        F.parse_generators("2 0 0 0.5\n1 2 3\n")
    with pytest.raises(GeneratorFileError, match="line 1"):
        F.parse_generators("2 0 0 0.6\n")
    with pytest.raises(GeneratorFileError, match="unknown generator"):
        F.parse_generators("2 0 0 0.5\nrel: 1 2\n")
    with pytest.raises(GeneratorFileError, match="parabolic"):
        F.parse_generators("1 1 0 1\n")
    with pytest.raises(GeneratorFileError, match="relation"):
        F.parse_generators("2 0 0 0.5\n1 1 1 2\nrel: 1 2\n")


def test_save_load(tmp_path, bolza):
    p = tmp_path / "g.gens"
    F.save_generators(bolza, p)
    again = F.load_generators(p)
    assert all(np.array_equal(a.matrix, b.matrix) for a, b in zip(again.generators, bolza.generators))
    assert F.resolve_surface(str(p)).rank == 4


def test_validate_detects_bad_relation(bolza):
    gs = F.GeneratorSet(bolza.generators, ((1, 2),), "x")
    with pytest.raises(InvalidGroup):
        gs.validate()


# ---------------------------------------------------------------- words

def test_word_basics():
    with pytest.raises(ValueError):
        F.GroupWord((1, -1))
    with pytest.raises(ValueError):
        F.GroupWord((0,))
    w = F.GroupWord.parse("1 -2 3")
    assert str(w) == "1 -2 3"
    assert w * w.inverse() == F.GroupWord(())
    assert F.GroupWord((-1, 2, 3, 1)).cyclic_reduction() == F.GroupWord((2, 3))


def test_primitive_decomposition_examples():
    assert F.primitive_decomposition(F.GroupWord((1,))) == (F.GroupWord((1,)), 1)
    assert F.primitive_decomposition(F.GroupWord((1, 2, 1, 2))) == (F.GroupWord((1, 2)), 2)


@settings(max_examples=200, deadline=None)
@given(reduced_words(), st.integers(1, 4))
def test_primitive_round_trip(w, k):
    w = w.cyclic_reduction()
    root, j = F.primitive_decomposition(w)
    wk = w.power(k)
    r2, k2 = F.primitive_decomposition(wk)
    assert r2 == root and k2 == j * k


@settings(max_examples=200, deadline=None)
@given(reduced_words(), st.integers(0, 7))
def test_canonical_is_rotation_invariant(w, s):
    w = w.cyclic_reduction()
    n = len(w)
    rot = F.GroupWord(w.letters[s % n:] + w.letters[: s % n])
    assert rot.canonical() == w.canonical()
    assert w.inverse().inverse() == w


def _brute_classes(rank, n):
    lets = [s * k for k in range(1, rank + 1) for s in (1, -1)]
    seen = set()
    for m in range(1, n + 1):
        for w in itertools.product(lets, repeat=m):
            if any(w[j] == -w[(j + 1) % m] for j in range(m)) and m > 1:
                continue
            seen.add(frozenset(w[k:] + w[:k] for k in range(m)))
    return len(seen)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_class_enumeration_vs_brute_force(bolza, n):
    got = list(F.enumerate_conjugacy_classes(bolza, n))
    assert len(got) == _brute_classes(4, n)
    assert len(set(got)) == len(got)
    if n == 1:
        assert len(got) == 8


# ---------------------------------------------------------------- Dirichlet domain and spectrum

def test_dirichlet_domain(bolza_domain):
    assert len(bolza_domain.vertices) == 8
    assert bolza_domain.area == pytest.approx(4 * math.pi, rel=1e-9)
    assert bolza_domain.covering_radius == pytest.approx(math.acosh((1 + math.sqrt(2)) ** 2), abs=1e-9)


def test_spectrum_values_and_multiplicities(spec8):
    vals, mult = spec8.distinctLengths
    assert len(vals) == len(BOLZA_SPECTRUM)
    for (L, m), v, k in zip(BOLZA_SPECTRUM, vals, mult):
        assert v == pytest.approx(L, abs=1e-5)
        assert k == m
    assert vals[0] == pytest.approx(SYSTOLE, abs=1e-12)
    assert spec8.certificate["stabilized"]


def test_spectrum_matches_tile_oracle(bolza, bolza_domain, spec6):
    oracle = F.axis_tile_measure(bolza, 6.0, bolza_domain)
    vals, _ = spec6.distinctLengths
    # sum over classes of 1/power, per length
    for v in vals:
        sel = np.abs(spec6.lengths - v) < 1e-7
        expected = float(np.sum(1.0 / spec6.powers[sel]))
        got = sum(x for key, x in oracle.items() if abs(key - v) < 1e-6)
        assert got == pytest.approx(expected, abs=1e-4)
    assert all(any(abs(key - v) < 1e-6 for v in vals) for key in oracle)


def test_spectrum_entries_verified(bolza, spec8):
    assert F.verify_spectrum(bolza, spec8) < 1e-12
    for e in spec8.entries:
        if e.power > 1:
            assert e.length == pytest.approx(e.power * e.primitiveLength, rel=1e-13)
            root, k = F.primitive_decomposition(e.canonicalWord)
            assert k == e.power


def test_powers(spec8):
    imp = [e for e in spec8.entries if e.power > 1]
    assert len(imp) == 24 and all(e.power == 2 for e in imp)
    assert all(e.length == pytest.approx(2 * SYSTOLE, abs=1e-12) for e in imp)


def test_inverse_symmetry(bolza, spec8):
    # every class's inverse is again a class of the spectrum (found among retained conjugates)
    idx = F.ElementIndex()
    owner = []
    for j, mats in enumerate(spec8.conjugates):
        ids, _ = idx.add(mats, len(owner))
        owner.extend([j] * len(mats))
    for j, e in enumerate(spec8.entries):
        inv = np.linalg.inv(spec8.conjugates[j])
        hit = idx.lookup(inv)
        assert np.any(hit >= 0)
        k = owner[int(hit[hit >= 0][0])]
        assert spec8.entries[k].length == pytest.approx(e.length, abs=1e-9)
    assert len({e.canonicalWord for e in spec8.entries}) == len(spec8)


def test_conjugation_invariance(bolza, spec6, rng):
    for e in spec6.entries[:40]:
        # the trace of h w h^-1 carries rounding of size eps |h|^2 |w|, so the
        # tolerance scales with the entries of the conjugated matrix
        h = F.GroupWord.reduce(rng.choice([1, -1, 2, -2, 3, -3, 4, -4], size=3).tolist())
        c = F.evaluate_word(bolza, h * e.canonicalWord * h.inverse())
        tol = max(1e-12, 8 * np.finfo(float).eps * np.abs(c.matrix).max() ** 2)
        assert translation_length(c) == pytest.approx(e.length, abs=tol)


def test_spectrum_edge_cases(bolza, bolza_domain, spec6):
    assert len(F.build_length_spectrum(bolza, 3.0, domain=bolza_domain)) == 0
    ls = F.build_length_spectrum(bolza, 3.2, domain=bolza_domain)
    assert ls.lengths.min() == pytest.approx(SYSTOLE, abs=1e-12)
    s4 = {e.canonicalWord for e in F.build_length_spectrum(bolza, 4.0, domain=bolza_domain).entries}
    s5 = {e.canonicalWord for e in F.build_length_spectrum(bolza, 5.0, domain=bolza_domain).entries}
    assert s4 <= s5
    t = spec6.truncated(5.0)
    assert {e.canonicalWord for e in t.entries} == s5
    with pytest.raises(ValueError):
        spec6.truncated(7.0)


def test_nu_distinct(spec8):
    empty = F.LengthSpectrum((), 8.0)
    assert F.nu_distinct(empty, 5.0) == 0
    assert F.nu_distinct(spec8, 3.1) == 1
    nus = [F.nu_distinct(spec8, T) for T in np.arange(3.0, 8.01, 0.25)]
    assert all(a <= b for a, b in zip(nus, nus[1:]))
    with pytest.raises(ValueError):
        F.nu_distinct(spec8, 9.0)


def test_element_index_projective(rng):
    idx = F.ElementIndex()
    mats = np.array([MoebiusElement.from_matrix(rng.normal(size=(2, 2)) + 2 * np.eye(2)).matrix
                     for _ in range(50)])
    mats = mats[np.linalg.det(mats) > 0]
    ids, new = idx.add(mats, 0)
    assert np.all(new)
    assert np.array_equal(idx.lookup(-mats), ids)
    assert np.array_equal(idx.lookup(mats * (1 + 1e-12)), ids)


# ---------------------------------------------------------------- cache

def test_cache_round_trip(tmp_path, bolza, spec6):
    ls, key, hit = F.cached_length_spectrum(bolza, 6.0, directory=tmp_path)
    assert not hit
    again, key2, hit2 = F.cached_length_spectrum(bolza, 6.0, directory=tmp_path)
    assert hit2 and key2 == key
    assert [e.canonicalWord for e in again.entries] == [e.canonicalWord for e in ls.entries]
    assert F.verify_spectrum(bolza, again) < 1e-12
    assert np.array_equal(again.lengths, ls.lengths)
    assert F.cache_key(bolza, 6.0) != F.cache_key(bolza, 6.5)
    header = (tmp_path / f"{key}.csv").read_text().splitlines()[0]
    assert header == "length,primitiveLength,power,word,detTerm"
