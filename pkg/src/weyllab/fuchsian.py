"""Fuchsian groups: generator files, words, Dirichlet domains and length spectra.

The length spectrum is enumerated geometrically.  Every conjugacy class has a
representative whose axis meets the Dirichlet domain F centred at p0 = i, so its
axis passes within the covering radius rho of p0.  For such an element

    sinh(d(p0, g p0) / 2) = cosh(delta) sinh(L / 2),   delta = d(p0, axis),

which bounds the orbit ball that has to be searched.  The ball is grown by
breadth-first search over the face-pairing letters of F (a face pairing always
moves an orbit point closer to p0, so the search is complete), and the retained
elements are grouped into classes by conjugating with single letters.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    ElementClassError,
    GeneratorFileError,
    InvalidGroup,
    MemoryBudgetExceeded,
    StabilizationFailed,
)
from .geometry import (
    PARABOLIC_TOL,
    BumpSum,
    ConformalMetric,
    MoebiusElement,
    disc_samples,
    moebius_arrays,
    pinching_bounds,
    translation_length,
)

DATA_DIR = Path(__file__).with_name("data")
RENORM_EVERY = 16
CLUSTER_TOL = 1e-9
KEY_QUANTUM = 1e-6


# ---------------------------------------------------------------- generator sets

@dataclass(frozen=True, eq=False)
class GeneratorSet:
    generators: tuple
    relationWords: tuple = ()
    name: str = "group"
    source: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "relationWords", tuple(tuple(r) for r in self.relationWords))

    @property
    def rank(self) -> int:
        return len(self.generators)

    def letter(self, i) -> np.ndarray:
        """Matrix of signed 1-based letter ``i``."""
        g = self.generators[abs(i) - 1]
        return g.matrix if i > 0 else g.inverse().matrix

    def letters(self):
        """Signed letters in the fixed order 1, -1, 2, -2, ..."""
        return [s * k for k in range(1, self.rank + 1) for s in (1, -1)]

    def letter_matrices(self) -> np.ndarray:
        return np.array([self.letter(i) for i in self.letters()])

    def fingerprint(self) -> str:
        data = self.source or format_generators(self).encode()
        return hashlib.sha256(data).hexdigest()

    def validate(self, tol=1e-9):
        """Check determinants, relation words and the absence of short parabolics."""
        for k, g in enumerate(self.generators, 1):
            if abs(g.det - 1.0) > 1e-12:
                raise InvalidGroup(f"generator {k} has det {g.det!r}")
        for r in self.relationWords:
            m = evaluate_word(self, GroupWord(r)).matrix
            e = np.eye(2)
            if min(np.abs(m - e).max(), np.abs(m + e).max()) > tol:
                raise InvalidGroup(f"relation {list(r)} does not evaluate to +-identity")
        lets = self.letters()
        words = [(a,) for a in lets] + [(a, b) for a in lets for b in lets if a != -b]
        for w in words:
            t = abs(evaluate_word(self, GroupWord(w)).trace)
            if abs(t - 2.0) < tol:
                raise InvalidGroup(f"word {list(w)} is parabolic; group is not cocompact")
        return self


def parse_generators(text: str, name="group", source=None) -> GeneratorSet:
    gens, rels = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("name:"):
                name = body[5:].strip()
            continue
        try:
            if line.startswith("rel:"):
                rels.append(tuple(int(t) for t in line[4:].split()))
                continue
            vals = [float(t) for t in line.split()]
        except ValueError as exc:
            raise GeneratorFileError(f"line {lineno}: {exc}") from None
        if len(vals) != 4:
            raise GeneratorFileError(f"line {lineno}: expected 4 numbers, got {len(vals)}")
        g = MoebiusElement(*vals)
        if abs(g.det - 1.0) > 1e-12:
            raise GeneratorFileError(f"line {lineno}: determinant {g.det!r} differs from 1")
        gens.append(g)
    if not gens:
        raise GeneratorFileError("no generators found")
    for r in rels:
        if not r or any(i == 0 or abs(i) > len(gens) for i in r):
            raise GeneratorFileError(f"relation {list(r)} uses an unknown generator")
    gs = GeneratorSet(tuple(gens), tuple(rels), name,
                      text.encode() if source is None else source)
    try:
        return gs.validate()
    except InvalidGroup as exc:
        raise GeneratorFileError(str(exc)) from None


def format_generators(gs: GeneratorSet) -> str:
    lines = [f"# name: {gs.name}"]
    lines += [" ".join(repr(float(v)) for v in (g.a, g.b, g.c, g.d)) for g in gs.generators]
    lines += ["rel: " + " ".join(str(i) for i in r) for r in gs.relationWords]
    return "\n".join(lines) + "\n"


def load_generators(path) -> GeneratorSet:
    path = Path(path)
    raw = path.read_bytes()
    return parse_generators(raw.decode(), name=path.stem, source=raw)


def save_generators(gs: GeneratorSet, path):
    Path(path).write_text(format_generators(gs))


def builtin_surface(name: str) -> GeneratorSet:
    path = DATA_DIR / f"{name}.gens"
    if not path.exists():
        raise GeneratorFileError(f"unknown builtin surface {name!r}")
    return load_generators(path)


def resolve_surface(spec: str) -> GeneratorSet:
    """A builtin name (e.g. 'bolza') or a generator-file path."""
    if (DATA_DIR / f"{spec}.gens").exists():
        return builtin_surface(spec)
    return load_generators(spec)


def bolza_generators_exact(dps=40):
    """High-precision Bolza side pairings; used to (re)generate the shipped data file."""
    import mpmath as mp

    mp.mp.dps = dps
    a = 1 + mp.sqrt(2)
    b = mp.sqrt(2 * a)
    out = []
    for k in range(4):
        w = mp.expjpi(mp.mpf(k) / 4)
        # disc matrix [[a, b w], [b conj(w), a]] conjugated by the Cayley map
        bw = b * w
        out.append((a + bw.real, bw.imag, bw.imag, a - bw.real))
    return out


# ---------------------------------------------------------------- words

def _letter_key(i):
    return (abs(i), i < 0)


@dataclass(frozen=True)
class GroupWord:
    letters: tuple

    def __post_init__(self):
        w = tuple(int(i) for i in self.letters)
        if any(i == 0 for i in w):
            raise ValueError("letter 0 is not a generator index")
        if any(w[j] == -w[j + 1] for j in range(len(w) - 1)):
            raise ValueError(f"word {list(w)} is not freely reduced")
        object.__setattr__(self, "letters", w)

    @classmethod
    def reduce(cls, letters) -> "GroupWord":
        out = []
        for i in letters:
            if out and out[-1] == -i:
                out.pop()
            else:
                out.append(i)
        return cls(tuple(out))

    def __len__(self):
        return len(self.letters)

    def __str__(self):
        return " ".join(str(i) for i in self.letters)

    @classmethod
    def parse(cls, text) -> "GroupWord":
        return cls(tuple(int(t) for t in text.split()))

    def inverse(self) -> "GroupWord":
        return GroupWord(tuple(-i for i in reversed(self.letters)))

    def __mul__(self, other: "GroupWord") -> "GroupWord":
        return GroupWord.reduce(self.letters + other.letters)

    def power(self, k) -> "GroupWord":
        return GroupWord.reduce(self.letters * k)

    @property
    def is_cyclically_reduced(self) -> bool:
        w = self.letters
        return len(w) <= 1 or w[0] != -w[-1]

    def cyclic_reduction(self) -> "GroupWord":
        w = self.letters
        i, j = 0, len(w)
        while j - i >= 2 and w[i] == -w[j - 1]:
            i += 1
            j -= 1
        return GroupWord(w[i:j])

    def sort_key(self):
        return tuple(_letter_key(i) for i in self.letters)

    def least_rotation(self) -> "GroupWord":
        w = self.letters
        if not w:
            return self
        rots = [w[k:] + w[:k] for k in range(len(w))]
        return GroupWord(min(rots, key=lambda r: tuple(_letter_key(i) for i in r)))

    def canonical(self) -> "GroupWord":
        return self.cyclic_reduction().least_rotation()


def evaluate_word(gs: GeneratorSet, w: GroupWord) -> MoebiusElement:
    m = np.eye(2)
    for n, i in enumerate(w.letters, 1):
        m = m @ gs.letter(i)
        if n % RENORM_EVERY == 0:
            m = m / math.sqrt(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
    return MoebiusElement.from_matrix(m)


def primitive_decomposition(w: GroupWord):
    """(root, k) with w equal to root**k as a cyclic word and root not a proper power."""
    x = w.letters
    n = len(x)
    if n == 0:
        raise ValueError("empty word has no primitive root")
    if not w.is_cyclically_reduced:
        raise ValueError("primitive_decomposition needs a cyclically reduced word")
    for p in range(1, n + 1):
        if n % p == 0 and all(x[j] == x[j + p] for j in range(n - p)):
            return GroupWord(x[:p]), n // p
    raise AssertionError("unreachable")


def enumerate_conjugacy_classes(gs: GeneratorSet, maxLetters: int, cap=5_000_000):
    """Yield one word per cyclic class of cyclically reduced words of length <= maxLetters.

    The representative is the least rotation (letters ordered 1 < -1 < 2 < -2 ...).
    Classes are those of the free group on the generators: words that only agree
    modulo the surface relation are not merged.  Raises MemoryBudgetExceeded once
    more than ``cap`` classes have been produced.
    """
    if maxLetters < 1:
        raise ValueError("maxLetters must be >= 1")
    lets = sorted(gs.letters(), key=_letter_key)
    count = 0
    word = []

    def rec(n):
        nonlocal count
        if word and word[0] != -word[-1]:
            w = tuple(word)
            if _is_least(w):
                count += 1
                if count > cap:
                    raise MemoryBudgetExceeded(f"more than {cap} classes below {maxLetters} letters")
                yield GroupWord(w)
        if n == maxLetters:
            return
        for a in lets:
            if word and word[-1] == -a:
                continue
            word.append(a)
            yield from rec(n + 1)
            word.pop()

    yield from rec(0)


def _is_least(w):
    key = [_letter_key(i) for i in w]
    return all(key <= key[k:] + key[:k] for k in range(1, len(key)))


# ---------------------------------------------------------------- element index

class ElementIndex:
    """Hash of projective SL(2,R) elements keyed on quantised (a, b, c) entries.

    Entries within 1e-3 quanta of a rounding boundary are probed on both sides.
    """

    def __init__(self, quantum=KEY_QUANTUM):
        self.q = quantum
        self.table = {}

    def _keys(self, mats):
        mats = np.asarray(mats).reshape(-1, 2, 2)
        s = np.where(mats[:, 0, 0] + mats[:, 1, 1] < 0.0, -1.0, 1.0)
        v = np.stack([mats[:, 0, 0], mats[:, 0, 1], mats[:, 1, 0]], axis=1) * s[:, None] / self.q
        k = np.rint(v).astype(np.int64)
        frac = v - np.floor(v)
        near = np.abs(frac - 0.5) < 1e-3
        alt = np.where(v >= k, k + 1, k - 1)
        return k, near, alt

    def lookup(self, mats) -> np.ndarray:
        k, near, alt = self._keys(mats)
        t = self.table
        out = np.fromiter((t.get(r.tobytes(), -1) for r in k), dtype=np.int64, count=len(k))
        for j in np.nonzero((out < 0) & near.any(axis=1))[0]:
            for cand in _alternatives(k[j], near[j], alt[j]):
                hit = t.get(cand.tobytes(), -1)
                if hit >= 0:
                    out[j] = hit
                    break
        return out

    def add(self, mats, start):
        """Insert rows not yet present; returns (indices, is_new) arrays."""
        k, near, alt = self._keys(mats)
        found = self.lookup(mats)
        idx = np.empty(len(k), dtype=np.int64)
        new = np.zeros(len(k), dtype=bool)
        nxt = start
        t = self.table
        for j in range(len(k)):
            if found[j] >= 0:
                idx[j] = found[j]
                continue
            key = k[j].tobytes()
            hit = t.get(key, -1)
            if hit < 0 and near[j].any():
                for cand in _alternatives(k[j], near[j], alt[j]):
                    hit = t.get(cand.tobytes(), -1)
                    if hit >= 0:
                        break
            if hit >= 0:
                idx[j] = hit
                continue
            t[key] = nxt
            idx[j] = nxt
            new[j] = True
            nxt += 1
        return idx, new

    def __len__(self):
        return len(self.table)


def _alternatives(k, near, alt):
    pos = np.nonzero(near)[0]
    for mask in range(1, 1 << len(pos)):
        c = k.copy()
        for b, p in enumerate(pos):
            if mask >> b & 1:
                c[p] = alt[p]
        yield c


def cosh_displacement(mats):
    """cosh d(i, g i) = (a^2 + b^2 + c^2 + d^2) / 2, vectorised over (n, 2, 2)."""
    return 0.5 * np.einsum("nij,nij->n", mats, mats)


@dataclass
class OrbitBall:
    """All group elements g with d(i, g i) <= radius, with breadth-first words."""

    mats: np.ndarray
    parent: np.ndarray
    letter: np.ndarray
    depth: np.ndarray
    index: ElementIndex
    letters: list
    radius: float

    def __len__(self):
        return len(self.mats)

    def word(self, j) -> GroupWord:
        out = []
        while self.parent[j] >= 0:
            out.append(self.letters[self.letter[j]])
            j = self.parent[j]
        return GroupWord.reduce(sum((tuple(l) for l in reversed(out)), ()))


def orbit_ball(letter_mats, letter_words, radius, max_elements=3_000_000) -> OrbitBall:
    """Breadth-first search of {g : d(i, g i) <= radius} by right multiplication."""
    lm = np.asarray(letter_mats, dtype=float)
    nl = len(lm)
    cR = math.cosh(radius)
    index = ElementIndex()
    mats = [np.eye(2)[None]]
    parent = [np.array([-1])]
    letter = [np.array([-1])]
    depth = [np.array([0])]
    index.add(mats[0], 0)
    total = 1
    frontier = mats[0]
    fidx = np.array([0])
    level = 0
    while len(frontier):
        level += 1
        cand = np.einsum("nij,ljk->nlik", frontier, lm).reshape(-1, 2, 2)
        par = np.repeat(fidx, nl)
        let = np.tile(np.arange(nl), len(frontier))
        keep = cosh_displacement(cand) <= cR
        cand, par, let = cand[keep], par[keep], let[keep]
        if level % RENORM_EVERY == 0 and len(cand):
            det = cand[:, 0, 0] * cand[:, 1, 1] - cand[:, 0, 1] * cand[:, 1, 0]
            cand = cand / np.sqrt(det)[:, None, None]
        idx, new = index.add(cand, total)
        cand, par, let = cand[new], par[new], let[new]
        n = len(cand)
        if total + n > max_elements:
            raise MemoryBudgetExceeded(f"orbit ball of radius {radius:.3f} exceeds {max_elements} elements")
        mats.append(cand)
        parent.append(par)
        letter.append(let)
        depth.append(np.full(n, level))
        fidx = np.arange(total, total + n)
        total += n
        frontier = cand
    return OrbitBall(np.concatenate(mats), np.concatenate(parent), np.concatenate(letter),
                     np.concatenate(depth), index, list(letter_words), radius)


# ---------------------------------------------------------------- Dirichlet domain

@dataclass
class DirichletDomain:
    vertices: np.ndarray          # Klein-model coordinates, counter-clockwise
    face_elements: list           # MoebiusElement per edge
    covering_radius: float
    letter_mats: np.ndarray       # BFS alphabet (contains every face pairing)
    letter_words: list            # each BFS letter as a tuple of signed generators

    @property
    def area(self) -> float:
        """Hyperbolic area from the interior angles (Gauss-Bonnet for a polygon)."""
        v = self.vertices
        n = len(v)
        tot = 0.0
        for j in range(n):
            a, b, c = v[j - 1], v[j], v[(j + 1) % n]
            tot += _klein_angle(b, a, c)
        return (n - 2) * math.pi - tot


def _klein_angle(p, a, b):
    """Hyperbolic angle at Klein point p between chords towards a and b."""
    def tangent(q):
        # direction of the geodesic p->q in the Poincare disc is conformal
        P = _klein_to_disc(p)
        Q = _klein_to_disc(q)
        z = (Q - P) / (1 - np.conj(P) * Q)
        return z / abs(z)
    ta, tb = tangent(a), tangent(b)
    return abs(math.atan2((tb / ta).imag, (tb / ta).real))


def _klein_to_disc(k):
    k = complex(k[0], k[1])
    r2 = abs(k) ** 2
    return k / (1.0 + math.sqrt(max(0.0, 1.0 - r2)))


def half_plane_to_klein(z):
    w = (z - 1j) / (z + 1j)
    k = 2 * w / (1 + np.abs(w) ** 2)
    return np.stack([k.real, k.imag], axis=-1)


def _clip(poly, labels, nrm, off, lab):
    """Clip convex polygon {x : nrm . x <= off}; edge j runs poly[j] -> poly[j+1]."""
    n = len(poly)
    s = poly @ nrm - off
    if np.all(s <= 1e-14):
        return poly, labels
    out, outl = [], []
    for j in range(n):
        p, q = poly[j], poly[(j + 1) % n]
        sp, sq = s[j], s[(j + 1) % n]
        if sp <= 0.0:
            out.append(p)
            if sq > 0.0:
                t = sp / (sp - sq)
                out.append(p + t * (q - p))
                outl += [labels[j], lab]
            else:
                outl.append(labels[j])
        elif sq <= 0.0:
            t = sp / (sp - sq)
            out.append(p + t * (q - p))
            outl.append(labels[j])
    return np.array(out), outl


def _drop_short_edges(poly, labels, tol=1e-9):
    """Remove degenerate edges left where several bisectors pass through a vertex."""
    keep = [j for j in range(len(poly))
            if np.linalg.norm(poly[(j + 1) % len(poly)] - poly[j]) > tol]
    return poly[keep], [labels[j] for j in keep]


def dirichlet_domain(gs: GeneratorSet, max_rounds=8) -> DirichletDomain:
    """Dirichlet polygon centred at i, its covering radius and face pairings."""
    lets = gs.letters()
    lm = gs.letter_matrices()
    lw = [(i,) for i in lets]
    R0 = 2.0 * float(np.arccosh(cosh_displacement(lm)).max()) + 0.5
    for _ in range(max_rounds):
        ball = orbit_ball(lm, lw, R0)
        mats = ball.mats[1:]
        cd = cosh_displacement(mats)
        order = np.argsort(cd, kind="stable")
        mats, cd = mats[order], cd[order]
        zq = moebius_arrays(mats.transpose(1, 2, 0), 1j)
        kq = half_plane_to_klein(zq)
        poly = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]) * 1.0001
        labels = [-1] * 4
        for j in range(len(mats)):
            poly, labels = _clip(poly, labels, kq[j] * cd[j], cd[j] - 1.0, j)
        poly, labels = _drop_short_edges(poly, labels)
        r2 = (poly**2).sum(axis=1)
        if -1 in labels or r2.max() >= 1.0 - 1e-12:
            R0 *= 1.5
            continue
        rho = float(np.arccosh(1.0 / np.sqrt(1.0 - r2.max())))
        if 2.0 * rho > R0 + 1e-9:
            R0 = 2.0 * rho + 0.5
            continue
        faces = [mats[l] for l in labels]
        known = ElementIndex()
        known.add(lm, 0)
        missing = [j for j, f in enumerate(faces) if known.lookup(f[None])[0] < 0]
        if missing:
            # extend the alphabet by the missing face pairings and redo
            for j in missing:
                w = ball.word(order[labels[j]] + 1)
                lm = np.concatenate([lm, faces[j][None]])
                lw.append(w.letters)
            continue
        return DirichletDomain(poly, [MoebiusElement.from_matrix(f) for f in faces], rho, lm, lw)
    raise InvalidGroup("could not close the Dirichlet polygon; group may not be cocompact")


# ---------------------------------------------------------------- length spectrum

@dataclass(frozen=True)
class LengthSpectrumEntry:
    length: float
    primitiveLength: float
    power: int
    canonicalWord: GroupWord
    detTerm: float = float("nan")

    @property
    def is_primitive(self) -> bool:
        return self.power == 1


@dataclass
class LengthSpectrum:
    entries: tuple
    cutoff: float
    certificate: dict = field(default_factory=dict)
    conjugates: list | None = None     # per entry: (m, 2, 2) retained conjugates
    root_index: np.ndarray | None = None  # entry index of each entry's primitive root
    group: GeneratorSet | None = None

    def __post_init__(self):
        self.entries = tuple(self.entries)

    def __len__(self):
        return len(self.entries)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([e.length for e in self.entries])

    @property
    def primitive_lengths(self) -> np.ndarray:
        return np.array([e.primitiveLength for e in self.entries])

    @property
    def powers(self) -> np.ndarray:
        return np.array([e.power for e in self.entries], dtype=int)

    @property
    def det_terms(self) -> np.ndarray:
        return np.array([e.detTerm for e in self.entries])

    @property
    def distinctLengths(self):
        """(values, multiplicities) of length clusters."""
        return cluster_lengths(self.lengths)

    def truncated(self, T) -> "LengthSpectrum":
        if T > self.cutoff + 1e-12:
            raise ValueError(f"cannot extend spectrum from {self.cutoff} to {T}")
        keep = [j for j, e in enumerate(self.entries) if e.length <= T]
        conj = None if self.conjugates is None else [self.conjugates[j] for j in keep]
        root = None
        if self.root_index is not None:
            pos = {j: k for k, j in enumerate(keep)}
            root = np.array([pos[int(self.root_index[j])] for j in keep], dtype=int)
        return replace(self, entries=tuple(self.entries[j] for j in keep), cutoff=T,
                       certificate=dict(self.certificate), conjugates=conj, root_index=root)

    def with_det_terms(self, det_terms) -> "LengthSpectrum":
        det_terms = np.asarray(det_terms, dtype=float)
        ents = tuple(replace(e, detTerm=float(d)) for e, d in zip(self.entries, det_terms))
        return replace(self, entries=ents, certificate=dict(self.certificate))


def cluster_lengths(lengths, tol=CLUSTER_TOL):
    L = np.sort(np.asarray(lengths, dtype=float))
    if L.size == 0:
        return np.zeros(0), np.zeros(0, dtype=int)
    brk = np.nonzero(np.diff(L) > tol * np.maximum(1.0, L[1:]))[0] + 1
    groups = np.split(L, brk)
    return np.array([g.mean() for g in groups]), np.array([len(g) for g in groups])


def nu_distinct(ls: LengthSpectrum, T: float) -> int:
    if T > ls.cutoff + 1e-12:
        raise ValueError(f"T = {T} exceeds the spectrum cutoff {ls.cutoff}")
    L = ls.lengths
    vals, _ = cluster_lengths(L[L <= T])
    return int(vals.size)


def _hyperbolic_data(mats):
    tr = np.abs(mats[:, 0, 0] + mats[:, 1, 1])
    hyp = tr > 2.0 + PARABOLIC_TOL
    L = 2.0 * np.arccosh(np.maximum(tr / 2.0, 1.0))
    cd = cosh_displacement(mats)
    with np.errstate(divide="ignore", invalid="ignore"):
        cdelta = np.sqrt(np.maximum((cd - 1.0) / 2.0, 0.0)) / np.sinh(L / 2.0)
    return hyp, L, cdelta


def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def _classes(ball, sel, letter_mats):
    """Union-find of retained elements ``sel`` under conjugation by single letters."""
    pos = -np.ones(len(ball), dtype=np.int64)
    pos[sel] = np.arange(len(sel))
    parent = list(range(len(sel)))
    inv = np.array([[[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]] for m in letter_mats])
    M = ball.mats[sel]
    for s, si in zip(letter_mats, inv):
        conj = np.einsum("ij,njk,kl->nil", si, M, s)
        hit = ball.index.lookup(conj)
        ok = hit >= 0
        tgt = np.where(ok, pos[np.where(ok, hit, 0)], -1)
        for a, b in zip(np.nonzero(tgt >= 0)[0], tgt[tgt >= 0]):
            ra, rb = _find(parent, a), _find(parent, int(b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([_find(parent, a) for a in range(len(sel))], dtype=np.int64)
    return roots


def _matrix_root(m, k):
    """k-th root of a hyperbolic SL(2,R) matrix with positive trace."""
    if m[0, 0] + m[1, 1] < 0:
        m = -m
    th = math.acosh((m[0, 0] + m[1, 1]) / 2.0)
    N = (m - math.cosh(th) * np.eye(2)) / math.sinh(th)
    return math.cosh(th / k) * np.eye(2) + math.sinh(th / k) * N


def build_length_spectrum(gs: GeneratorSet, T: float, margin=0.25, certify=True,
                          domain: DirichletDomain | None = None) -> LengthSpectrum:
    """All oriented closed geodesics (hyperbolic conjugacy classes) with length <= T."""
    if not T > 0:
        raise ValueError("T must be positive")
    dom = domain or dirichlet_domain(gs)
    rho = dom.covering_radius
    check = margin + 0.5 if certify else margin
    R = 2.0 * math.asinh(math.cosh(rho + check) * math.sinh(T / 2.0))
    ball = orbit_ball(dom.letter_mats, dom.letter_words, R)
    hyp, L, cdelta = _hyperbolic_data(ball.mats)
    base = hyp & (L <= T + 1e-12)

    def classes_at(extra):
        sel = np.nonzero(base & (cdelta <= math.cosh(rho + extra)))[0]
        return sel, _classes(ball, sel, dom.letter_mats)

    sel, roots = classes_at(margin)
    cert = {"covering_radius": rho, "margin": margin, "ball_radius": R, "ball_size": len(ball),
            "retained": int(sel.size)}
    if certify:
        sel2, roots2 = classes_at(check)
        a = np.sort(L[sel[np.unique(roots, return_index=True)[1]]])
        b = np.sort(L[sel2[np.unique(roots2, return_index=True)[1]]])
        if a.size != b.size or (a.size and np.abs(a - b).max() > 1e-9):
            raise StabilizationFailed(
                f"class count changed from {a.size} to {b.size} when widening the axis tube")
        cert["stabilized"] = True
        cert["check_margin"] = check
    if sel.size == 0:
        return LengthSpectrum((), T, cert, [], np.zeros(0, dtype=int), gs)

    # representatives: minimal breadth-first depth, then word order
    uroots, inv = np.unique(roots, return_inverse=True)
    members = [[] for _ in uroots]
    for j, c in enumerate(inv):
        members[c].append(sel[j])
    words = {}

    def bfs_word(j):
        if j not in words:
            words[j] = ball.word(j)
        return words[j]

    reps = []
    for mem in members:
        dmin = ball.depth[mem].min()
        cands = [j for j in mem if ball.depth[j] == dmin]
        reps.append(min(cands, key=lambda j: bfs_word(j).sort_key()))

    Lmin = float(min(L[r] for r in reps))
    cls_of = {int(j): c for c, mem in enumerate(members) for j in mem}
    power = np.ones(len(reps), dtype=int)
    root_cls = np.arange(len(reps))
    for c, r in enumerate(reps):
        m = ball.mats[r]
        for k in range(int(L[r] / Lmin + 1e-9), 1, -1):
            hit = ball.index.lookup(_matrix_root(m, k)[None])[0]
            if hit >= 0 and int(hit) in cls_of:
                power[c] = k
                root_cls[c] = cls_of[int(hit)]
                break

    canon = [None] * len(reps)
    for c, r in enumerate(reps):
        if power[c] == 1:
            canon[c] = bfs_word(r).canonical()
    for c in range(len(reps)):
        if power[c] > 1:
            canon[c] = canon[root_cls[c]].power(int(power[c])).canonical()

    lens = np.array([translation_length(evaluate_word(gs, w)) for w in canon])
    prim = np.array([lens[root_cls[c]] for c in range(len(reps))])
    lens = np.where(power > 1, power * prim, lens)
    # deterministic order: length cluster, then canonical word
    vals, mult = cluster_lengths(lens)
    cid = np.searchsorted(vals - 2 * CLUSTER_TOL * np.maximum(1, vals), lens) - 1
    cid = np.clip(cid, 0, len(vals) - 1)
    order = sorted(range(len(reps)), key=lambda c: (int(cid[c]), canon[c].sort_key()))
    rank = np.empty(len(reps), dtype=int)
    rank[order] = np.arange(len(reps))
    entries = tuple(LengthSpectrumEntry(float(lens[c]), float(prim[c]), int(power[c]), canon[c])
                    for c in order)
    conj = [ball.mats[members[c]] for c in order]
    cert["classes"] = len(entries)
    return LengthSpectrum(entries, T, cert, conj, rank[root_cls[order]], gs)


def axis_tile_measure(gs: GeneratorSet, T: float, domain: DirichletDomain | None = None,
                      radius_pad=0.1):
    """Independent count of classes: sum over elements of |axis ∩ F| / L.

    For a class with primitive length L# and power k the conjugates' axes cut F
    in pieces of total length L#, so each class contributes 1/k.  Returns a dict
    mapping rounded length -> summed contribution.  Elements are found by a plain
    breadth-first search over generator words, not by the tube criterion.
    """
    dom = domain or dirichlet_domain(gs)
    rho = dom.covering_radius
    R = 2.0 * math.asinh(math.cosh(rho + radius_pad) * math.sinh(T / 2.0))
    ball = orbit_ball(gs.letter_matrices(), [(i,) for i in gs.letters()], R)
    hyp, L, _ = _hyperbolic_data(ball.mats)
    sel = np.nonzero(hyp & (L <= T + 1e-12))[0]
    out = {}
    poly = dom.vertices
    for j in sel:
        g = MoebiusElement.from_matrix(ball.mats[j])
        rep, att = g.fixed_points()
        seg = _klein_chord_in_polygon(_boundary_klein(rep), _boundary_klein(att), poly)
        if seg is None:
            continue
        ell = _klein_distance(seg[0], seg[1]) * (0.5 if seg[2] else 1.0)
        key = round(float(L[j]), 7)
        out[key] = out.get(key, 0.0) + ell / float(L[j])
    return out


def _boundary_klein(x):
    if math.isinf(x):
        return np.array([1.0, 0.0])
    w = (x - 1j) / (x + 1j)
    return np.array([w.real, w.imag])


def _klein_chord_in_polygon(p, q, poly, tol=1e-10):
    """Clip the chord p->q against a convex polygon (Cyrus-Beck).

    Returns (start, end, on_edge) or None; ``on_edge`` marks a chord running
    along a side of the polygon, which the neighbouring tile shares.
    """
    d = q - p
    t0, t1 = 0.0, 1.0
    n = len(poly)
    on_edge = False
    for j in range(n):
        a, b = poly[j], poly[(j + 1) % n]
        e = b - a
        nrm = np.array([e[1], -e[0]]) / np.linalg.norm(e)
        if np.dot(nrm, poly[(j + 2) % n] - a) > 0:
            nrm = -nrm  # make it point outwards
        num = np.dot(nrm, a - p)
        den = np.dot(nrm, d)
        if abs(den) < tol * np.linalg.norm(d):
            if num < -tol:
                return None
            on_edge = on_edge or abs(num) <= tol
            continue
        t = num / den
        if den > 0:
            t1 = min(t1, t)
        else:
            t0 = max(t0, t)
        if t0 >= t1:
            return None
    return p + t0 * d, p + t1 * d, on_edge


def _klein_distance(x, y):
    c = (1.0 - x @ y) / math.sqrt((1.0 - x @ x) * (1.0 - y @ y))
    return math.acosh(max(c, 1.0))


# ---------------------------------------------------------------- spectrum cache

CSV_COLUMNS = ("length", "primitiveLength", "power", "word", "detTerm")


def cache_dir(path=None) -> Path:
    if path is not None:
        return Path(path)
    env = os.environ.get("WEYLLAB_CACHE_DIR")
    return Path(env) if env else Path.home() / ".cache" / "weyllab"


def cache_key(gs: GeneratorSet, T: float, metric_tag="hyperbolic", margin=0.25) -> str:
    h = hashlib.sha256()
    h.update(gs.source or format_generators(gs).encode())
    h.update(f"|T={T!r}|cluster={CLUSTER_TOL!r}|key={KEY_QUANTUM!r}|margin={margin!r}|"
             f"metric={metric_tag}".encode())
    return h.hexdigest()[:24]


def write_spectrum_csv(ls: LengthSpectrum, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for e in ls.entries:
            w.writerow([repr(e.length), repr(e.primitiveLength), e.power, str(e.canonicalWord),
                        repr(e.detTerm)])


def read_spectrum_csv(path, cutoff, certificate=None, group=None) -> LengthSpectrum:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected spectrum CSV header")
    ents = tuple(LengthSpectrumEntry(float(r[0]), float(r[1]), int(r[2]), GroupWord.parse(r[3]),
                                     float(r[4])) for r in rows[1:])
    return LengthSpectrum(ents, cutoff, dict(certificate or {}), group=group)


def cached_length_spectrum(gs: GeneratorSet, T: float, use_cache=True, directory=None,
                           metric_tag="hyperbolic"):
    """Load a spectrum from the cache or build and store it.

    Returns (spectrum, key, hit).  A hit carries no retained conjugates.
    """
    key = cache_key(gs, T, metric_tag)
    d = cache_dir(directory)
    csv_path, meta_path = d / f"{key}.csv", d / f"{key}.json"
    if use_cache and csv_path.exists() and meta_path.exists():
        meta = json.loads(meta_path.read_text())
        return read_spectrum_csv(csv_path, meta["cutoff"], meta["certificate"], gs), key, True
    ls = build_length_spectrum(gs, T)
    if use_cache:
        store_spectrum(ls, key, d)
    return ls, key, False


def store_spectrum(ls: LengthSpectrum, key, directory=None):
    d = cache_dir(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_spectrum_csv(ls, d / f"{key}.csv")
    meta = {"cutoff": ls.cutoff, "certificate": ls.certificate}
    (d / f"{key}.json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def verify_spectrum(gs: GeneratorSet, ls: LengthSpectrum, tol=1e-12):
    """Max |length - translation_length(word)| over the entries."""
    err = 0.0
    for e in ls.entries:
        err = max(err, abs(e.length - translation_length(evaluate_word(gs, e.canonicalWord))))
    return err


# ---------------------------------------------------------------- perturbed metric

def orbit_points(gs: GeneratorSet, p, radius, domain=None) -> np.ndarray:
    """All orbit points g.p (complex) with d(i, g i) <= radius."""
    dom = domain or dirichlet_domain(gs)
    ball = orbit_ball(dom.letter_mats, dom.letter_words, radius)
    return moebius_arrays(ball.mats.transpose(1, 2, 0), complex(p))


def bump_metric(gs: GeneratorSet, amplitude=0.05, bump_radius=1.0, center=1j,
                valid_radius=9.0, n_radial=48, n_angular=96, domain=None) -> ConformalMetric:
    """Gamma-invariant conformal factor: a radial bump summed over an orbit.

    The orbit is truncated to the ball that makes phi exact on the disc of
    ``valid_radius`` about i.  Pinching constants are certified by sampling a
    disc that covers the Dirichlet domain.
    """
    dom = domain or dirichlet_domain(gs)
    rc = float(np.arccosh(1.0 + abs(center - 1j) ** 2 / (2.0 * center.imag)))
    centers = orbit_points(gs, center, valid_radius + bump_radius + rc, dom)
    phi = BumpSum(centers, bump_radius, amplitude)
    m = ConformalMetric(phi, valid_radius=valid_radius)
    from .geometry import I

    samples = disc_samples(I, dom.covering_radius + 0.05, n_radial, n_angular)
    K1, K2 = pinching_bounds(m, samples)
    m.K1, m.K2 = K1, K2
    m.certificate = {"amplitude": amplitude, "bump_radius": bump_radius, "valid_radius": valid_radius,
                     "samples": int(samples.size), "K1": K1, "K2": K2, "centers": int(centers.size)}
    return m


def is_hyperbolic_element(m) -> bool:
    try:
        translation_length(MoebiusElement.from_matrix(m))
        return True
    except ElementClassError:
        return False
