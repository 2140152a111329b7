"""Molecular graph type, connectivity helpers, ring search, valence checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .vocab import AtomVocab, BondVocab


@dataclass(frozen=True)
class MolecularGraph:
    """Atoms as vocab indices plus undirected typed bonds (i < j, kind != none)."""

    atoms: tuple[int, ...]
    bonds: frozenset[tuple[int, int, int]]
    vocab: AtomVocab
    bond_vocab: BondVocab = field(default_factory=BondVocab)

    def __post_init__(self):
        n = len(self.atoms)
        if n < 1:
            raise ValueError("graph needs at least one atom")
        pad = self.vocab.pad_index
        for a in self.atoms:
            if not (0 <= a < pad):
                raise ValueError(f"atom index {a} out of range (PAD excluded)")
        seen_pairs = set()
        for i, j, kind in self.bonds:
            if not (0 <= i < j < n):
                raise ValueError(f"bad bond endpoints ({i}, {j})")
            if kind == self.bond_vocab.none_index or not (0 < kind < self.bond_vocab.size):
                raise ValueError(f"bad bond kind {kind}")
            if (i, j) in seen_pairs:
                raise ValueError(f"duplicate bond on pair ({i}, {j})")
            seen_pairs.add((i, j))

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def symbols(self) -> list[str]:
        return [self.vocab.symbol(a) for a in self.atoms]

    def adjacency(self) -> dict[int, list[tuple[int, int]]]:
        """atom -> [(neighbor, bond kind)], neighbors in index order."""
        adj: dict[int, list[tuple[int, int]]] = {i: [] for i in range(self.n_atoms)}
        for i, j, kind in self.bonds:
            adj[i].append((j, kind))
            adj[j].append((i, kind))
        for lst in adj.values():
            lst.sort()
        return adj

    def bond_kind(self, i: int, j: int) -> int:
        """Kind of the bond between i and j, or the none index."""
        a, b = (i, j) if i < j else (j, i)
        for x, y, kind in self.bonds:
            if (x, y) == (a, b):
                return kind
        return self.bond_vocab.none_index

    def total_order(self, i: int) -> float:
        return sum(self.bond_vocab.order(kind)
                   for a, b, kind in self.bonds if i in (a, b))


def connected_components(g: MolecularGraph) -> list[list[int]]:
    """Atom index lists, one per component, each sorted, ordered by first atom."""
    adj = g.adjacency()
    seen = [False] * g.n_atoms
    comps = []
    for start in range(g.n_atoms):
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v, _ in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


def subgraph(g: MolecularGraph, keep: list[int]) -> MolecularGraph:
    """Induced subgraph on `keep` (relabeled in the given order)."""
    relabel = {old: new for new, old in enumerate(keep)}
    atoms = tuple(g.atoms[i] for i in keep)
    bonds = frozenset(
        (min(relabel[i], relabel[j]), max(relabel[i], relabel[j]), kind)
        for i, j, kind in g.bonds if i in relabel and j in relabel
    )
    return MolecularGraph(atoms=atoms, bonds=bonds, vocab=g.vocab, bond_vocab=g.bond_vocab)


def largest_component(g: MolecularGraph) -> MolecularGraph:
    """Component with the most atoms; ties by bond count then canonical string."""
    comps = connected_components(g)
    if len(comps) == 1:
        return g
    candidates = [subgraph(g, comp) for comp in comps]
    best = max(range(len(candidates)),
               key=lambda k: (candidates[k].n_atoms, candidates[k].n_bonds))
    top = [k for k in range(len(candidates))
           if (candidates[k].n_atoms, candidates[k].n_bonds)
           == (candidates[best].n_atoms, candidates[best].n_bonds)]
    if len(top) > 1:
        from .smiles import write_smiles  # local import avoids a cycle
        top.sort(key=lambda k: write_smiles(candidates[k]))
    return candidates[top[0]]


def spare_valence(g: MolecularGraph, i: int) -> float:
    """Slack between the atom's largest allowed valence and its bond total."""
    return max(g.vocab.allowed_valences(g.atoms[i])) - g.total_order(i)


def connect_components(g: MolecularGraph, rng: np.random.Generator) -> MolecularGraph:
    """Join all components with k-1 random single bonds.

    Attachment atoms are drawn uniformly among atoms with spare valence when
    any exist on a component, otherwise uniformly among all of its atoms.
    """
    comps = connected_components(g)
    if len(comps) == 1:
        return g
    bonds = set(g.bonds)

    def pick(comp_atoms):
        spare = [i for i in comp_atoms if spare_valence(g, i) >= 1.0]
        pool = spare if spare else comp_atoms
        return pool[int(rng.integers(len(pool)))]

    merged = comps[0]
    for comp in comps[1:]:
        a = pick(merged)
        b = pick(comp)
        i, j = (a, b) if a < b else (b, a)
        bonds.add((i, j, g.bond_vocab.index("single")))
        merged = merged + comp
    return MolecularGraph(atoms=g.atoms, bonds=frozenset(bonds),
                          vocab=g.vocab, bond_vocab=g.bond_vocab)


@dataclass(frozen=True)
class AtomValence:
    index: int
    symbol: str
    total_order: float
    allowed: tuple[float, ...]
    ok: bool


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    atoms: tuple[AtomValence, ...]
    connected: bool


def check_valence(g: MolecularGraph) -> ValidityReport:
    """Per-atom bond-order totals against the valence table.

    An atom passes if its total (aromatic = 1.5, rounded to the nearest 0.5)
    does not exceed some allowed valence; implicit hydrogens fill the rest.
    Connectivity is reported separately and does not affect validity.
    """
    entries = []
    for i, a in enumerate(g.atoms):
        total = round(g.total_order(i) * 2.0) / 2.0
        allowed = g.vocab.allowed_valences(a)
        ok = any(total <= v for v in allowed)
        entries.append(AtomValence(index=i, symbol=g.vocab.symbol(a),
                                   total_order=total, allowed=allowed, ok=ok))
    return ValidityReport(valid=all(e.ok for e in entries),
                          atoms=tuple(entries),
                          connected=len(connected_components(g)) == 1)


def ring_count(g: MolecularGraph) -> int:
    """Number of independent cycles (cyclomatic number)."""
    return g.n_bonds - g.n_atoms + len(connected_components(g))


def rings_up_to(g: MolecularGraph, max_size: int = 7) -> list[tuple[int, ...]]:
    """All simple cycles of length 3..max_size, as canonical atom tuples.

    A cycle is kept once, rotated to start at its smallest atom index and
    oriented toward the smaller neighbor.  Exhaustive DFS bounded by
    max_size; fine at molecule scale.
    """
    adj = g.adjacency()
    found: set[tuple[int, ...]] = set()

    def canonical(cycle: list[int]) -> tuple[int, ...]:
        k = cycle.index(min(cycle))
        rot = cycle[k:] + cycle[:k]
        fwd = tuple(rot)
        rev = tuple([rot[0]] + rot[1:][::-1])
        return min(fwd, rev)

    def dfs(start: int, current: int, path: list[int], on_path: set[int]):
        for nb, _ in adj[current]:
            if nb == start and len(path) >= 3:
                found.add(canonical(path))
            elif nb > start and nb not in on_path and len(path) < max_size:
                path.append(nb)
                on_path.add(nb)
                dfs(start, nb, path, on_path)
                on_path.remove(nb)
                path.pop()

    for start in range(g.n_atoms):
        dfs(start, start, [start], {start})
    return sorted(found)
