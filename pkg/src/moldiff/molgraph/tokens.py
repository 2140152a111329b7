"""Graph tokens: per-atom rows of [node one-hot | N_max edge one-hots]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import MolecularGraph
from .vocab import AtomVocab, BondVocab


class SizeError(ValueError):
    """Graph does not fit in the token grid."""


def node_slice(f_v: int) -> slice:
    return slice(0, f_v)

def edge_slice(f_v: int, f_e: int, j: int) -> slice:
    return slice(f_v + j * f_e, f_v + (j + 1) * f_e)


@dataclass
class GraphTokens:
    """Fixed-width token matrix (N_max x F_G) plus mask and vocabularies."""

    values: np.ndarray
    mask: np.ndarray
    atom_vocab: AtomVocab
    bond_vocab: BondVocab

    @property
    def n_max(self) -> int:
        return self.values.shape[0]

    @property
    def f_v(self) -> int:
        return self.atom_vocab.size

    @property
    def f_e(self) -> int:
        return self.bond_vocab.size

    @property
    def f_g(self) -> int:
        return self.f_v + self.n_max * self.f_e

    def node_states(self) -> np.ndarray:
        """Argmax node state per row."""
        return self.values[:, node_slice(self.f_v)].argmax(axis=1)

    def edge_states(self) -> np.ndarray:
        """Argmax edge state per (i, j) slot, shape (N_max, N_max)."""
        blocks = self.values[:, self.f_v:].reshape(self.n_max, self.n_max, self.f_e)
        return blocks.argmax(axis=2)

    def validate(self) -> None:
        """Assert every structural invariant of the token grid."""
        n, f_v, f_e = self.n_max, self.f_v, self.f_e
        if self.values.shape != (n, f_v + n * f_e):
            raise SizeError(f"values shape {self.values.shape} != ({n}, {f_v + n * f_e})")
        if self.mask.shape != (n,):
            raise SizeError(f"mask shape {self.mask.shape}")
        node = self.values[:, :f_v]
        blocks = self.values[:, f_v:].reshape(n, n, f_e)
        if not np.allclose(node.sum(axis=1), 1.0) or not np.isin(node, (0.0, 1.0)).all():
            raise ValueError("node blocks must be one-hot")
        if not np.allclose(blocks.sum(axis=2), 1.0) or not np.isin(blocks, (0.0, 1.0)).all():
            raise ValueError("edge blocks must be one-hot")
        if not np.array_equal(blocks, blocks.transpose(1, 0, 2)):
            raise ValueError("edge blocks must be symmetric")
        pad = self.atom_vocab.pad_index
        none = self.bond_vocab.none_index
        states = node.argmax(axis=1)
        if (states[self.mask] == pad).any():
            raise ValueError("real rows must not be PAD")
        if (states[~self.mask] != pad).any():
            raise ValueError("masked rows must be PAD")
        edge_states = blocks.argmax(axis=2)
        if (np.diag(edge_states) != none).any():
            raise ValueError("diagonal edge blocks must be none")
        off = ~self.mask
        if (edge_states[off, :] != none).any() or (edge_states[:, off] != none).any():
            raise ValueError("edge blocks touching PAD rows must be none")


def tokens_from_states(node_states: np.ndarray, edge_states: np.ndarray,
                       mask: np.ndarray, atom_vocab: AtomVocab,
                       bond_vocab: BondVocab) -> GraphTokens:
    """Assemble one-hot token rows from integer state grids."""
    n = mask.shape[0]
    f_v, f_e = atom_vocab.size, bond_vocab.size
    values = np.zeros((n, f_v + n * f_e))
    values[np.arange(n), node_states] = 1.0
    flat = np.arange(n * n)
    values[:, f_v:][np.repeat(np.arange(n), n), flat % n * f_e + edge_states.reshape(-1)] = 1.0
    return GraphTokens(values=values, mask=mask.astype(bool),
                       atom_vocab=atom_vocab, bond_vocab=bond_vocab)


def to_tokens(g: MolecularGraph, n_max: int) -> GraphTokens:
    """Pad the graph into the token grid; SizeError if it does not fit."""
    if g.n_atoms > n_max:
        raise SizeError(f"{g.n_atoms} atoms exceed N_max={n_max}")
    pad = g.vocab.pad_index
    none = g.bond_vocab.none_index
    node_states = np.full(n_max, pad, dtype=int)
    node_states[:g.n_atoms] = g.atoms
    edge_states = np.full((n_max, n_max), none, dtype=int)
    for i, j, kind in g.bonds:
        edge_states[i, j] = kind
        edge_states[j, i] = kind
    mask = np.zeros(n_max, dtype=bool)
    mask[:g.n_atoms] = True
    return tokens_from_states(node_states, edge_states, mask, g.vocab, g.bond_vocab)


def from_tokens(t: GraphTokens) -> MolecularGraph:
    """Drop PAD rows and 'none' edges; inverse of to_tokens."""
    states = t.node_states()
    edge_states = t.edge_states()
    real = np.flatnonzero(t.mask)
    relabel = {int(old): new for new, old in enumerate(real)}
    atoms = tuple(int(states[i]) for i in real)
    none = t.bond_vocab.none_index
    bonds = set()
    for i in real:
        for j in real:
            if i < j and edge_states[i, j] != none:
                bonds.add((relabel[int(i)], relabel[int(j)], int(edge_states[i, j])))
    return MolecularGraph(atoms=atoms, bonds=frozenset(bonds),
                          vocab=t.atom_vocab, bond_vocab=t.bond_vocab)
