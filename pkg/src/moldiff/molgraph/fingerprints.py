"""Circular-environment fingerprints and Tanimoto similarity."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .graph import MolecularGraph


def _environment(g: MolecularGraph, adj, atom: int, radius: int) -> str:
    """Canonical string of the radius-r ball around an atom (tree unfolding)."""
    symbol = g.vocab.symbol(g.atoms[atom])
    if radius == 0:
        return symbol
    parts = sorted(f"{kind}:{_environment(g, adj, nb, radius - 1)}"
                   for nb, kind in adj[atom])
    return symbol + "(" + ",".join(parts) + ")"


def atom_environments(g: MolecularGraph, radius: int = 2) -> list[str]:
    """All atom-centered environment strings for radii 0..radius."""
    adj = g.adjacency()
    return [_environment(g, adj, a, r)
            for a in range(g.n_atoms) for r in range(radius + 1)]


@dataclass(frozen=True)
class Fingerprint:
    bits: np.ndarray  # uint8 0/1, length nbits
    radius: int

    @property
    def nbits(self) -> int:
        return self.bits.shape[0]


def _hash_env(env: str, nbits: int) -> int:
    digest = hashlib.blake2b(env.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % nbits


def fingerprint(g: MolecularGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    """Set one bit per hashed circular environment of radius 0..radius."""
    bits = np.zeros(nbits, dtype=np.uint8)
    for env in atom_environments(g, radius):
        bits[_hash_env(env, nbits)] = 1
    return Fingerprint(bits=bits, radius=radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a & b| / |a | b|, with the empty-empty case defined as 1."""
    inter = int(np.sum((a.bits & b.bits) > 0))
    union = int(np.sum((a.bits | b.bits) > 0))
    return 1.0 if union == 0 else inter / union


def fragment_counts(g: MolecularGraph, radius: int = 2) -> dict[str, int]:
    """Multiset of circular fragments (environment strings, radii 0..radius)."""
    counts: dict[str, int] = {}
    for env in atom_environments(g, radius):
        counts[env] = counts.get(env, 0) + 1
    return counts
