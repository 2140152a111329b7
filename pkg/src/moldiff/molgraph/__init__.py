"""Molecular graphs: vocabularies, SMILES, tokens, fingerprints, datasets."""

from .vocab import PAD_SYMBOL, WILDCARD, AtomVocab, BondVocab
from .graph import (
    MolecularGraph,
    ValidityReport,
    check_valence,
    connect_components,
    connected_components,
    largest_component,
    ring_count,
    rings_up_to,
)
from .smiles import SmilesSyntaxError, parse_smiles, write_smiles
from .tokens import GraphTokens, SizeError, from_tokens, to_tokens
from .fingerprints import Fingerprint, atom_environments, fingerprint, fragment_counts, tanimoto
from .datasets import (
    Dataset,
    DataRecord,
    SchemaError,
    ToySpec,
    EXACT_ORACLES,
    gen_toy_dataset,
    load_dataset,
    property_has_ring,
    property_hetero_frac,
    property_ring_count,
)

__all__ = [
    "PAD_SYMBOL", "WILDCARD", "AtomVocab", "BondVocab",
    "MolecularGraph", "ValidityReport", "check_valence", "connect_components",
    "connected_components", "largest_component", "ring_count", "rings_up_to",
    "SmilesSyntaxError", "parse_smiles", "write_smiles",
    "GraphTokens", "SizeError", "from_tokens", "to_tokens",
    "Fingerprint", "atom_environments", "fingerprint", "fragment_counts", "tanimoto",
    "Dataset", "DataRecord", "SchemaError", "ToySpec", "EXACT_ORACLES",
    "gen_toy_dataset", "load_dataset",
    "property_has_ring", "property_hetero_frac", "property_ring_count",
]
