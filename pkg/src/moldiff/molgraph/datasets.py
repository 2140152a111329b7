"""Dataset ingestion, deterministic 6:2:2 splits, and toy-molecule synthesis."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..conditioning import ConditionSet, ConditionSpec, fit_numeric_ranges
from .graph import MolecularGraph, check_valence, ring_count
from .smiles import SmilesSyntaxError, parse_smiles
from .vocab import AtomVocab, BondVocab

SPLIT_NAMES = ("train", "valid", "test")


class SchemaError(ValueError):
    """CSV header does not match the declared conditions."""


@dataclass(frozen=True)
class DataRecord:
    graph: MolecularGraph
    cset: ConditionSet


@dataclass
class Dataset:
    records: list[DataRecord]
    specs: list[ConditionSpec]
    splits: dict[str, list[int]]
    atom_vocab: AtomVocab
    bond_vocab: BondVocab = field(default_factory=BondVocab)

    def split(self, name: str) -> list[DataRecord]:
        return [self.records[i] for i in self.splits[name]]

    def size_histogram(self, split: str = "train") -> dict[int, int]:
        hist: dict[int, int] = {}
        for rec in self.split(split):
            n = rec.graph.n_atoms
            hist[n] = hist.get(n, 0) + 1
        return hist

    def max_atoms(self) -> int:
        return max(rec.graph.n_atoms for rec in self.records)


def split_indices(n: int, seed: int, ratios=(0.6, 0.2, 0.2)) -> dict[str, list[int]]:
    """Deterministic disjoint covering split; 6:2:2 by default."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(ratios[0] * n))
    n_valid = int(np.floor(ratios[1] * n))
    return {
        "train": sorted(int(i) for i in perm[:n_train]),
        "valid": sorted(int(i) for i in perm[n_train:n_train + n_valid]),
        "test": sorted(int(i) for i in perm[n_train + n_valid:]),
    }


def load_dataset(path, condition_specs, seed: int,
                 vocab: AtomVocab | None = None) -> tuple[Dataset, list[dict]]:
    """Read `smiles,<prop>,...` CSV; returns (dataset, skip report).

    Rows whose SMILES or numeric cells fail to parse are skipped and reported
    as {row, reason}.  Label vocabularies come from all parsed rows; numeric
    value ranges from the training split.
    """
    vocab = vocab or AtomVocab.default()
    bond_vocab = BondVocab()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("empty CSV")
        header = [h.strip() for h in reader.fieldnames]
        missing = [s.name for s in condition_specs if s.name not in header]
        if "smiles" not in header:
            raise SchemaError("missing required column 'smiles'")
        if missing:
            raise SchemaError(f"missing condition columns: {missing}")
        rows = list(reader)

    skips: list[dict] = []
    parsed: list[tuple[MolecularGraph, list]] = []
    for row_number, row in enumerate(rows):
        try:
            graph = parse_smiles(row["smiles"].strip(), vocab)
        except SmilesSyntaxError as err:
            skips.append({"row": row_number, "reason": str(err)})
            continue
        raw_values = []
        bad = None
        for spec in condition_specs:
            cell = (row.get(spec.name) or "").strip()
            if cell == "":
                raw_values.append(None)
            elif spec.kind == "numeric":
                try:
                    raw_values.append(float(cell))
                except ValueError:
                    bad = f"column {spec.name!r}: {cell!r} is not a number"
                    break
            else:
                raw_values.append(cell)
        if bad:
            skips.append({"row": row_number, "reason": bad})
            continue
        parsed.append((graph, raw_values))

    # resolve categorical label vocabularies over all parsed rows
    specs = list(condition_specs)
    for idx, spec in enumerate(specs):
        if spec.kind != "categorical" or spec.labels is not None:
            continue
        labels = tuple(sorted({vals[idx] for _, vals in parsed if vals[idx] is not None}))
        if len(labels) < 2:
            raise SchemaError(f"condition {spec.name!r} has fewer than 2 labels")
        from dataclasses import replace
        specs[idx] = replace(spec, labels=labels, cardinality=len(labels))

    splits = split_indices(len(parsed), seed)
    train_rows = [parsed[i][1] for i in splits["train"]]
    specs = fit_numeric_ranges(specs, train_rows)

    records = []
    for graph, raw_values in parsed:
        values = []
        for value, spec in zip(raw_values, specs):
            if value is None:
                values.append(None)
            elif spec.kind == "numeric":
                values.append(float(value))
            else:
                values.append(spec.label_index(value))
        records.append(DataRecord(graph=graph, cset=ConditionSet(values=tuple(values))))

    dataset = Dataset(records=records, specs=specs, splits=splits,
                      atom_vocab=vocab, bond_vocab=bond_vocab)
    return dataset, skips


# ---------------------------------------------------------------------------
# exact synthetic property oracles


def property_ring_count(g: MolecularGraph) -> float:
    return float(ring_count(g))


def property_hetero_frac(g: MolecularGraph) -> float:
    """Fraction of heavy atoms that are not carbon."""
    symbols = g.symbols()
    return sum(1 for s in symbols if s != "C") / len(symbols)


def property_has_ring(g: MolecularGraph) -> str:
    return "yes" if ring_count(g) > 0 else "no"


EXACT_ORACLES = {
    "ring_count": property_ring_count,
    "hetero_frac": property_hetero_frac,
    "has_ring": property_has_ring,
}


# ---------------------------------------------------------------------------
# toy synthesis


@dataclass(frozen=True)
class ToySpec:
    n_molecules: int
    max_atoms: int
    element_pool: tuple[str, ...] = ("C", "N", "O")
    seed: int = 0
    min_atoms: int = 3
    ring_rate: float = 0.7


def _grow_molecule(spec: ToySpec, vocab: AtomVocab, bond_vocab: BondVocab,
                   rng: np.random.Generator) -> MolecularGraph:
    """Valence-respecting random growth plus a few ring closures."""
    n_target = int(rng.integers(spec.min_atoms, spec.max_atoms + 1))
    hetero_p = float(rng.uniform(0.0, 0.6))
    non_carbon = [e for e in spec.element_pool if e != "C"]

    def pick_element() -> str:
        if non_carbon and ("C" not in spec.element_pool or rng.random() < hetero_p):
            return non_carbon[int(rng.integers(len(non_carbon)))]
        return "C"

    def max_valence(symbol: str) -> float:
        return max(vocab.valences[symbol])

    symbols = [pick_element()]
    spare = [max_valence(symbols[0])]
    bonds: set[tuple[int, int, int]] = set()

    while len(symbols) < n_target:
        parents = [i for i, s in enumerate(spare) if s >= 1.0]
        if not parents:
            break
        parent = parents[int(rng.integers(len(parents)))]
        symbol = pick_element()
        order = 1
        if spare[parent] >= 2.0 and max_valence(symbol) >= 2.0 and rng.random() < 0.15:
            order = 2
        if spare[parent] >= 3.0 and max_valence(symbol) >= 3.0 and rng.random() < 0.05:
            order = 3
        new = len(symbols)
        symbols.append(symbol)
        spare.append(max_valence(symbol) - order)
        spare[parent] -= order
        bonds.add((parent, new, bond_vocab.index({1: "single", 2: "double", 3: "triple"}[order])))

    n_rings = int(rng.poisson(spec.ring_rate))
    bonded = {(min(i, j), max(i, j)) for i, j, _ in bonds}
    for _ in range(n_rings):
        open_atoms = [i for i, s in enumerate(spare) if s >= 1.0]
        pairs = [(i, j) for i in open_atoms for j in open_atoms
                 if i < j and (i, j) not in bonded and abs(i - j) >= 2]
        if not pairs:
            break
        i, j = pairs[int(rng.integers(len(pairs)))]
        bonds.add((i, j, bond_vocab.index("single")))
        bonded.add((i, j))
        spare[i] -= 1.0
        spare[j] -= 1.0

    atoms = tuple(vocab.index(s) for s in symbols)
    return MolecularGraph(atoms=atoms, bonds=frozenset(bonds),
                          vocab=vocab, bond_vocab=bond_vocab)


def gen_toy_dataset(spec: ToySpec) -> Dataset:
    """Synthesize valid molecules with exact properties attached.

    Conditions: ring_count (numeric), hetero_frac (numeric), has_ring
    (categorical) -- all computable exactly from structure, so they double
    as ground-truth oracles.
    """
    rng = np.random.default_rng(spec.seed)
    vocab = AtomVocab.from_elements(spec.element_pool)
    bond_vocab = BondVocab()

    graphs = []
    for _ in range(spec.n_molecules):
        g = _grow_molecule(spec, vocab, bond_vocab, rng)
        report = check_valence(g)
        assert report.valid, "toy growth must respect valences"
        graphs.append(g)

    labels = ("no", "yes")
    specs = [
        ConditionSpec(name="ring_count", kind="numeric"),
        ConditionSpec(name="hetero_frac", kind="numeric"),
        ConditionSpec(name="has_ring", kind="categorical",
                      cardinality=2, labels=labels),
    ]
    raw_rows = []
    for g in graphs:
        raw_rows.append((property_ring_count(g), property_hetero_frac(g),
                         labels.index(property_has_ring(g))))

    splits = split_indices(len(graphs), spec.seed)
    specs = fit_numeric_ranges(specs, [raw_rows[i] for i in splits["train"]])

    records = [DataRecord(graph=g, cset=ConditionSet(values=row))
               for g, row in zip(graphs, raw_rows)]
    return Dataset(records=records, specs=specs, splits=splits,
                   atom_vocab=vocab, bond_vocab=bond_vocab)
