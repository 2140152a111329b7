"""Atom and bond vocabularies."""

from __future__ import annotations

from dataclasses import dataclass, field

PAD_SYMBOL = "<pad>"
WILDCARD = "*"

# Allowed total bond orders per element (implicit hydrogens fill the gap).
# The wildcard is a polymer attachment point and may carry one or two bonds.
DEFAULT_VALENCES: dict[str, tuple[float, ...]] = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "F": (1,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
    WILDCARD: (1, 2),
}

ORGANIC_SUBSET = ("B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I")


@dataclass(frozen=True)
class AtomVocab:
    """Ordered element symbols (wildcard included, PAD last) and valences."""

    elements: tuple[str, ...]
    valences: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.elements)) != len(self.elements):
            raise ValueError("duplicate element symbols")
        if self.elements[-1] != PAD_SYMBOL:
            raise ValueError("PAD must be the last vocabulary entry")
        if WILDCARD not in self.elements:
            raise ValueError("vocabulary must include the wildcard '*'")
        merged = dict(DEFAULT_VALENCES)
        merged.update(self.valences)
        object.__setattr__(self, "valences", merged)
        if tuple(merged[WILDCARD]) != (1, 2):
            raise ValueError("wildcard valence must be {1, 2}")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.elements)})

    @classmethod
    def from_elements(cls, pool=ORGANIC_SUBSET) -> "AtomVocab":
        symbols = [s for s in pool if s not in (WILDCARD, PAD_SYMBOL)]
        return cls(elements=tuple(symbols) + (WILDCARD, PAD_SYMBOL))

    @classmethod
    def default(cls) -> "AtomVocab":
        return cls.from_elements(ORGANIC_SUBSET)

    @property
    def size(self) -> int:
        return len(self.elements)

    @property
    def pad_index(self) -> int:
        return len(self.elements) - 1

    @property
    def wildcard_index(self) -> int:
        return self._index[WILDCARD]

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise KeyError(f"element {symbol!r} not in vocabulary") from None

    def symbol(self, index: int) -> str:
        return self.elements[index]

    def allowed_valences(self, index: int) -> tuple[float, ...]:
        return tuple(self.valences[self.elements[index]])


BOND_KINDS = ("none", "single", "double", "triple", "aromatic")
BOND_ORDERS = {"none": 0.0, "single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.5}


@dataclass(frozen=True)
class BondVocab:
    """The fixed edge-kind vocabulary; 'none' is index 0."""

    kinds: tuple[str, ...] = BOND_KINDS

    def __post_init__(self):
        if self.kinds[0] != "none":
            raise ValueError("'none' must be the first bond kind")
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.kinds)})

    @property
    def size(self) -> int:
        return len(self.kinds)

    @property
    def none_index(self) -> int:
        return 0

    def index(self, kind: str) -> int:
        return self._index[kind]

    def kind(self, index: int) -> str:
        return self.kinds[index]

    def order(self, index: int) -> float:
        return BOND_ORDERS[self.kinds[index]]
