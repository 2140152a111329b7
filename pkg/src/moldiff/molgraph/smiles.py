"""SMILES subset parser and canonical writer.

Supported: organic-subset atoms B C N O F P S Cl Br I, bracket atoms without
charge/isotope (an optional H count is accepted and discarded), the wildcard
"*", bonds - = # :, aromatic lowercase atoms, ring closures (digits and %nn),
parenthesized branches, and "." between components.  Charges, isotopes and
stereochemistry are rejected at parse time.

Aromaticity is structural: an implicit bond between two lowercase atoms
becomes aromatic only when it lies on a 5-7 ring whose atoms are all
lowercase; other implicit candidates fall back to single.  An explicit ":"
always denotes an aromatic bond so that any graph the sampler emits can be
written and re-parsed.
"""

from __future__ import annotations

from .graph import MolecularGraph, connected_components, rings_up_to, subgraph
from .vocab import ORGANIC_SUBSET, WILDCARD, AtomVocab, BondVocab

AROMATIC_LETTERS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
LOWERCASABLE = set(AROMATIC_LETTERS.values())
RING_MIN, RING_MAX = 5, 7


class SmilesSyntaxError(ValueError):
    """Parse failure with the offending character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position
        self.message = message


_BOND_CHARS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}


def _parse_bracket(text: str, start: int) -> tuple[str, bool, int]:
    """Parse `[...]` starting at `start`; returns (symbol, aromatic, end_index)."""
    pos = start + 1
    if pos >= len(text):
        raise SmilesSyntaxError("unterminated bracket atom", start)
    aromatic = False
    ch = text[pos]
    if ch in AROMATIC_LETTERS:
        symbol = AROMATIC_LETTERS[ch]
        aromatic = True
        pos += 1
    elif ch == WILDCARD:
        symbol = WILDCARD
        pos += 1
    elif ch.isupper():
        symbol = ch
        pos += 1
        if pos < len(text) and text[pos].islower() and text[pos] != "h":
            symbol += text[pos]
            pos += 1
    else:
        raise SmilesSyntaxError(f"unsupported bracket content {ch!r}", pos)
    if pos < len(text) and text[pos] == "H":
        pos += 1
        while pos < len(text) and text[pos].isdigit():
            pos += 1
    if pos >= len(text) or text[pos] != "]":
        bad = text[pos] if pos < len(text) else "end of input"
        raise SmilesSyntaxError(f"unsupported bracket content {bad!r}", min(pos, len(text) - 1))
    return symbol, aromatic, pos


def parse_smiles(text: str, vocab: AtomVocab) -> MolecularGraph:
    """Parse a subset-SMILES string into a MolecularGraph.

    Raises SmilesSyntaxError for anything outside the subset; chemistry
    (valence) is never checked here.
    """
    bond_vocab = BondVocab()
    if not text:
        raise SmilesSyntaxError("empty SMILES", 0)

    atoms: list[int] = []            # element indices
    arom_flags: list[bool] = []
    atom_pos: list[int] = []
    # raw bonds: (i, j, spec, position) with spec a bond kind name or None (default)
    raw_bonds: list[tuple[int, int, str | None, int]] = []
    seen_pairs: set[tuple[int, int]] = set()

    prev: int | None = None
    stack: list[int] = []
    pending: str | None = None
    pending_pos = 0
    rings: dict[int, tuple[int, str | None, int]] = {}

    def add_atom(symbol: str, aromatic: bool, pos: int) -> None:
        nonlocal prev, pending
        try:
            idx = vocab.index(symbol)
        except KeyError:
            raise SmilesSyntaxError(f"element {symbol!r} not in vocabulary", pos) from None
        if idx == vocab.pad_index:
            raise SmilesSyntaxError("PAD symbol is not a real atom", pos)
        atoms.append(idx)
        arom_flags.append(aromatic)
        atom_pos.append(pos)
        this = len(atoms) - 1
        if prev is not None:
            add_bond(prev, this, pending, pos)
            pending = None
        elif pending is not None:
            raise SmilesSyntaxError("bond with no preceding atom", pending_pos)
        prev = this

    def add_bond(i: int, j: int, spec: str | None, pos: int) -> None:
        if i == j:
            raise SmilesSyntaxError("ring bond to the same atom", pos)
        pair = (min(i, j), max(i, j))
        if pair in seen_pairs:
            raise SmilesSyntaxError("duplicate bond between atoms", pos)
        seen_pairs.add(pair)
        raw_bonds.append((pair[0], pair[1], spec, pos))

    i = 0
    while i < len(text):
        ch = text[i]
        if ch in _BOND_CHARS:
            if pending is not None:
                raise SmilesSyntaxError("two bond symbols in a row", i)
            if prev is None:
                raise SmilesSyntaxError("bond with no preceding atom", i)
            pending = _BOND_CHARS[ch]
            pending_pos = i
        elif ch == "(":
            if pending is not None:
                raise SmilesSyntaxError("bond before branch open", i)
            if prev is None:
                raise SmilesSyntaxError("branch before any atom", i)
            stack.append(prev)
        elif ch == ")":
            if pending is not None:
                raise SmilesSyntaxError("dangling bond before branch close", pending_pos)
            if not stack:
                raise SmilesSyntaxError("unmatched branch close", i)
            prev = stack.pop()
        elif ch == ".":
            if pending is not None:
                raise SmilesSyntaxError("bond across component separator", pending_pos)
            prev = None
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                if i + 2 >= len(text) or not text[i + 1:i + 3].isdigit():
                    raise SmilesSyntaxError("%% needs two digits", i)
                number = int(text[i + 1:i + 3])
                i += 2
            else:
                number = int(ch)
            if prev is None:
                raise SmilesSyntaxError("ring closure before any atom", i)
            if number in rings:
                other, other_spec, other_pos = rings.pop(number)
                spec = pending
                if spec is not None and other_spec is not None and spec != other_spec:
                    raise SmilesSyntaxError("conflicting ring-closure bonds", i)
                add_bond(other, prev, spec if spec is not None else other_spec, i)
            else:
                rings[number] = (prev, pending, i)
            pending = None
        elif ch == "[":
            symbol, aromatic, end = _parse_bracket(text, i)
            add_atom(symbol, aromatic, i)
            i = end
        elif ch in AROMATIC_LETTERS:
            add_atom(AROMATIC_LETTERS[ch], True, i)
        elif ch == WILDCARD:
            add_atom(WILDCARD, False, i)
        elif ch.isupper():
            symbol = ch
            if ch == "C" and i + 1 < len(text) and text[i + 1] == "l":
                symbol, i = "Cl", i + 1
            elif ch == "B" and i + 1 < len(text) and text[i + 1] == "r":
                symbol, i = "Br", i + 1
            if symbol not in ORGANIC_SUBSET:
                raise SmilesSyntaxError(f"atom {symbol!r} needs brackets", i)
            add_atom(symbol, False, i)
        else:
            raise SmilesSyntaxError(f"unsupported character {ch!r}", i)
        i += 1

    if pending is not None:
        raise SmilesSyntaxError("dangling bond at end of input", pending_pos)
    if stack:
        raise SmilesSyntaxError("unclosed branch", len(text) - 1)
    if rings:
        number, (_, _, pos) = next(iter(rings.items()))
        raise SmilesSyntaxError(f"unclosed ring {number}", pos)
    if not atoms:
        raise SmilesSyntaxError("no atoms in SMILES", 0)

    return _resolve_aromaticity(text, atoms, arom_flags, atom_pos, raw_bonds, vocab, bond_vocab)


def _resolve_aromaticity(text, atoms, arom_flags, atom_pos, raw_bonds, vocab, bond_vocab):
    """Turn raw bond specs into kinds via 5-7 ring perception."""
    single = bond_vocab.index("single")
    aromatic = bond_vocab.index("aromatic")
    kind_of = {name: bond_vocab.index(name) for name in ("single", "double", "triple", "aromatic")}

    candidates = []
    resolved: dict[tuple[int, int], int] = {}
    for i, j, spec, pos in raw_bonds:
        if spec is None:
            if arom_flags[i] and arom_flags[j]:
                candidates.append((i, j))
                resolved[(i, j)] = single  # provisional
            else:
                resolved[(i, j)] = single
        else:
            resolved[(i, j)] = kind_of[spec]

    if candidates:
        probe = MolecularGraph(
            atoms=tuple(atoms),
            bonds=frozenset((i, j, k) for (i, j), k in resolved.items()),
            vocab=vocab, bond_vocab=bond_vocab)
        good_cycles = [cyc for cyc in rings_up_to(probe, RING_MAX)
                       if RING_MIN <= len(cyc) <= RING_MAX
                       and all(arom_flags[a] for a in cyc)]
        cycle_edges = set()
        for cyc in good_cycles:
            for k in range(len(cyc)):
                a, b = cyc[k], cyc[(k + 1) % len(cyc)]
                cycle_edges.add((min(a, b), max(a, b)))
        for pair in candidates:
            if pair in cycle_edges:
                resolved[pair] = aromatic

    graph = MolecularGraph(
        atoms=tuple(atoms),
        bonds=frozenset((i, j, k) for (i, j), k in resolved.items()),
        vocab=vocab, bond_vocab=bond_vocab)

    # a lowercase atom that gained no aromatic bond is outside any aromatic ring
    has_aromatic = set()
    for i, j, k in graph.bonds:
        if k == aromatic:
            has_aromatic.add(i)
            has_aromatic.add(j)
    for a, flagged in enumerate(arom_flags):
        if flagged and a not in has_aromatic:
            raise SmilesSyntaxError("aromatic atom outside an aromatic ring", atom_pos[a])
    return graph


# ---------------------------------------------------------------------------
# canonical writer


def _dense_ranks(keys: list) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(ranks: list[int], adj) -> list[int]:
    n = len(ranks)
    while True:
        keys = [(ranks[i], tuple(sorted((kind, ranks[j]) for j, kind in adj[i])))
                for i in range(n)]
        new = _dense_ranks(keys)
        if len(set(new)) == len(set(ranks)):
            return new
        ranks = new


def _signature(g: MolecularGraph, ranks: list[int]):
    pos = {i: r for i, r in enumerate(ranks)}
    nodes = tuple(a for _, a in sorted((pos[i], g.atoms[i]) for i in range(g.n_atoms)))
    edges = tuple(sorted((min(pos[i], pos[j]), max(pos[i], pos[j]), k) for i, j, k in g.bonds))
    return nodes, edges


def canonical_ranks(g: MolecularGraph) -> list[int]:
    """Total atom ranking invariant under relabeling.

    Iterative neighborhood refinement seeded by (element, degree, bond-kind
    multiset); remaining ties are broken by promoting each tied atom in turn
    and keeping the lexicographically smallest adjacency signature.
    """
    adj = g.adjacency()
    n = g.n_atoms
    base = [(g.atoms[i], len(adj[i]), tuple(sorted(k for _, k in adj[i]))) for i in range(n)]
    ranks = _refine(_dense_ranks(base), adj)

    def complete(ranks: list[int]) -> list[int]:
        counts: dict[int, int] = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        tied = sorted(r for r, c in counts.items() if c > 1)
        if not tied:
            return ranks
        cls = tied[0]
        members = [i for i in range(n) if ranks[i] == cls]
        best = None
        best_sig = None
        for m in members:
            keys = [(ranks[i], 0 if i == m else 1) for i in range(n)]
            candidate = complete(_refine(_dense_ranks(keys), adj))
            sig = _signature(g, candidate)
            if best_sig is None or sig < best_sig:
                best, best_sig = candidate, sig
        return best

    return complete(ranks)


def _writing_aromatics(g: MolecularGraph):
    """Atoms to lowercase and bonds to leave implicit when writing.

    Only 5-7 rings whose bonds are all aromatic and whose atoms all have a
    lowercase spelling qualify; every other aromatic bond is written ":".
    """
    aromatic = g.bond_vocab.index("aromatic")
    lower_atoms: set[int] = set()
    implicit_ok: set[tuple[int, int]] = set()
    for cyc in rings_up_to(g, RING_MAX):
        if not (RING_MIN <= len(cyc) <= RING_MAX):
            continue
        edges = [(min(cyc[k], cyc[(k + 1) % len(cyc)]), max(cyc[k], cyc[(k + 1) % len(cyc)]))
                 for k in range(len(cyc))]
        if any(g.bond_kind(a, b) != aromatic for a, b in edges):
            continue
        if any(g.vocab.symbol(g.atoms[a]) not in LOWERCASABLE for a in cyc):
            continue
        lower_atoms.update(cyc)
        implicit_ok.update(edges)
    return lower_atoms, implicit_ok


def write_smiles(g: MolecularGraph) -> str:
    """Canonical SMILES for the graph; components joined with "."."""
    comps = connected_components(g)
    if len(comps) > 1:
        return ".".join(sorted(write_smiles(subgraph(g, comp)) for comp in comps))

    ranks = canonical_ranks(g)
    adj = g.adjacency()
    lower_atoms, implicit_ok = _writing_aromatics(g)
    bv = g.bond_vocab
    aromatic, single = bv.index("aromatic"), bv.index("single")

    def bond_text(i: int, j: int, kind: int) -> str:
        if kind == single:
            return "-" if (i in lower_atoms and j in lower_atoms) else ""
        if kind == aromatic:
            pair = (min(i, j), max(i, j))
            return "" if pair in implicit_ok else ":"
        return {bv.index("double"): "=", bv.index("triple"): "#"}[kind]

    def atom_text(i: int) -> str:
        symbol = g.vocab.symbol(g.atoms[i])
        if i in lower_atoms:
            return symbol.lower()
        if symbol in ORGANIC_SUBSET or symbol == WILDCARD:
            return symbol
        return f"[{symbol}]"

    # spanning tree in rank order; non-tree edges become ring closures
    root = ranks.index(0)
    visited = {root}
    tree_children: dict[int, list[int]] = {i: [] for i in range(g.n_atoms)}
    ring_bonds: list[tuple[int, int]] = []
    seen_edges: set[tuple[int, int]] = set()

    def explore(u: int) -> None:
        for v, _ in sorted(adj[u], key=lambda nb: ranks[nb[0]]):
            edge = (min(u, v), max(u, v))
            if edge in seen_edges:
                continue
            seen_edges.add(edge)
            if v in visited:
                ring_bonds.append((u, v))  # u discovered later: closes at u
            else:
                visited.add(v)
                tree_children[u].append(v)
                explore(v)

    explore(root)

    # ring digit bookkeeping: opens at the earlier atom, closes at the later
    opens: dict[int, list[tuple[int, int]]] = {}
    closes: dict[int, list[tuple[int, int]]] = {}
    emit_order: dict[int, int] = {}

    def assign_emit_order(u: int, counter=[0]) -> None:
        emit_order[u] = counter[0]
        counter[0] += 1
        for v in tree_children[u]:
            assign_emit_order(v)

    assign_emit_order(root)
    for closer, opener in ring_bonds:
        opens.setdefault(opener, []).append((emit_order[closer], closer))
        closes.setdefault(closer, []).append((emit_order[opener], opener))

    free_digits: list[int] = []
    next_digit = [1]
    digit_of: dict[tuple[int, int], int] = {}

    def take_digit(edge) -> int:
        d = min(free_digits) if free_digits else next_digit[0]
        if free_digits:
            free_digits.remove(d)
        else:
            next_digit[0] += 1
        digit_of[edge] = d
        return d

    def digit_text(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    out: list[str] = []

    def emit(u: int) -> None:
        out.append(atom_text(u))
        for _, closer in sorted(opens.get(u, [])):
            edge = (min(u, closer), max(u, closer))
            out.append(digit_text(take_digit(edge)))
        for _, opener in sorted(closes.get(u, [])):
            edge = (min(u, opener), max(u, opener))
            out.append(bond_text(u, opener, g.bond_kind(u, opener)))
            d = digit_of.pop(edge)
            free_digits.append(d)
            out.append(digit_text(d))
        children = sorted(tree_children[u], key=lambda v: ranks[v])
        for k, v in enumerate(children):
            last = k == len(children) - 1
            if not last:
                out.append("(")
            out.append(bond_text(u, v, g.bond_kind(u, v)))
            emit(v)
            if not last:
                out.append(")")

    emit(root)
    return "".join(out)
