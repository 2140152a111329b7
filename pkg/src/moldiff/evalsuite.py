"""Generation metrics, property oracles, and the single-vs-multi rank experiment.

The neural-network feature distance of the original metric suite is replaced
by a Frechet distance between Gaussians fitted to eight structural
descriptors, reported as `descriptor_frechet` to keep the substitution
visible.  The learned oracle is a Tanimoto-weighted k-NN over fingerprints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .conditioning import ConditionSet
from .molgraph.fingerprints import Fingerprint, fingerprint, fragment_counts, tanimoto
from .molgraph.graph import (MolecularGraph, check_valence, connect_components,
                             largest_component, ring_count)
from .molgraph.smiles import write_smiles
from .molgraph.vocab import PAD_SYMBOL, WILDCARD


class EmptyInput(ValueError):
    pass


class TooFew(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class EmptyFit(ValueError):
    pass


@dataclass
class MetricsReport:
    validity: float
    validity_no_rule: float
    coverage: tuple[int, int]
    diversity: float
    fragment_similarity: float
    descriptor_frechet: float
    condition_metrics: dict[str, float]
    sample_count: int

    def to_json(self) -> dict:
        return {
            "validity": self.validity,
            "validity_no_rule": self.validity_no_rule,
            "coverage": {"found": self.coverage[0], "total": self.coverage[1]},
            "diversity": self.diversity,
            "fragment_similarity": self.fragment_similarity,
            "descriptor_frechet": self.descriptor_frechet,
            "condition_metrics": self.condition_metrics,
            "sample_count": self.sample_count,
        }


# ---------------------------------------------------------------------------
# distribution metrics


def validity(mols: list[MolecularGraph], mode: str = "as_is", seed: int = 0) -> float:
    """Fraction passing the valence check after the named conversion.

    `as_is` skips conversion entirely (the "without rule checking" number).
    """
    if not mols:
        raise EmptyInput("no molecules")
    rng = np.random.default_rng(seed)
    ok = 0
    for g in mols:
        if mode == "connect_all":
            g = connect_components(g, rng)
        elif mode == "lcc":
            g = largest_component(g)
        elif mode != "as_is":
            raise ValueError(f"unknown validity mode {mode!r}")
        ok += check_valence(g).valid
    return ok / len(mols)


def coverage(gen: list[MolecularGraph], train_types,
             exclude: tuple[str, ...] = (WILDCARD,)) -> tuple[int, int]:
    """(found, total) distinct training heavy-atom types appearing in gen."""
    total = {t for t in train_types if t not in exclude and t != PAD_SYMBOL}
    seen: set[str] = set()
    for g in gen:
        seen.update(g.symbols())
    return len(seen & total), len(total)


def internal_diversity(gen: list[MolecularGraph], radius: int = 2,
                       nbits: int = 2048) -> float:
    """1 - mean pairwise Tanimoto over all unordered pairs."""
    if len(gen) < 2:
        raise TooFew("need at least two molecules")
    fps = [fingerprint(g, radius, nbits) for g in gen]
    total, pairs = 0.0, 0
    for i in range(len(fps)):
        for j in range(i + 1, len(fps)):
            total += tanimoto(fps[i], fps[j])
            pairs += 1
    return 1.0 - total / pairs


def _pooled_fragments(mols: list[MolecularGraph], radius: int) -> dict[str, int]:
    pool: dict[str, int] = {}
    for g in mols:
        for key, count in fragment_counts(g, radius).items():
            pool[key] = pool.get(key, 0) + count
    return pool


def fragment_similarity(gen: list[MolecularGraph], ref: list[MolecularGraph],
                        radius: int = 2) -> float:
    """Cosine similarity of pooled circular-fragment count vectors."""
    if not gen or not ref:
        raise EmptyInput("both sets must be nonempty")
    a = _pooled_fragments(gen, radius)
    b = _pooled_fragments(ref, radius)
    keys = sorted(set(a) | set(b))
    va = np.array([a.get(k, 0) for k in keys], dtype=np.float64)
    vb = np.array([b.get(k, 0) for k in keys], dtype=np.float64)
    denom = np.linalg.norm(va) * np.linalg.norm(vb)
    return float(va @ vb / denom) if denom > 0 else 0.0


DESCRIPTOR_NAMES = ("n_atoms", "n_bonds", "ring_count", "aromatic_bond_frac",
                    "hetero_frac", "mean_degree", "max_degree", "wildcard_count")


def descriptor_vector(g: MolecularGraph) -> np.ndarray:
    """Eight cheap structural descriptors."""
    n = g.n_atoms
    n_bonds = g.n_bonds
    aromatic = g.bond_vocab.index("aromatic")
    arom_frac = (sum(1 for *_, k in g.bonds if k == aromatic) / n_bonds) if n_bonds else 0.0
    symbols = g.symbols()
    degrees = np.zeros(n)
    for i, j, _ in g.bonds:
        degrees[i] += 1
        degrees[j] += 1
    return np.array([
        n,
        n_bonds,
        ring_count(g),
        arom_frac,
        sum(1 for s in symbols if s != "C") / n,
        degrees.mean(),
        degrees.max() if n else 0.0,
        sum(1 for s in symbols if s == WILDCARD),
    ], dtype=np.float64)


def descriptor_frechet(gen: list[MolecularGraph], ref: list[MolecularGraph]) -> float:
    """Frechet distance between descriptor Gaussians:
    ||mu1-mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))."""
    if len(gen) < 2 or len(ref) < 2:
        raise TooFew("need at least two molecules per set")
    x = np.stack([descriptor_vector(g) for g in gen])
    y = np.stack([descriptor_vector(g) for g in ref])
    mu1, mu2 = x.mean(axis=0), y.mean(axis=0)
    s1 = np.cov(x, rowvar=False)
    s2 = np.cov(y, rowvar=False)
    if np.array_equal(mu1, mu2) and np.array_equal(s1, s2):
        return 0.0  # identical Gaussians, exactly
    covmean = scipy.linalg.sqrtm(s1 @ s2)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    if not np.isfinite(covmean).all():
        jitter = 1e-9 * np.eye(s1.shape[0])
        covmean = scipy.linalg.sqrtm((s1 + jitter) @ (s2 + jitter))
        if np.iscomplexobj(covmean):
            covmean = covmean.real
    value = float(((mu1 - mu2) ** 2).sum() + np.trace(s1 + s2 - 2.0 * covmean))
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# condition control


def condition_error(gen: list[MolecularGraph], target_csets: list[ConditionSet],
                    oracles: dict, specs) -> dict[str, float]:
    """Per-condition MAE (numeric) or accuracy (categorical) via the oracles.

    `oracles` maps condition name to a callable graph -> value; numeric
    oracles return floats, categorical ones labels.
    """
    if len(gen) != len(target_csets):
        raise LengthMismatch(f"{len(gen)} molecules vs {len(target_csets)} targets")
    out: dict[str, float] = {}
    for idx, spec in enumerate(specs):
        oracle = oracles.get(spec.name)
        if oracle is None:
            continue
        errs, hits = [], []
        for g, cset in zip(gen, target_csets):
            target = cset.values[idx]
            if target is None:
                continue
            got = oracle(g)
            if spec.kind == "numeric":
                errs.append(abs(float(got) - float(target)))
            else:
                got_idx = spec.label_index(got) if isinstance(got, str) else int(got)
                hits.append(float(got_idx == int(target)))
        if errs:
            out[f"mae_{spec.name}"] = float(np.mean(errs))
        if hits:
            out[f"acc_{spec.name}"] = float(np.mean(hits))
    return out


@dataclass
class KnnOracle:
    fingerprints: list[Fingerprint]
    values: list
    k: int
    kind: str  # regression | classification


def knn_fit(mols: list[MolecularGraph], values: list, k: int = 5,
            kind: str = "regression", radius: int = 2, nbits: int = 2048) -> KnnOracle:
    if not mols:
        raise EmptyFit("empty fit set")
    if len(mols) != len(values):
        raise LengthMismatch(f"{len(mols)} molecules vs {len(values)} values")
    if k > len(mols):
        raise ValueError("k exceeds fit set size")
    if kind not in ("regression", "classification"):
        raise ValueError(f"unknown oracle kind {kind!r}")
    return KnnOracle(fingerprints=[fingerprint(g, radius, nbits) for g in mols],
                     values=list(values), k=k, kind=kind)


def knn_predict(oracle: KnnOracle, mol: MolecularGraph):
    """Tanimoto-weighted mean (regression) or majority (classification)."""
    fp = fingerprint(mol, oracle.fingerprints[0].radius, oracle.fingerprints[0].nbits)
    sims = np.array([tanimoto(fp, other) for other in oracle.fingerprints])
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))[:oracle.k]
    if oracle.kind == "regression":
        weights = sims[order]
        vals = np.array([float(oracle.values[i]) for i in order])
        if weights.sum() <= 0:
            return float(vals.mean())
        return float((weights * vals).sum() / weights.sum())
    tallies: dict = {}
    for i in order:
        label = oracle.values[i]
        count, weight = tallies.get(label, (0, 0.0))
        tallies[label] = (count + 1, weight + sims[i])
    # majority; ties by total similarity, then smaller label
    best = sorted(tallies.items(), key=lambda kv: (-kv[1][0], -kv[1][1], str(kv[0])))
    return best[0][0]


def knn_oracles_from_dataset(dataset, k: int = 5, split: str = "train") -> dict:
    """One k-NN oracle per condition, fitted on a dataset split."""
    records = dataset.split(split)
    out = {}
    for idx, spec in enumerate(dataset.specs):
        pairs = [(r.graph, r.cset.values[idx]) for r in records
                 if r.cset.values[idx] is not None]
        if not pairs:
            continue
        mols, values = zip(*pairs)
        kind = "regression" if spec.kind == "numeric" else "classification"
        if spec.kind == "categorical":
            values = [spec.labels[int(v)] for v in values]
        oracle = knn_fit(list(mols), list(values), k=min(k, len(mols)), kind=kind)
        out[spec.name] = (lambda g, o=oracle: knn_predict(o, g))
    return out


def exact_oracles_for(specs) -> dict:
    from .molgraph.datasets import EXACT_ORACLES
    return {s.name: EXACT_ORACLES[s.name] for s in specs if s.name in EXACT_ORACLES}


# ---------------------------------------------------------------------------
# full report


def metrics_report(gen: list[MolecularGraph], ref: list[MolecularGraph],
                   train_types, target_csets=None, oracles=None, specs=None,
                   conversion_seed: int = 0) -> MetricsReport:
    if not gen or not ref:
        raise EmptyInput("gen and ref must be nonempty")
    condition_metrics: dict[str, float] = {}
    if target_csets is not None and oracles and specs is not None:
        condition_metrics = condition_error(gen, target_csets, oracles, specs)
    return MetricsReport(
        validity=validity(gen, "connect_all", seed=conversion_seed),
        validity_no_rule=validity(gen, "as_is"),
        coverage=coverage(gen, train_types),
        diversity=internal_diversity(gen) if len(gen) >= 2 else 0.0,
        fragment_similarity=fragment_similarity(gen, ref),
        descriptor_frechet=descriptor_frechet(gen, ref) if min(len(gen), len(ref)) >= 2 else 0.0,
        condition_metrics=condition_metrics,
        sample_count=len(gen),
    )


# ---------------------------------------------------------------------------
# single-vs-multi conditional rank experiment


def _oracle_error(oracle, spec, g: MolecularGraph, target) -> float:
    got = oracle(g)
    if spec.kind == "numeric":
        return abs(float(got) - float(target))
    got_idx = spec.label_index(got) if isinstance(got, str) else int(got)
    return 0.0 if got_idx == int(target) else 1.0


def shared_structure_k(lists: dict[str, list[str]], n_per_condition: int) -> int:
    """Smallest k whose per-condition top-k lists share a structure; cap if none."""
    for k in range(1, n_per_condition + 1):
        tops = [set(lst[:k]) for lst in lists.values()]
        common = set.intersection(*tops)
        if common:
            return k
    return n_per_condition


@dataclass
class RankReport:
    per_condition_ranks: dict[str, list[int]]
    shared_k: list[int]
    n_per_condition: int

    def medians(self) -> dict[str, float]:
        out = {f"median_rank_{name}": float(np.median(r))
               for name, r in self.per_condition_ranks.items()}
        out["median_shared_k"] = float(np.median(self.shared_k))
        return out

    def to_json(self) -> dict:
        def hist(xs):
            h: dict[str, int] = {}
            for x in xs:
                h[str(x)] = h.get(str(x), 0) + 1
            return h
        return {
            "n_per_condition": self.n_per_condition,
            "ranks": {name: {"histogram": hist(r), "median": float(np.median(r))}
                      for name, r in self.per_condition_ranks.items()},
            "shared_k": {"histogram": hist(self.shared_k),
                         "median": float(np.median(self.shared_k))},
        }


def rank_experiment(single_models: dict, multi_model, test_csets: list[ConditionSet],
                    oracles: dict, n_per_condition: int = 30, s_guide: float = 2.0,
                    seed: int = 0) -> RankReport:
    """Rank one multi-conditional molecule inside per-condition top-30 lists.

    `single_models` maps condition name to a trained bundle whose single
    condition matches that name; `multi_model` is trained on all conditions.
    For every test condition set the single models generate n molecules each;
    the multi model generates one.  Ranks use oracle error per condition; the
    shared-structure K is the smallest k at which all per-condition top-k
    lists contain a common canonical structure (capped at n).
    """
    from .diffusion import convert, sample_raw_many

    spec_by_name = {s.name: (i, s) for i, s in enumerate(multi_model.specs)}
    per_condition_ranks: dict[str, list[int]] = {name: [] for name in single_models}
    shared_ks: list[int] = []
    rng = np.random.default_rng(seed)

    for cset in test_csets:
        singles_smiles: dict[str, list[str]] = {}
        errors: dict[str, list[float]] = {}
        targets: dict[str, object] = {}
        for name, bundle in single_models.items():
            idx, spec = spec_by_name[name]
            target = cset.values[idx]
            targets[name] = target
            single_cset = ConditionSet(values=(target,))
            sizes = [int(rng.choice(sorted(bundle.size_histogram),
                                    p=_hist_probs(bundle.size_histogram)))
                     for _ in range(n_per_condition)]
            raw = sample_raw_many(bundle.store, bundle.denoiser_cfg, bundle.schedule,
                                  bundle.marginals, bundle.specs,
                                  [single_cset] * n_per_condition, sizes, s_guide,
                                  rng, bundle.atom_vocab, bundle.bond_vocab)
            mols = [convert(g, "connect_all", rng) for g in raw]
            errs = [_oracle_error(oracles[name], spec, g, target) for g in mols]
            order = sorted(range(len(mols)), key=lambda i: (errs[i], i))
            singles_smiles[name] = [write_smiles(mols[i]) for i in order]
            errors[name] = sorted(errs)

        sizes = [int(rng.choice(sorted(multi_model.size_histogram),
                                p=_hist_probs(multi_model.size_histogram)))]
        raw = sample_raw_many(multi_model.store, multi_model.denoiser_cfg,
                              multi_model.schedule, multi_model.marginals,
                              multi_model.specs, [cset], sizes, s_guide, rng,
                              multi_model.atom_vocab, multi_model.bond_vocab)
        multi_mol = convert(raw[0], "connect_all", rng)

        for name in single_models:
            idx, spec = spec_by_name[name]
            err = _oracle_error(oracles[name], spec, multi_mol, targets[name])
            rank = 1 + sum(1 for e in errors[name] if e < err)
            per_condition_ranks[name].append(min(rank, n_per_condition))
        shared_ks.append(shared_structure_k(singles_smiles, n_per_condition))

    return RankReport(per_condition_ranks=per_condition_ranks,
                      shared_k=shared_ks, n_per_condition=n_per_condition)


def _hist_probs(histogram: dict[int, int]) -> np.ndarray:
    weights = np.array([histogram[s] for s in sorted(histogram)], dtype=np.float64)
    return weights / weights.sum()
