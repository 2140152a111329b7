"""Graph-dependent discrete noise: marginals, schedule, corruption, posterior.

The diagonal blocks follow the usual marginal-transition construction
Q = abar*I + (1-abar)*1 m'.  The cross blocks couple node and edge updates
through atom-bond co-occurrence rows; in the default "self_preserving" mode
they carry only the (1-abar) co-occurrence term so corruption at abar=1 is
exactly the identity, while "literal" mode adds a rectangular identity with
weight abar for ablation.

The per-token posterior used in reverse sampling is built from the diagonal
blocks of the actual step chain: single-step matrices at alpha^t and
cumulative products alpha^1..alpha^(t-1), which makes t=1 an exact point
mass and keeps brute-force path enumeration exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .molgraph.datasets import Dataset
from .molgraph.tokens import GraphTokens, tokens_from_states
from .molgraph.vocab import AtomVocab, BondVocab
from .tensor import ShapeError


class EmptyDataset(ValueError):
    """No training records to estimate marginals from."""


class RangeError(ValueError):
    """Requested atom count outside [1, N_max]."""


@dataclass(frozen=True)
class Marginals:
    """Type marginals m_V, m_E and co-occurrence rows m_EV / m_VE."""

    m_v: np.ndarray          # (F_V,)
    m_e: np.ndarray          # (F_E,)
    m_ev: np.ndarray         # (F_E, F_V) rows: atom types around each bond kind
    m_ve: np.ndarray         # (F_V, F_E) normalized transpose of m_ev

    def __post_init__(self):
        for vec in (self.m_v, self.m_e):
            if not np.isclose(vec.sum(), 1.0, atol=1e-12) or (vec < 0).any():
                raise ValueError("marginal vectors must be probability vectors")
        for mat in (self.m_ev, self.m_ve):
            sums = mat.sum(axis=1)
            ok = np.isclose(sums, 1.0, atol=1e-12) | np.isclose(sums, 0.0, atol=1e-12)
            if not ok.all() or (mat < 0).any():
                raise ValueError("co-occurrence rows must sum to 1 (or be empty)")
        expected = _normalize_rows(self.m_ev.T)
        if not np.allclose(self.m_ve, expected, atol=1e-12):
            raise ValueError("m_VE must be the normalized transpose of m_EV")

    def to_json(self) -> dict:
        return {"m_v": self.m_v.tolist(), "m_e": self.m_e.tolist(),
                "m_ev": self.m_ev.tolist(), "m_ve": self.m_ve.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "Marginals":
        return cls(m_v=np.array(doc["m_v"]), m_e=np.array(doc["m_e"]),
                   m_ev=np.array(doc["m_ev"]), m_ve=np.array(doc["m_ve"]))


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    sums = mat.sum(axis=1, keepdims=True)
    out = np.zeros_like(mat, dtype=np.float64)
    nz = sums[:, 0] > 0
    out[nz] = mat[nz] / sums[nz]
    return out


def estimate_marginals(dataset: Dataset) -> Marginals:
    """Count atom types, edge-slot kinds, and endpoint co-occurrences.

    Edge slots run over all n*(n-1)/2 pairs per molecule, 'none' included;
    both endpoints of every pair count toward that pair's bond-kind row.
    PAD never appears and keeps probability zero.
    """
    train = dataset.split("train")
    if not train:
        raise EmptyDataset("empty training split")
    f_v = dataset.atom_vocab.size
    f_e = dataset.bond_vocab.size
    none = dataset.bond_vocab.none_index
    node_counts = np.zeros(f_v)
    edge_counts = np.zeros(f_e)
    ev_counts = np.zeros((f_e, f_v))
    for rec in train:
        g = rec.graph
        for a in g.atoms:
            node_counts[a] += 1
        kinds = np.full((g.n_atoms, g.n_atoms), none, dtype=int)
        for i, j, kind in g.bonds:
            kinds[i, j] = kind
            kinds[j, i] = kind
        for i in range(g.n_atoms):
            for j in range(i + 1, g.n_atoms):
                k = kinds[i, j]
                edge_counts[k] += 1
                ev_counts[k, g.atoms[i]] += 1
                ev_counts[k, g.atoms[j]] += 1
    m_v = node_counts / node_counts.sum()
    if edge_counts.sum() == 0:  # single-atom molecules only
        edge_counts[none] = 1.0
        ev_counts[none] = node_counts
    m_e = edge_counts / edge_counts.sum()
    m_ev = _normalize_rows(ev_counts)
    return Marginals(m_v=m_v, m_e=m_e, m_ev=m_ev, m_ve=_normalize_rows(m_ev.T))


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class NoiseSchedule:
    """Cosine signal-retention schedule; abar[T] clamped to exactly 0."""

    t_steps: int
    s_offset: float
    abar: np.ndarray   # (T+1,), abar[0] < 1 strictly decreasing to 0
    alpha: np.ndarray  # (T+1,), alpha[t] = abar[t]/abar[t-1]; alpha[0] = abar[0]

    def chain_abar(self, t: int) -> float:
        """Cumulative product alpha^1..alpha^t; exactly 1 at t=0."""
        return float(self.abar[t] / self.abar[0])

    def to_json(self) -> dict:
        return {"t_steps": self.t_steps, "s_offset": self.s_offset,
                "abar": self.abar.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "NoiseSchedule":
        return cosine_schedule(doc["t_steps"], doc["s_offset"])


def cosine_schedule(t_steps: int, s_offset: float = 0.008) -> NoiseSchedule:
    if t_steps < 1:
        raise ValueError("need at least one step")
    if s_offset < 0:
        raise ValueError("schedule offset must be >= 0")
    t = np.arange(t_steps + 1, dtype=np.float64)
    abar = np.cos(0.5 * np.pi * (t / t_steps + s_offset) / (1.0 + s_offset)) ** 2
    abar[-1] = 0.0
    alpha = np.empty_like(abar)
    alpha[0] = abar[0]
    alpha[1:] = abar[1:] / abar[:-1]
    return NoiseSchedule(t_steps=t_steps, s_offset=s_offset, abar=abar, alpha=alpha)


# ---------------------------------------------------------------------------
# transition blocks


@dataclass(frozen=True)
class TransitionBlocks:
    q_v: np.ndarray
    q_e: np.ndarray
    q_ev: np.ndarray
    q_ve: np.ndarray
    abar_level: float
    coupling_mode: str


def diagonal_block(m_vec: np.ndarray, abar: float) -> np.ndarray:
    """abar*I + (1-abar) * rows of m."""
    f = m_vec.shape[0]
    return abar * np.eye(f) + (1.0 - abar) * np.broadcast_to(m_vec, (f, f))


def _rect_eye(rows: int, cols: int) -> np.ndarray:
    out = np.zeros((rows, cols))
    k = min(rows, cols)
    out[np.arange(k), np.arange(k)] = 1.0
    return out


def build_blocks(m: Marginals, abar: float,
                 mode: str = "self_preserving") -> TransitionBlocks:
    if not (0.0 <= abar <= 1.0):
        raise ValueError(f"abar {abar} outside [0, 1]")
    if mode not in ("self_preserving", "literal"):
        raise ValueError(f"unknown coupling mode {mode!r}")
    q_v = diagonal_block(m.m_v, abar)
    q_e = diagonal_block(m.m_e, abar)
    if mode == "self_preserving":
        q_ev = (1.0 - abar) * m.m_ev
        q_ve = (1.0 - abar) * m.m_ve
    else:
        f_e, f_v = m.m_ev.shape
        q_ev = abar * _rect_eye(f_e, f_v) + (1.0 - abar) * m.m_ev
        q_ve = abar * _rect_eye(f_v, f_e) + (1.0 - abar) * m.m_ve
    return TransitionBlocks(q_v=q_v, q_e=q_e, q_ev=q_ev, q_ve=q_ve,
                            abar_level=abar, coupling_mode=mode)


# ---------------------------------------------------------------------------
# forward corruption


def sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Categorical draw per row of an (..., F) probability array."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])
    return np.minimum((u[..., None] > cdf).sum(axis=-1), probs.shape[-1] - 1)


def _corrupt(x: GraphTokens, blocks: TransitionBlocks, lambda_couple: float,
             rng: np.random.Generator) -> GraphTokens:
    f_v, f_e, n = x.f_v, x.f_e, x.n_max
    if blocks.q_v.shape != (f_v, f_v) or blocks.q_e.shape != (f_e, f_e):
        raise ShapeError("transition blocks do not match token vocabularies")
    if lambda_couple < 0:
        raise ValueError("lambda_couple must be >= 0")
    node_states = x.node_states()
    edge_states = x.edge_states()
    mask = x.mask
    real = np.flatnonzero(mask)
    nr = real.size

    new_nodes = np.full(n, x.atom_vocab.pad_index, dtype=int)
    new_edges = np.full((n, n), x.bond_vocab.none_index, dtype=int)
    if nr == 0:
        return tokens_from_states(new_nodes, new_edges, mask, x.atom_vocab, x.bond_vocab)

    sub_nodes = node_states[real]
    sub_edges = edge_states[np.ix_(real, real)]

    # node channel: own transition row plus coupled co-occurrence rows of
    # every incident edge slot (diagonal "none" slot included)
    counts = np.zeros((nr, f_e))
    flat = sub_edges.reshape(nr, nr)
    for k in range(f_e):
        counts[:, k] = (flat == k).sum(axis=1)
    node_probs = blocks.q_v[sub_nodes] + lambda_couple * counts @ blocks.q_ev
    totals = node_probs.sum(axis=1, keepdims=True)
    if (totals <= 0).any():
        raise ValueError("degenerate node transition row")
    node_probs /= totals
    new_nodes[real] = sample_rows(node_probs, rng)

    # edge channel: per unordered pair, own row plus averaged endpoint rows
    cross = blocks.q_ve[sub_nodes]
    edge_probs = (blocks.q_e[sub_edges]
                  + 0.5 * lambda_couple * (cross[:, None, :] + cross[None, :, :]))
    totals = edge_probs.sum(axis=2, keepdims=True)
    if (totals <= 0).any():
        raise ValueError("degenerate edge transition row")
    edge_probs /= totals
    drawn = sample_rows(edge_probs, rng)
    iu = np.triu_indices(nr, k=1)
    sub_out = np.full((nr, nr), x.bond_vocab.none_index, dtype=int)
    sub_out[iu] = drawn[iu]
    sub_out = sub_out + sub_out.T  # none index is 0, so mirroring is additive
    new_edges[np.ix_(real, real)] = sub_out
    return tokens_from_states(new_nodes, new_edges, mask, x.atom_vocab, x.bond_vocab)


def forward_jump_sample(x0: GraphTokens, blocks: TransitionBlocks,
                        lambda_couple: float, rng: np.random.Generator) -> GraphTokens:
    """Corrupt clean tokens with blocks built at cumulative abar^t."""
    return _corrupt(x0, blocks, lambda_couple, rng)


def forward_step_sample(x_prev: GraphTokens, blocks: TransitionBlocks,
                        lambda_couple: float, rng: np.random.Generator) -> GraphTokens:
    """One corruption step; blocks built at single-step alpha^t."""
    return _corrupt(x_prev, blocks, lambda_couple, rng)


# ---------------------------------------------------------------------------
# reverse-time posterior


def _posterior_kernel(t: int, schedule: NoiseSchedule, m_vec: np.ndarray) -> np.ndarray:
    """K[x0, xt, z] = q(z at t-1 | xt, x0), normalized over z."""
    if t < 1:
        raise ValueError("posterior needs t >= 1")
    q_step = diagonal_block(m_vec, float(schedule.alpha[t]))
    q_cum = diagonal_block(m_vec, schedule.chain_abar(t - 1))
    # weight(z) = q_step[z -> xt] * q_cum[x0 -> z]
    w = q_cum[:, None, :] * q_step.T[None, :, :]
    totals = w.sum(axis=2, keepdims=True)
    bad = totals[:, :, 0] <= 0
    if bad.any():
        # unreachable (x0, xt) combinations (xt has zero marginal and differs
        # from x0); never queried, but keep the kernel well formed
        w[bad] = np.eye(m_vec.shape[0])[np.nonzero(bad)[0]]
        totals = w.sum(axis=2, keepdims=True)
    return w / totals


def posterior(x_t_token: np.ndarray, x0_candidate: np.ndarray, t: int,
              schedule: NoiseSchedule, m: Marginals, kind: str) -> np.ndarray:
    """q(x^{t-1} = z | x^t, x^0) over states; point mass at x^0 when t=1."""
    m_vec = m.m_v if kind == "node" else m.m_e
    kernel = _posterior_kernel(t, schedule, m_vec)
    xt = int(np.argmax(x_t_token))
    x0 = int(np.argmax(x0_candidate))
    return kernel[x0, xt, :].copy()


def posterior_mix(xt_states: np.ndarray, p_hat: np.ndarray, t: int,
                  schedule: NoiseSchedule, m_vec: np.ndarray) -> np.ndarray:
    """Marginalize the posterior over x0 predictions, batched over tokens.

    xt_states: (n,) int states at t; p_hat: (n, F) predicted x0 law.
    Returns (n, F) law of the state at t-1.
    """
    kernel = _posterior_kernel(t, schedule, m_vec)
    sel = kernel[:, xt_states, :]  # (F_x0, n, F_z)
    return np.einsum("nf,fnz->nz", p_hat, sel)


# ---------------------------------------------------------------------------
# stationary prior


def stationary_sample(m: Marginals, n_atoms: int, n_max: int,
                      atom_vocab: AtomVocab, bond_vocab: BondVocab,
                      rng: np.random.Generator) -> GraphTokens:
    """Fully-noised tokens: nodes iid from m_V, pair slots iid from m_E."""
    if not (1 <= n_atoms <= n_max):
        raise RangeError(f"n_atoms {n_atoms} outside [1, {n_max}]")
    nodes = np.full(n_max, atom_vocab.pad_index, dtype=int)
    nodes[:n_atoms] = sample_rows(np.broadcast_to(m.m_v, (n_atoms, m.m_v.size)), rng)
    edges = np.full((n_max, n_max), bond_vocab.none_index, dtype=int)
    if n_atoms > 1:
        iu = np.triu_indices(n_atoms, k=1)
        drawn = sample_rows(np.broadcast_to(m.m_e, (iu[0].size, m.m_e.size)), rng)
        edges[iu] = drawn
        edges[:n_atoms, :n_atoms] += edges[:n_atoms, :n_atoms].T
    mask = np.zeros(n_max, dtype=bool)
    mask[:n_atoms] = True
    return tokens_from_states(nodes, edges, mask, atom_vocab, bond_vocab)
