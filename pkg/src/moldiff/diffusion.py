"""Training and predictor-free guided sampling for the graph denoiser.

Training draws a timestep per item, corrupts clean tokens with the
graph-dependent jump kernel, randomly nulls the condition set, and minimizes
masked cross-entropy on clean node and edge targets (each unordered pair
counted once).  Sampling starts from the stationary token prior and walks the
reverse chain; at every step the model's clean-graph prediction is computed
twice (conditional and null), combined in log space with the guidance scale,
marginalized through the analytic per-token posterior, and sampled.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .conditioning import (ConditionSet, combine, condition_sum, drop_conditions,
                           encode_timestep, null_set)
from .denoiser import DenoiserConfig, forward, init_params
from .molgraph.datasets import Dataset, EXACT_ORACLES
from .molgraph.graph import MolecularGraph, check_valence, connect_components, largest_component
from .molgraph.tokens import GraphTokens, from_tokens, to_tokens
from .molgraph.vocab import AtomVocab, BondVocab
from .noise import (Marginals, NoiseSchedule, build_blocks, cosine_schedule,
                    estimate_marginals, forward_jump_sample, posterior_mix,
                    stationary_sample)
from .tensor import (ParamStore, Tape, Tensor, add, backward, concat,
                     cross_entropy, opt_step, reshape, ShapeError)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    t_steps: int = 200
    batch_size: int = 32
    lr: float = 3e-4
    drop_ratio: float = 0.1
    lambda_couple: float = 1.0
    coupling_mode: str = "self_preserving"
    seed: int = 0
    s_offset: float = 0.008
    optimizer: str = "adamw"
    val_sample_count: int = 64
    val_sample_every: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.t_steps < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs/t_steps/batch_size/lr must be positive")
        if not (0.0 <= self.drop_ratio <= 1.0):
            raise ValueError("drop_ratio must lie in [0, 1]")
        if self.lambda_couple < 0:
            raise ValueError("lambda_couple must be >= 0")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class SampleConfig:
    s_guide: float = 2.0
    n_atoms: int | str = "auto"
    conversion: str = "connect_all"
    seed: int = 0

    def __post_init__(self):
        if self.s_guide < 0:
            raise ValueError("s_guide must be >= 0")
        if self.conversion not in ("connect_all", "lcc"):
            raise ValueError(f"unknown conversion {self.conversion!r}")


def epoch_rng(seed: int, epoch: int, stream: int = 0) -> np.random.Generator:
    """Independent deterministic stream per (seed, epoch); resume-safe."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(epoch, stream)))


# ---------------------------------------------------------------------------
# batch assembly


def _stack_tokens(tokens: list[GraphTokens]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([t.values for t in tokens]),
            np.stack([t.mask for t in tokens]))


def _condition_embeddings(csets, ts, specs, store, t_max, d) -> Tensor:
    rows = [combine(cset, t, specs, store, t_max, d) for cset, t in zip(csets, ts)]
    return concat(rows, axis=0)


def _condition_sequence(csets, ts, specs, store, t_max, d) -> Tensor:
    """(B, 2, D) [timestep; condition-sum] rows for cross-attention mode."""
    rows = []
    for cset, t in zip(csets, ts):
        t_enc = Tensor(encode_timestep(t, t_max, d)[None, :])
        csum = condition_sum(cset, specs, store, d)
        rows.append(reshape(concat([t_enc, csum], axis=0), (1, 2, d)))
    return concat(rows, axis=0)


def _pair_mask(mask: np.ndarray) -> np.ndarray:
    """(B, N, N) floats marking each real unordered pair once (i < j)."""
    b, n = mask.shape
    upper = np.triu(np.ones((n, n)), k=1)
    both = mask[:, :, None] & mask[:, None, :]
    return both * upper


def _edge_blocks(values: np.ndarray, f_v: int, f_e: int) -> np.ndarray:
    b, n, _ = values.shape
    return values[:, :, f_v:].reshape(b, n, n, f_e)


# ---------------------------------------------------------------------------
# training


def batch_loss(batch, store: ParamStore, denoiser_cfg: DenoiserConfig,
               schedule: NoiseSchedule, marginals: Marginals, cfg: TrainConfig,
               specs, rng: np.random.Generator, blocks_cache: dict | None = None,
               corrupt: bool = True) -> Tensor:
    """Masked node + edge cross-entropy on a corrupted batch (tape-recorded)."""
    if blocks_cache is None:
        blocks_cache = {}
    tokens0, tokens_t, ts, csets = [], [], [], []
    for rec in batch:
        t = int(rng.integers(1, cfg.t_steps + 1))
        x0 = to_tokens(rec.graph, denoiser_cfg.n_max)
        if corrupt:
            blocks = blocks_cache.get(t)
            if blocks is None:
                blocks = build_blocks(marginals, float(schedule.abar[t]), cfg.coupling_mode)
                blocks_cache[t] = blocks
            xt = forward_jump_sample(x0, blocks, cfg.lambda_couple, rng)
        else:
            xt = x0
        tokens0.append(x0)
        tokens_t.append(xt)
        ts.append(t)
        csets.append(drop_conditions(rec.cset, cfg.drop_ratio, rng))

    values_t, mask = _stack_tokens(tokens_t)
    values_0, _ = _stack_tokens(tokens0)
    c = _condition_embeddings(csets, ts, specs, store, cfg.t_steps, denoiser_cfg.d)
    cond_seq = None
    if denoiser_cfg.mode == "cross_attention":
        cond_seq = _condition_sequence(csets, ts, specs, store, cfg.t_steps, denoiser_cfg.d)

    node_logits, edge_logits = forward(store, denoiser_cfg, values_t, mask, c, cond_seq=cond_seq)
    node_targets = Tensor(values_0[:, :, :denoiser_cfg.f_v])
    edge_targets = Tensor(_edge_blocks(values_0, denoiser_cfg.f_v, denoiser_cfg.f_e))
    node_ce = cross_entropy(node_logits, node_targets, Tensor(mask.astype(np.float64)))
    edge_ce = cross_entropy(edge_logits, edge_targets, Tensor(_pair_mask(mask)))
    return add(node_ce, edge_ce)


def train_step(batch, store: ParamStore, denoiser_cfg: DenoiserConfig,
               schedule: NoiseSchedule, marginals: Marginals, cfg: TrainConfig,
               specs, rng: np.random.Generator, blocks_cache: dict | None = None) -> float:
    """One optimizer update; returns the batch loss value."""
    with Tape() as tape:
        loss = batch_loss(batch, store, denoiser_cfg, schedule, marginals, cfg,
                          specs, rng, blocks_cache=blocks_cache)
        grads = backward(loss, tape)
    opt_step(store, grads, cfg.lr, kind=cfg.optimizer)
    return loss.item()


@dataclass
class TrainResult:
    store: ParamStore
    log: list[dict]
    schedule: NoiseSchedule
    marginals: Marginals
    denoiser_cfg: DenoiserConfig
    specs: list
    size_histogram: dict[int, int]
    atom_vocab: AtomVocab
    bond_vocab: BondVocab
    best_epoch: int = -1
    best_store: ParamStore | None = None


def _clone_store(store: ParamStore) -> ParamStore:
    out = ParamStore(dtype=store.dtype)
    for name, p in store.items():
        out.add(name, p.data.copy())
    out._m = {k: v.copy() for k, v in store._m.items()}
    out._v = {k: v.copy() for k, v in store._v.items()}
    out.step = store.step
    return out


def train(dataset: Dataset, cfg: TrainConfig,
          denoiser_cfg: DenoiserConfig | None = None,
          store: ParamStore | None = None, start_epoch: int = 0,
          log: list[dict] | None = None,
          progress: bool = False) -> TrainResult:
    """Full training run with per-epoch validation logging.

    Per-epoch RNG streams derive from (seed, epoch), so resuming from a
    checkpoint at epoch k reproduces an uninterrupted run bit for bit.
    Validation records the loss every epoch and sampling metrics (validity on
    a small draw, condition error against exact oracles) every
    `val_sample_every` epochs.  The best epoch by validation loss is kept.
    """
    if denoiser_cfg is None:
        denoiser_cfg = DenoiserConfig(n_max=dataset.max_atoms(),
                                      f_v=dataset.atom_vocab.size,
                                      f_e=dataset.bond_vocab.size)
    schedule = cosine_schedule(cfg.t_steps, cfg.s_offset)
    marginals = estimate_marginals(dataset)
    if store is None:
        store = init_params(denoiser_cfg, dataset.specs, cfg.seed)
    log = list(log) if log else []
    train_recs = dataset.split("train")
    valid_recs = dataset.split("valid")
    size_hist = dataset.size_histogram("train")
    result = TrainResult(store=store, log=log, schedule=schedule, marginals=marginals,
                         denoiser_cfg=denoiser_cfg, specs=list(dataset.specs),
                         size_histogram=size_hist, atom_vocab=dataset.atom_vocab,
                         bond_vocab=dataset.bond_vocab)
    best_val = min((entry["val_loss"] for entry in log), default=np.inf)

    blocks_cache: dict = {}
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.time()
        rng = epoch_rng(cfg.seed, epoch)
        order = rng.permutation(len(train_recs))
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_recs[i] for i in order[lo:lo + cfg.batch_size]]
            losses.append(train_step(batch, store, denoiser_cfg, schedule, marginals,
                                     cfg, dataset.specs, rng, blocks_cache))
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses))}

        val_rng = epoch_rng(cfg.seed, epoch, stream=1)
        val_losses = []
        for lo in range(0, len(valid_recs), cfg.batch_size):
            batch = valid_recs[lo:lo + cfg.batch_size]
            loss = batch_loss(batch, store, denoiser_cfg, schedule, marginals,
                              cfg, dataset.specs, val_rng, blocks_cache)
            val_losses.append(loss.item())
        entry["val_loss"] = float(np.mean(val_losses)) if val_losses else float("nan")

        if cfg.val_sample_count > 0 and (epoch + 1) % cfg.val_sample_every == 0 and valid_recs:
            entry.update(_validation_samples(result, cfg, valid_recs,
                                             epoch_rng(cfg.seed, epoch, stream=2)))
        entry["seconds"] = round(time.time() - t0, 3)
        log.append(entry)
        if progress:
            print(f"epoch {epoch}: " + " ".join(f"{k}={v}" for k, v in entry.items() if k != "epoch"))
        if entry["val_loss"] <= best_val:
            best_val = entry["val_loss"]
            result.best_epoch = epoch
            result.best_store = _clone_store(store)
    if result.best_store is None:
        result.best_store = _clone_store(store)
        result.best_epoch = start_epoch - 1
    return result


def _validation_samples(result: "TrainResult", cfg: TrainConfig, valid_recs,
                        rng: np.random.Generator) -> dict:
    """Lightweight sampling metrics on the validation conditions."""
    count = min(cfg.val_sample_count, len(valid_recs))
    csets = [valid_recs[i % len(valid_recs)].cset for i in range(count)]
    graphs = sample_raw_many(result.store, result.denoiser_cfg, result.schedule,
                             result.marginals, result.specs, csets,
                             [valid_recs[i % len(valid_recs)].graph.n_atoms for i in range(count)],
                             s_guide=1.0, rng=rng, atom_vocab=result.atom_vocab,
                             bond_vocab=result.bond_vocab)
    out = {"val_validity": float(np.mean([check_valence(g).valid for g in graphs]))}
    for idx, spec in enumerate(result.specs):
        oracle = EXACT_ORACLES.get(spec.name)
        if oracle is None:
            continue
        errs, hits = [], []
        for g, cset in zip(graphs, csets):
            target = cset.values[idx]
            if target is None:
                continue
            got = oracle(g)
            if spec.kind == "numeric":
                errs.append(abs(float(got) - float(target)))
            else:
                hits.append(float(spec.label_index(got) == int(target)))
        if errs:
            out[f"val_mae_{spec.name}"] = float(np.mean(errs))
        if hits:
            out[f"val_acc_{spec.name}"] = float(np.mean(hits))
    return out


# ---------------------------------------------------------------------------
# guidance and reverse sampling


def guidance_combine(logp_uncond: np.ndarray, logp_cond: np.ndarray,
                     s_guide: float) -> np.ndarray:
    """(1-s) log p_u + s log p_c, renormalized over the last axis.

    The lerp form makes s=0 return the unconditional and s=1 the conditional
    log-probabilities bit for bit.
    """
    logp_uncond = np.asarray(logp_uncond, dtype=np.float64)
    logp_cond = np.asarray(logp_cond, dtype=np.float64)
    if logp_uncond.shape != logp_cond.shape:
        raise ShapeError(f"{logp_uncond.shape} vs {logp_cond.shape}")
    if not (np.isfinite(logp_uncond).all() and np.isfinite(logp_cond).all()):
        raise ValueError("guidance inputs must be finite log-probabilities")
    combined = (1.0 - s_guide) * logp_uncond + s_guide * logp_cond
    shift = combined.max(axis=-1, keepdims=True)
    lse = shift + np.log(np.exp(combined - shift).sum(axis=-1, keepdims=True))
    return combined - lse


def _softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_np(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, 1e-300))


def predict_x0(store: ParamStore, denoiser_cfg: DenoiserConfig,
               values: np.ndarray, mask: np.ndarray, csets, t: int,
               specs, t_steps: int, s_guide: float) -> tuple[np.ndarray, np.ndarray]:
    """Guided clean-graph law per token: two passes, combined in log space.

    Returns node probs (B, N, F_V) with PAD masked out for real tokens, and
    edge probs (B, N, N, F_E).
    """
    b = values.shape[0]
    d = denoiser_cfg.d
    ts = [t] * b

    def run(cset_list):
        c = _condition_embeddings(cset_list, ts, specs, store, t_steps, d)
        seq = None
        if denoiser_cfg.mode == "cross_attention":
            seq = _condition_sequence(cset_list, ts, specs, store, t_steps, d)
        node_logits, edge_logits = forward(store, denoiser_cfg, values, mask, c, cond_seq=seq)
        return node_logits.data, edge_logits.data

    nl_c, el_c = run(list(csets))
    nulls = [null_set(specs)] * b
    nl_u, el_u = run(nulls)
    node_logp = guidance_combine(_log_np(_softmax_np(nl_u)), _log_np(_softmax_np(nl_c)), s_guide)
    edge_logp = guidance_combine(_log_np(_softmax_np(el_u)), _log_np(_softmax_np(el_c)), s_guide)
    node_probs = np.exp(node_logp)
    edge_probs = np.exp(edge_logp)
    # a real token can never be PAD
    node_probs[:, :, -1] = 0.0
    node_probs /= node_probs.sum(axis=-1, keepdims=True)
    return node_probs, edge_probs


def _states_to_values(node_states: np.ndarray, edge_states: np.ndarray,
                      f_v: int, f_e: int) -> np.ndarray:
    """One-hot (B, N, F_G) grid from integer state grids."""
    b, n = node_states.shape
    values = np.zeros((b, n, f_v + n * f_e))
    np.put_along_axis(values[:, :, :f_v], node_states[:, :, None], 1.0, axis=2)
    blocks = np.zeros((b, n, n, f_e))
    np.put_along_axis(blocks, edge_states[:, :, :, None], 1.0, axis=3)
    values[:, :, f_v:] = blocks.reshape(b, n, n * f_e)
    return values


def denoise_step_batch(values: np.ndarray, mask: np.ndarray, csets, t: int,
                       store: ParamStore, denoiser_cfg: DenoiserConfig,
                       schedule: NoiseSchedule, marginals: Marginals,
                       specs, s_guide: float, rng: np.random.Generator) -> np.ndarray:
    """One reverse step on a token batch; returns new values array."""
    from .noise import sample_rows

    b, n, _ = values.shape
    f_v, f_e = denoiser_cfg.f_v, denoiser_cfg.f_e
    node_probs, edge_probs = predict_x0(store, denoiser_cfg, values, mask, csets,
                                        t, specs, schedule.t_steps, s_guide)
    node_states = values[:, :, :f_v].argmax(axis=2)
    edge_states = _edge_blocks(values, f_v, f_e).argmax(axis=3)

    new_nodes = np.full((b, n), f_v - 1, dtype=int)  # PAD everywhere but real rows
    new_edges = np.zeros((b, n, n), dtype=int)

    rows = np.nonzero(mask)
    mix = posterior_mix(node_states[rows], node_probs[rows], t, schedule, marginals.m_v)
    new_nodes[rows] = sample_rows(mix, rng)

    pairs = np.nonzero(_pair_mask(mask) > 0)
    if pairs[0].size:
        mix = posterior_mix(edge_states[pairs], edge_probs[pairs], t, schedule, marginals.m_e)
        drawn = sample_rows(mix, rng)
        new_edges[pairs] = drawn
        new_edges[pairs[0], pairs[2], pairs[1]] = drawn
    return _states_to_values(new_nodes, new_edges, f_v, f_e)


def denoise_step(tokens: GraphTokens, t: int, cset: ConditionSet,
                 store: ParamStore, denoiser_cfg: DenoiserConfig,
                 schedule: NoiseSchedule, marginals: Marginals, specs,
                 s_guide: float, rng: np.random.Generator) -> GraphTokens:
    """Single-molecule reverse step returning GraphTokens."""
    values = denoise_step_batch(tokens.values[None], tokens.mask[None], [cset], t,
                                store, denoiser_cfg, schedule, marginals, specs,
                                s_guide, rng)
    return GraphTokens(values=values[0], mask=tokens.mask.copy(),
                       atom_vocab=tokens.atom_vocab, bond_vocab=tokens.bond_vocab)


def draw_n_atoms(size_histogram: dict[int, int], rng: np.random.Generator) -> int:
    sizes = sorted(size_histogram)
    weights = np.array([size_histogram[s] for s in sizes], dtype=np.float64)
    return int(rng.choice(sizes, p=weights / weights.sum()))


def sample_raw_many(store: ParamStore, denoiser_cfg: DenoiserConfig,
                    schedule: NoiseSchedule, marginals: Marginals, specs,
                    csets, n_atoms_list, s_guide: float,
                    rng: np.random.Generator,
                    atom_vocab: AtomVocab, bond_vocab: BondVocab) -> list[MolecularGraph]:
    """Run the reverse chain for a batch of condition sets; no conversion."""
    starts = [stationary_sample(marginals, n, denoiser_cfg.n_max, atom_vocab,
                                bond_vocab, rng) for n in n_atoms_list]
    values, mask = _stack_tokens(starts)
    for t in range(schedule.t_steps, 0, -1):
        values = denoise_step_batch(values, mask, csets, t, store, denoiser_cfg,
                                    schedule, marginals, specs, s_guide, rng)
    out = []
    for i in range(len(csets)):
        toks = GraphTokens(values=values[i], mask=mask[i],
                           atom_vocab=atom_vocab, bond_vocab=bond_vocab)
        out.append(from_tokens(toks))
    return out


def convert(graph: MolecularGraph, conversion: str, rng: np.random.Generator) -> MolecularGraph:
    if conversion == "connect_all":
        return connect_components(graph, rng)
    if conversion == "lcc":
        return largest_component(graph)
    raise ValueError(f"unknown conversion {conversion!r}")


def sample(store: ParamStore, cset: ConditionSet, sample_cfg: SampleConfig,
           schedule: NoiseSchedule, marginals: Marginals,
           denoiser_cfg: DenoiserConfig, specs, size_histogram: dict[int, int],
           rng: np.random.Generator, atom_vocab: AtomVocab,
           bond_vocab: BondVocab | None = None) -> MolecularGraph:
    """Generate one molecule (reverse chain + component conversion)."""
    bond_vocab = bond_vocab or BondVocab()
    n = (draw_n_atoms(size_histogram, rng) if sample_cfg.n_atoms == "auto"
         else int(sample_cfg.n_atoms))
    raw = sample_raw_many(store, denoiser_cfg, schedule, marginals, specs,
                          [cset], [n], sample_cfg.s_guide, rng,
                          atom_vocab=atom_vocab, bond_vocab=bond_vocab)[0]
    return convert(raw, sample_cfg.conversion, rng)
