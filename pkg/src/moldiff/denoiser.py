"""Conditioned Transformer denoiser over graph tokens.

Per-token rows are embedded with a node map plus a slot-shared edge map
(summing shared edge-kind embeddings over real slots), attention carries no
positional encoding, and edge logits come from a shared pairwise head that is
symmetrized by averaging the (i, j) and (j, i) slots.  Together these keep
the whole network permutation-equivariant: relabeling atoms permutes node
logits and edge-logit blocks consistently.

Conditioning follows the gated adaptive-normalization design: each residual
branch is pre-modulated and its output renormalized and gated, with every
modulation head zero-initialized so the trunk is exactly the identity at
init.  "in_context" and "cross_attention" modes are the ablation
alternatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (ParamStore, Tensor, add, concat, div, layer_stats, matmul,
                     mul, reshape, scale, silu, softmax, sub, transpose)

MASK_BIAS = -1e9
CONDITIONING_MODES = ("adaln", "in_context", "cross_attention")


@dataclass(frozen=True)
class DenoiserConfig:
    n_max: int
    f_v: int
    f_e: int
    d: int = 64
    n_layers: int = 3
    n_heads: int = 4
    mode: str = "adaln"
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise ValueError("hidden width must divide by head count")
        if self.d % 2 != 0:
            raise ValueError("hidden width must be even")
        if self.mode not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning mode {self.mode!r}")

    @property
    def f_g(self) -> int:
        return self.f_v + self.n_max * self.f_e

    def to_json(self) -> dict:
        return {"n_max": self.n_max, "f_v": self.f_v, "f_e": self.f_e,
                "d": self.d, "n_layers": self.n_layers, "n_heads": self.n_heads,
                "mode": self.mode, "mlp_ratio": self.mlp_ratio}

    @classmethod
    def from_json(cls, doc: dict) -> "DenoiserConfig":
        return cls(**doc)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def _add_affine(store: ParamStore, base: str, rng, n_in: int, n_out: int) -> None:
    store.add(f"{base}/w", _uniform(rng, (n_in, n_out), n_in))
    store.add(f"{base}/b", np.zeros(n_out))


def _add_modulation_head(store: ParamStore, base: str, rng, d: int) -> None:
    # first affine fully zero, second affine bias zero: head(c) = 0 at init
    store.add(f"{base}/w1", np.zeros((d, d)))
    store.add(f"{base}/b1", np.zeros(d))
    store.add(f"{base}/w2", _uniform(rng, (d, d), d))
    store.add(f"{base}/b2", np.zeros(d))


def init_params(config: DenoiserConfig, condition_specs, seed: int) -> ParamStore:
    """All learnable weights: condition encoder plus the denoiser trunk."""
    from .conditioning import init_condition_params

    rng = np.random.default_rng(seed)
    store = ParamStore()
    d = config.d
    init_condition_params(store, condition_specs, d, rng)

    store.add("embed/node_w", _uniform(rng, (config.f_v, d), config.f_v))
    store.add("embed/edge_w", _uniform(rng, (config.f_e, d), config.f_e))
    store.add("embed/b", np.zeros(d))

    for layer in range(config.n_layers):
        base = f"layer{layer}"
        for name in ("wq", "wk", "wv", "wo"):
            _add_affine(store, f"{base}/attn/{name}", rng, d, d)
        hidden = config.mlp_ratio * d
        _add_affine(store, f"{base}/mlp/l1", rng, d, hidden)
        _add_affine(store, f"{base}/mlp/l2", rng, hidden, d)
        if config.mode == "adaln":
            for site in ("attn_pre", "mlp_pre"):
                for head in ("gamma", "beta"):
                    _add_modulation_head(store, f"{base}/{site}/{head}", rng, d)
            for site in ("attn_gate", "mlp_gate"):
                for head in ("gamma", "beta", "alpha"):
                    _add_modulation_head(store, f"{base}/{site}/{head}", rng, d)
        if config.mode == "cross_attention":
            for name in ("wq", "wk", "wv", "wo"):
                _add_affine(store, f"{base}/xattn/{name}", rng, d, d)

    _add_affine(store, "dec/mlp/l1", rng, d, d)
    _add_affine(store, "dec/mlp/l2", rng, d, d)
    for head in ("gamma", "beta"):
        _add_modulation_head(store, f"dec/mod/{head}", rng, d)
    _add_affine(store, "dec/node", rng, d, config.f_v)
    _add_affine(store, "dec/pair_a", rng, d, d)
    _add_affine(store, "dec/pair_b", rng, d, d)
    _add_affine(store, "dec/pair_out", rng, d, config.f_e)
    return store


# ---------------------------------------------------------------------------
# building blocks


def _affine(x: Tensor, store: ParamStore, base: str) -> Tensor:
    return add(matmul(x, store[f"{base}/w"]), store[f"{base}/b"])


def modulation_head(c: Tensor, store: ParamStore, base: str) -> Tensor:
    """Affine, SiLU, affine map of the condition embedding."""
    h = add(matmul(c, store[f"{base}/w1"]), store[f"{base}/b1"])
    return add(matmul(silu(h), store[f"{base}/w2"]), store[f"{base}/b2"])


def _rows(v: Tensor) -> Tensor:
    """(B, D) -> (B, 1, D) for broadcasting over tokens."""
    return reshape(v, (v.shape[0], 1, v.shape[1]))


def normalize_rows(h: Tensor) -> Tensor:
    mu, sigma = layer_stats(h)
    return div(sub(h, mu), sigma)


def adaln(h: Tensor, c: Tensor, store: ParamStore, base: str) -> Tensor:
    """gamma(c) * (h - mean)/std + beta(c), per token row."""
    gamma = _rows(modulation_head(c, store, f"{base}/gamma"))
    beta = _rows(modulation_head(c, store, f"{base}/beta"))
    return add(mul(gamma, normalize_rows(h)), beta)


def adaln_gate(h: Tensor, c: Tensor, store: ParamStore, base: str) -> Tensor:
    """alpha(c) * adaln(h, c); exactly zero at init, so residuals start as identity."""
    alpha = _rows(modulation_head(c, store, f"{base}/alpha"))
    return mul(alpha, adaln(h, c, store, base))


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, d = x.shape
    return transpose(reshape(x, (b, n, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def attention(h: Tensor, store: ParamStore, base: str, n_heads: int,
              mask_bias: Tensor, kv: Tensor | None = None) -> Tensor:
    """Multi-head attention; keys/values from `kv` when cross-attending."""
    source = kv if kv is not None else h
    q = _split_heads(_affine(h, store, f"{base}/wq"), n_heads)
    k = _split_heads(_affine(source, store, f"{base}/wk"), n_heads)
    v = _split_heads(_affine(source, store, f"{base}/wv"), n_heads)
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(q.shape[-1]))
    if mask_bias is not None:
        scores = add(scores, mask_bias)
    out = _merge_heads(matmul(softmax(scores, axis=-1), v))
    return _affine(out, store, f"{base}/wo")


def _mlp(h: Tensor, store: ParamStore, base: str) -> Tensor:
    return _affine(silu(_affine(h, store, f"{base}/l1")), store, f"{base}/l2")


def embed_tokens(values: np.ndarray, mask: np.ndarray,
                 config: DenoiserConfig, store: ParamStore) -> Tensor:
    """Token rows -> hidden states.

    The node one-hot goes through its own map; edge slots share one map and
    are summed as integer kind-counts over real slots, which is what makes
    the embedding invariant to slot reordering.
    """
    b, n, f_g = values.shape
    if f_g != config.f_g or n != config.n_max:
        raise ValueError(f"token shape {values.shape} does not match config")
    node = Tensor(values[:, :, :config.f_v])
    blocks = values[:, :, config.f_v:].reshape(b, n, n, config.f_e)
    counts = Tensor(np.einsum("bnjf,bj->bnf", blocks, mask.astype(np.float64)))
    h = add(matmul(node, store["embed/node_w"]), matmul(counts, store["embed/edge_w"]))
    return add(h, store["embed/b"])


def attention_mask_bias(mask: np.ndarray) -> Tensor:
    """(B, 1, 1, N) additive bias: large negative on PAD key columns."""
    bias = np.where(mask[:, None, None, :], 0.0, MASK_BIAS)
    return Tensor(bias)


def transformer_layer(h: Tensor, c: Tensor, mask_bias: Tensor,
                      store: ParamStore, layer: int, config: DenoiserConfig,
                      cond_seq: Tensor | None = None) -> Tensor:
    base = f"layer{layer}"
    if config.mode == "adaln":
        a = attention(adaln(h, c, store, f"{base}/attn_pre"), store,
                      f"{base}/attn", config.n_heads, mask_bias)
        h = add(h, adaln_gate(a, c, store, f"{base}/attn_gate"))
        m = _mlp(adaln(h, c, store, f"{base}/mlp_pre"), store, f"{base}/mlp")
        return add(h, adaln_gate(m, c, store, f"{base}/mlp_gate"))
    a = attention(normalize_rows(h), store, f"{base}/attn", config.n_heads, mask_bias)
    h = add(h, a)
    if config.mode == "cross_attention":
        x = attention(normalize_rows(h), store, f"{base}/xattn", config.n_heads,
                      None, kv=cond_seq)
        h = add(h, x)
    return add(h, _mlp(normalize_rows(h), store, f"{base}/mlp"))


def decode(h: Tensor, c: Tensor, store: ParamStore,
           config: DenoiserConfig) -> tuple[Tensor, Tensor]:
    """Final MLP + conditioned normalization -> (node logits, edge logits).

    Edge logits for slot (i, j) come from a shared nonlinear pair head on
    (h_i, h_j) and are symmetrized by averaging with the mirrored slot.
    """
    ht = _affine(silu(_affine(h, store, "dec/mlp/l1")), store, "dec/mlp/l2")
    ht = adaln(ht, c, store, "dec/mod")
    node_logits = _affine(ht, store, "dec/node")
    left = _affine(ht, store, "dec/pair_a")
    right = _affine(ht, store, "dec/pair_b")
    b, n, d = left.shape
    pre = add(reshape(left, (b, n, 1, d)), reshape(right, (b, 1, n, d)))
    edge = _affine(silu(pre), store, "dec/pair_out")
    edge_sym = scale(add(edge, transpose(edge, (0, 2, 1, 3))), 0.5)
    return node_logits, edge_sym


def forward(store: ParamStore, config: DenoiserConfig, values: np.ndarray,
            mask: np.ndarray, c: Tensor,
            cond_seq: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Full denoiser pass on a token batch.

    values: (B, N_max, F_G) one-hot rows; mask: (B, N_max) booleans;
    c: (B, D) condition embedding; cond_seq: (B, 2, D) for cross-attention.
    Returns node logits (B, N, F_V) and symmetrized edge logits (B, N, N, F_E).
    """
    h = embed_tokens(values, mask, config, store)
    if config.mode == "in_context":
        h = add(h, _rows(c))
    if config.mode == "cross_attention" and cond_seq is None:
        raise ValueError("cross_attention mode needs the condition sequence")
    bias = attention_mask_bias(mask)
    for layer in range(config.n_layers):
        h = transformer_layer(h, c, bias, store, layer, config, cond_seq=cond_seq)
    return decode(h, c, store, config)


def assemble_logit_grid(node_logits: np.ndarray, edge_logits: np.ndarray,
                        f_e_none: int = 0) -> np.ndarray:
    """Pack (node, edge) logits into the (B, N, F_G) token layout.

    Diagonal edge blocks are forced to 'none' with a large margin; this view
    is for inspection and contract tests, the samplers consume the split
    logits directly.
    """
    b, n, f_v = node_logits.shape
    f_e = edge_logits.shape[-1]
    grid = np.empty((b, n, f_v + n * f_e))
    grid[:, :, :f_v] = node_logits
    edges = edge_logits.copy()
    diag = np.arange(n)
    edges[:, diag, diag, :] = MASK_BIAS
    edges[:, diag, diag, f_e_none] = 0.0
    grid[:, :, f_v:] = edges.reshape(b, n, n * f_e)
    return grid
