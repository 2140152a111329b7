"""Property conditions and their encoders into the shared D-dim embedding.

Numeric conditions are min-max normalized with training-split statistics and
encoded by soft clustering (default), a direct affine map, or interval
one-hots; categorical conditions go through an embedding table whose last row
is the learned null.  The timestep is a sinusoidal encoding summed into the
combined embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .tensor import ParamStore, Tensor, add, matmul, softmax

DEFAULT_CLUSTERS = 16
DEFAULT_INTERVALS = 10

NUMERIC_ENCODERS = ("cluster", "direct", "interval")


class RangeError(ValueError):
    """Categorical value outside the declared cardinality."""


@dataclass(frozen=True)
class ConditionSpec:
    """One named condition: numeric (with a value range) or categorical."""

    name: str
    kind: str
    encoder: str = "cluster"
    value_range: tuple[float, float] | None = None
    cardinality: int | None = None
    labels: tuple[str, ...] | None = None
    n_interval: int = DEFAULT_INTERVALS

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ValueError(f"unknown condition kind {self.kind!r}")
        if self.kind == "numeric" and self.encoder not in NUMERIC_ENCODERS:
            raise ValueError(f"unknown numeric encoder {self.encoder!r}")
        if self.cardinality is not None and self.cardinality < 2:
            raise ValueError("categorical cardinality must be >= 2")
        if self.value_range is not None:
            lo, hi = self.value_range
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValueError(f"bad value_range {self.value_range}")
        if self.n_interval < 2:
            raise ValueError("n_interval must be >= 2")

    def normalize(self, x: float) -> float:
        lo, hi = self.value_range
        return (float(x) - lo) / (hi - lo)

    def label_index(self, label: str) -> int:
        return self.labels.index(label)

    def to_json(self) -> dict:
        return {
            "name": self.name, "kind": self.kind, "encoder": self.encoder,
            "value_range": list(self.value_range) if self.value_range else None,
            "cardinality": self.cardinality,
            "labels": list(self.labels) if self.labels else None,
            "n_interval": self.n_interval,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ConditionSpec":
        return cls(
            name=doc["name"], kind=doc["kind"], encoder=doc.get("encoder", "cluster"),
            value_range=tuple(doc["value_range"]) if doc.get("value_range") else None,
            cardinality=doc.get("cardinality"),
            labels=tuple(doc["labels"]) if doc.get("labels") else None,
            n_interval=doc.get("n_interval", DEFAULT_INTERVALS),
        )


@dataclass(frozen=True)
class ConditionSet:
    """Per-spec optional values; None means dropped/unknown."""

    values: tuple

    def __len__(self) -> int:
        return len(self.values)


def null_set(specs) -> ConditionSet:
    return ConditionSet(values=(None,) * len(specs))


def validate_set(cset: ConditionSet, specs) -> None:
    if len(cset.values) != len(specs):
        raise ValueError(f"{len(cset.values)} values for {len(specs)} conditions")
    for value, spec in zip(cset.values, specs):
        if value is None:
            continue
        if spec.kind == "numeric":
            if not math.isfinite(float(value)):
                raise ValueError(f"non-finite value for {spec.name}")
        else:
            v = int(value)
            if not (0 <= v < spec.cardinality):
                raise RangeError(f"label index {v} out of range for {spec.name}")


# ---------------------------------------------------------------------------
# parameters


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def init_condition_params(store: ParamStore, specs, d: int,
                          rng: np.random.Generator, k: int = DEFAULT_CLUSTERS,
                          prefix: str = "cond") -> None:
    """Register every condition-encoder parameter under `prefix`."""
    for idx, spec in enumerate(specs):
        base = f"{prefix}/{idx}"
        if spec.kind == "categorical":
            rows = spec.cardinality + 1  # last row is the null embedding
            store.add(f"{base}/table", _uniform(rng, (rows, d), rows))
            continue
        store.add(f"{base}/null", _uniform(rng, (d,), d))
        if spec.encoder == "cluster":
            store.add(f"{base}/w1", _uniform(rng, (1, k), 1))
            store.add(f"{base}/b1", np.zeros(k))
            store.add(f"{base}/w2", _uniform(rng, (k, d), k))
            store.add(f"{base}/b2", np.zeros(d))
        elif spec.encoder == "direct":
            store.add(f"{base}/w", _uniform(rng, (1, d), 1))
            store.add(f"{base}/b", np.zeros(d))
        else:  # interval
            store.add(f"{base}/table", _uniform(rng, (spec.n_interval, d), spec.n_interval))


# ---------------------------------------------------------------------------
# encoders


def encode_timestep(t: int, t_max: int, d: int) -> np.ndarray:
    """Sinusoidal encoding: D/2 sin components then D/2 cos, base 10000."""
    if not (0 <= t <= t_max):
        raise ValueError(f"timestep {t} outside [0, {t_max}]")
    if d % 2 != 0:
        raise ValueError("embedding width must be even")
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


def _null_embedding(store: ParamStore, base: str) -> Tensor:
    null = store[f"{base}/null"]
    from .tensor import reshape
    return reshape(null, (1, null.shape[0]))


def encode_numeric_cluster(x, spec: ConditionSpec, store: ParamStore, base: str) -> Tensor:
    if x is None:
        return _null_embedding(store, base)
    xn = Tensor([[spec.normalize(x)]])
    logits = add(matmul(xn, store[f"{base}/w1"]), store[f"{base}/b1"])
    assign = softmax(logits, axis=-1)
    return add(matmul(assign, store[f"{base}/w2"]), store[f"{base}/b2"])


def encode_numeric_direct(x, spec: ConditionSpec, store: ParamStore, base: str) -> Tensor:
    if x is None:
        return _null_embedding(store, base)
    xn = Tensor([[spec.normalize(x)]])
    return add(matmul(xn, store[f"{base}/w"]), store[f"{base}/b"])


def interval_index(x, spec: ConditionSpec) -> int:
    """floor(normalized * N) clamped into [0, N-1]."""
    xn = spec.normalize(x)
    return min(max(int(math.floor(xn * spec.n_interval)), 0), spec.n_interval - 1)


def encode_numeric_interval(x, spec: ConditionSpec, store: ParamStore, base: str) -> Tensor:
    if x is None:
        return _null_embedding(store, base)
    onehot = np.zeros((1, spec.n_interval))
    onehot[0, interval_index(x, spec)] = 1.0
    return matmul(Tensor(onehot), store[f"{base}/table"])


def encode_categorical(v, spec: ConditionSpec, store: ParamStore, base: str) -> Tensor:
    rows = spec.cardinality + 1
    if v is None:
        row = spec.cardinality
    else:
        row = int(v)
        if not (0 <= row < spec.cardinality):
            raise RangeError(f"label index {row} out of range for {spec.name}")
    onehot = np.zeros((1, rows))
    onehot[0, row] = 1.0
    return matmul(Tensor(onehot), store[f"{base}/table"])


def encode_condition(value, spec: ConditionSpec, store: ParamStore, base: str) -> Tensor:
    if spec.kind == "categorical":
        return encode_categorical(value, spec, store, base)
    if spec.encoder == "cluster":
        return encode_numeric_cluster(value, spec, store, base)
    if spec.encoder == "direct":
        return encode_numeric_direct(value, spec, store, base)
    return encode_numeric_interval(value, spec, store, base)


def combine(cset: ConditionSet, t: int, specs, store: ParamStore,
            t_max: int, d: int, prefix: str = "cond") -> Tensor:
    """c = timestep encoding + sum of per-condition encodings, shape (1, D)."""
    c = Tensor(encode_timestep(t, t_max, d)[None, :])
    for idx, (value, spec) in enumerate(zip(cset.values, specs)):
        c = add(c, encode_condition(value, spec, store, f"{prefix}/{idx}"))
    return c


def condition_sum(cset: ConditionSet, specs, store: ParamStore, d: int,
                  prefix: str = "cond") -> Tensor:
    """Sum of condition encodings without the timestep (cross-attention mode)."""
    c = Tensor(np.zeros((1, d)))
    for idx, (value, spec) in enumerate(zip(cset.values, specs)):
        c = add(c, encode_condition(value, spec, store, f"{prefix}/{idx}"))
    return c


def drop_conditions(cset: ConditionSet, ratio: float,
                    rng: np.random.Generator, per_condition: bool = False) -> ConditionSet:
    """Null out the whole set with probability `ratio` (joint drop).

    With per_condition=True each value is dropped independently instead.
    """
    if not (0.0 <= ratio <= 1.0):
        raise ValueError(f"drop ratio {ratio} outside [0, 1]")
    if per_condition:
        values = tuple(None if rng.random() < ratio else v for v in cset.values)
        return ConditionSet(values=values)
    if rng.random() < ratio:
        return ConditionSet(values=(None,) * len(cset.values))
    return cset


def fit_numeric_ranges(specs, value_rows: list[tuple]) -> list[ConditionSpec]:
    """Fill numeric value ranges from observed (training) values."""
    out = []
    for idx, spec in enumerate(specs):
        if spec.kind != "numeric" or spec.value_range is not None:
            out.append(spec)
            continue
        observed = [float(row[idx]) for row in value_rows if row[idx] is not None]
        if not observed:
            lo, hi = 0.0, 1.0
        else:
            lo, hi = min(observed), max(observed)
            if hi <= lo:
                lo, hi = lo - 0.5, lo + 0.5
        out.append(replace(spec, value_range=(lo, hi)))
    return out
