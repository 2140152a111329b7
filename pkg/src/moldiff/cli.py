"""Command-line surface: ingest/toy/train/sample/eval/noise-inspect/rank/gradcheck.

Every command is deterministic given (config, seed) at --threads 1 and writes
its fully-resolved config plus the tool version next to its outputs.
Exit codes: 0 ok, 2 input error, 3 numeric failure, 4 compatibility error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .conditioning import ConditionSet, ConditionSpec
from .denoiser import DenoiserConfig, init_params
from .diffusion import (SampleConfig, TrainConfig, TrainResult, convert,
                        draw_n_atoms, epoch_rng, sample_raw_many, train)
from .evalsuite import (exact_oracles_for, knn_oracles_from_dataset,
                        metrics_report, rank_experiment)
from .molgraph.datasets import (Dataset, DataRecord, SchemaError, ToySpec,
                                gen_toy_dataset, load_dataset)
from .molgraph.graph import check_valence
from .molgraph.smiles import SmilesSyntaxError, parse_smiles, write_smiles
from .molgraph.tokens import to_tokens
from .molgraph.vocab import AtomVocab, BondVocab
from .noise import (Marginals, build_blocks, cosine_schedule, estimate_marginals,
                    forward_jump_sample)
from .tensor import NumericsError, load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_COMPAT = 4

DATASET_FORMAT = "moldiff-dataset-v1"


class ConfigError(ValueError):
    pass


class CompatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run configuration


CONFIG_SCHEMA = {
    "seed": None,
    "dataset": {"path": None,
                "toy": {"n_molecules": None, "max_atoms": None, "element_pool": None,
                        "seed": None, "min_atoms": None, "ring_rate": None}},
    "conditions": None,  # list of condition dicts, validated separately
    "noise": {"t_steps": None, "s_offset": None, "coupling_mode": None,
              "lambda_couple": None},
    "model": {"d": None, "n_layers": None, "n_heads": None,
              "conditioning_mode": None, "n_max": None, "mlp_ratio": None},
    "train": {"epochs": None, "batch_size": None, "lr": None, "drop_ratio": None,
              "optimizer": None, "val_sample_count": None, "val_sample_every": None},
    "sample": {"s_guide": None, "conversion": None, "count": None, "n_atoms": None},
}

CONDITION_KEYS = {"name", "kind", "encoder", "n_interval"}


def validate_config(doc: dict) -> None:
    """Reject unknown keys anywhere in the run config."""
    def walk(value, schema, path):
        if not isinstance(value, dict):
            raise ConfigError(f"section {path or '<root>'} must be an object")
        for key, sub in value.items():
            if key not in schema:
                raise ConfigError(f"unknown config key {path}{key!r}")
            if isinstance(schema[key], dict):
                walk(sub, schema[key], f"{path}{key}.")
    walk(doc, CONFIG_SCHEMA, "")
    for cond in doc.get("conditions", []):
        extra = set(cond) - CONDITION_KEYS
        if extra:
            raise ConfigError(f"unknown condition keys {sorted(extra)}")
    if "dataset" in doc and set(doc["dataset"]) - {"path", "toy"} == set():
        if ("path" in doc["dataset"]) == ("toy" in doc["dataset"]):
            raise ConfigError("dataset needs exactly one of 'path' or 'toy'")


def resolved_config(doc: dict) -> dict:
    out = {
        "seed": doc.get("seed", 0),
        "dataset": doc.get("dataset", {}),
        "conditions": doc.get("conditions", []),
        "noise": {"t_steps": 200, "s_offset": 0.008,
                  "coupling_mode": "self_preserving", "lambda_couple": 1.0},
        "model": {"d": 64, "n_layers": 3, "n_heads": 4,
                  "conditioning_mode": "adaln", "n_max": None, "mlp_ratio": 4},
        "train": {"epochs": 1, "batch_size": 32, "lr": 3e-4, "drop_ratio": 0.1,
                  "optimizer": "adamw", "val_sample_count": 64, "val_sample_every": 1},
        "sample": {"s_guide": 2.0, "conversion": "connect_all", "count": 100,
                   "n_atoms": "auto"},
        "version": __version__,
    }
    for section in ("noise", "model", "train", "sample"):
        out[section].update(doc.get(section, {}))
    return out


# ---------------------------------------------------------------------------
# dataset bundles


def save_bundle(dataset: Dataset, out: Path, skips: list[dict], seed: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": DATASET_FORMAT,
        "version": __version__,
        "seed": seed,
        "vocab": {"elements": list(dataset.atom_vocab.elements)},
        "specs": [s.to_json() for s in dataset.specs],
        "splits": dataset.splits,
        "records": [{"smiles": write_smiles(r.graph),
                     "values": list(r.cset.values)} for r in dataset.records],
    }
    (out / "dataset.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    with open(out / "skips.jsonl", "w") as fh:
        for skip in skips:
            fh.write(json.dumps(skip, sort_keys=True) + "\n")


def load_bundle(path: Path) -> Dataset:
    doc = json.loads((Path(path) / "dataset.json").read_text())
    if doc.get("format") != DATASET_FORMAT:
        raise SchemaError(f"not a dataset bundle: {path}")
    vocab = AtomVocab(elements=tuple(doc["vocab"]["elements"]))
    specs = [ConditionSpec.from_json(s) for s in doc["specs"]]
    records = []
    for rec in doc["records"]:
        graph = parse_smiles(rec["smiles"], vocab)
        values = tuple(None if v is None else v for v in rec["values"])
        records.append(DataRecord(graph=graph, cset=ConditionSet(values=values)))
    return Dataset(records=records, specs=specs,
                   splits={k: list(v) for k, v in doc["splits"].items()},
                   atom_vocab=vocab, bond_vocab=BondVocab())


def infer_condition_specs(csv_path: Path, declared: list[dict]) -> list[ConditionSpec]:
    """Conditions from config entries, or inferred from the CSV header.

    A column is numeric when every non-empty cell parses as a float.
    """
    import csv as csv_module
    with open(csv_path, newline="") as fh:
        reader = csv_module.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("empty CSV")
        header = [h.strip() for h in reader.fieldnames if h.strip() != "smiles"]
        rows = list(reader)
    if declared:
        return [ConditionSpec(name=c["name"], kind=c["kind"],
                              encoder=c.get("encoder", "cluster"),
                              n_interval=c.get("n_interval", 10)) for c in declared]
    specs = []
    for name in header:
        numeric = True
        seen_any = False
        for row in rows:
            cell = (row.get(name) or "").strip()
            if cell == "":
                continue
            seen_any = True
            try:
                float(cell)
            except ValueError:
                numeric = False
                break
        specs.append(ConditionSpec(name=name, kind="numeric" if numeric and seen_any
                                   else "categorical"))
    return specs


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_meta(result: TrainResult, run_config: dict, epoch: int) -> dict:
    return {
        "version": __version__,
        "run_config": run_config,
        "denoiser": result.denoiser_cfg.to_json(),
        "specs": [s.to_json() for s in result.specs],
        "marginals": result.marginals.to_json(),
        "schedule": {"t_steps": result.schedule.t_steps,
                     "s_offset": result.schedule.s_offset},
        "size_histogram": {str(k): v for k, v in result.size_histogram.items()},
        "vocab": {"elements": list(result.atom_vocab.elements)},
        "epoch": epoch,
    }


def load_sampler_bundle(path: Path) -> TrainResult:
    store, meta = load_checkpoint(path)
    vocab = AtomVocab(elements=tuple(meta["vocab"]["elements"]))
    return TrainResult(
        store=store, log=[],
        schedule=cosine_schedule(meta["schedule"]["t_steps"], meta["schedule"]["s_offset"]),
        marginals=Marginals.from_json(meta["marginals"]),
        denoiser_cfg=DenoiserConfig.from_json(meta["denoiser"]),
        specs=[ConditionSpec.from_json(s) for s in meta["specs"]],
        size_histogram={int(k): v for k, v in meta["size_histogram"].items()},
        atom_vocab=vocab, bond_vocab=BondVocab(),
    )


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    config = json.loads(Path(args.config).read_text()) if args.config else {}
    specs = infer_condition_specs(Path(args.csv), config.get("conditions", []))
    dataset, skips = load_dataset(args.csv, specs, seed=args.seed)
    save_bundle(dataset, Path(args.out), skips, seed=args.seed)
    print(json.dumps({"records": len(dataset.records), "skipped": len(skips),
                      "splits": {k: len(v) for k, v in dataset.splits.items()}}))
    return EXIT_OK


def cmd_toy(args) -> int:
    doc = json.loads(Path(args.spec).read_text())
    known = {"n_molecules", "max_atoms", "element_pool", "seed", "min_atoms", "ring_rate"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown toy spec keys {sorted(extra)}")
    if "element_pool" in doc:
        doc["element_pool"] = tuple(doc["element_pool"])
    dataset = gen_toy_dataset(ToySpec(**doc))
    save_bundle(dataset, Path(args.out), skips=[], seed=doc.get("seed", 0))
    print(json.dumps({"records": len(dataset.records),
                      "splits": {k: len(v) for k, v in dataset.splits.items()}}))
    return EXIT_OK


def _dataset_from_config(config: dict) -> Dataset:
    section = config["dataset"]
    if "path" in section:
        return load_bundle(Path(section["path"]))
    toy = dict(section["toy"])
    if "element_pool" in toy:
        toy["element_pool"] = tuple(toy["element_pool"])
    return gen_toy_dataset(ToySpec(**toy))


def _apply_condition_overrides(dataset: Dataset, config: dict) -> Dataset:
    """Restrict/reorder dataset conditions to the config's list."""
    entries = config.get("conditions") or []
    if not entries:
        return dataset
    by_name = {s.name: i for i, s in enumerate(dataset.specs)}
    keep, specs = [], []
    for entry in entries:
        if entry["name"] not in by_name:
            raise ConfigError(f"unknown condition {entry['name']!r}")
        idx = by_name[entry["name"]]
        keep.append(idx)
        spec = dataset.specs[idx]
        if entry.get("kind", spec.kind) != spec.kind:
            raise ConfigError(f"condition {spec.name!r} is {spec.kind}")
        specs.append(replace(spec, encoder=entry.get("encoder", spec.encoder),
                             n_interval=entry.get("n_interval", spec.n_interval)))
    records = [DataRecord(graph=r.graph,
                          cset=ConditionSet(values=tuple(r.cset.values[i] for i in keep)))
               for r in dataset.records]
    return Dataset(records=records, specs=specs, splits=dataset.splits,
                   atom_vocab=dataset.atom_vocab, bond_vocab=dataset.bond_vocab)


def cmd_train(args) -> int:
    doc = json.loads(Path(args.config).read_text())
    validate_config(doc)
    config = resolved_config(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    dataset = _apply_condition_overrides(_dataset_from_config(config), config)
    n_max = config["model"]["n_max"] or dataset.max_atoms()
    denoiser_cfg = DenoiserConfig(
        n_max=n_max, f_v=dataset.atom_vocab.size, f_e=dataset.bond_vocab.size,
        d=config["model"]["d"], n_layers=config["model"]["n_layers"],
        n_heads=config["model"]["n_heads"], mode=config["model"]["conditioning_mode"],
        mlp_ratio=config["model"]["mlp_ratio"])
    train_cfg = TrainConfig(
        epochs=config["train"]["epochs"], t_steps=config["noise"]["t_steps"],
        batch_size=config["train"]["batch_size"], lr=config["train"]["lr"],
        drop_ratio=config["train"]["drop_ratio"],
        lambda_couple=config["noise"]["lambda_couple"],
        coupling_mode=config["noise"]["coupling_mode"], seed=config["seed"],
        s_offset=config["noise"]["s_offset"], optimizer=config["train"]["optimizer"],
        val_sample_count=config["train"]["val_sample_count"],
        val_sample_every=config["train"]["val_sample_every"])

    config["model"]["n_max"] = n_max
    (out / "config.resolved.json").write_text(json.dumps(config, indent=2, sort_keys=True))

    store = None
    start_epoch = 0
    log: list[dict] = []
    if args.resume:
        bundle = load_sampler_bundle(Path(args.resume))
        store = bundle.store
        _, meta = load_checkpoint(Path(args.resume))
        start_epoch = meta["epoch"] + 1
        log_path = Path(args.resume).parent / "log.jsonl"
        if log_path.exists():
            log = [json.loads(line) for line in log_path.read_text().splitlines()]

    result = train(dataset, train_cfg, denoiser_cfg, store=store,
                   start_epoch=start_epoch, log=log, progress=args.verbose)
    with open(out / "log.jsonl", "w") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    last_epoch = train_cfg.epochs - 1
    save_checkpoint(result.store, out / "checkpoint_last",
                    checkpoint_meta(result, config, last_epoch))
    best = result.best_store if result.best_store is not None else result.store
    save_checkpoint(best, out / "checkpoint_best",
                    checkpoint_meta(result, config, result.best_epoch))
    print(json.dumps({"epochs": train_cfg.epochs, "best_epoch": result.best_epoch,
                      "final_val_loss": result.log[-1]["val_loss"] if result.log else None}))
    return EXIT_OK


def _load_condition_file(path: Path, specs: list[ConditionSpec]) -> list[ConditionSet]:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = [doc]
    by_name = {s.name: i for i, s in enumerate(specs)}
    csets = []
    for entry in doc:
        unknown = set(entry) - set(by_name)
        if unknown:
            raise CompatError(f"conditions {sorted(unknown)} not in checkpoint")
        values: list = [None] * len(specs)
        for name, value in entry.items():
            spec = specs[by_name[name]]
            if value is None:
                continue
            if spec.kind == "numeric":
                values[by_name[name]] = float(value)
            elif isinstance(value, str):
                if spec.labels is None or value not in spec.labels:
                    raise CompatError(f"label {value!r} unknown for {name}")
                values[by_name[name]] = spec.labels.index(value)
            else:
                idx = int(value)
                if not (0 <= idx < spec.cardinality):
                    raise CompatError(f"label index {idx} out of range for {name}")
                values[by_name[name]] = idx
        csets.append(ConditionSet(values=tuple(values)))
    return csets


SAMPLE_CHUNK = 64


def cmd_sample(args) -> int:
    bundle = load_sampler_bundle(Path(args.checkpoint))
    csets = (_load_condition_file(Path(args.conditions_file), bundle.specs)
             if args.conditions_file else [ConditionSet(values=(None,) * len(bundle.specs))])
    count = args.count
    chosen = [csets[i % len(csets)] for i in range(count)]

    chunks = [(k, chosen[lo:lo + SAMPLE_CHUNK])
              for k, lo in enumerate(range(0, count, SAMPLE_CHUNK))]

    def run_chunk(item):
        k, chunk_csets = item
        rng = epoch_rng(args.seed, k, stream=7)
        if args.n_atoms == "auto":
            sizes = [draw_n_atoms(bundle.size_histogram, rng) for _ in chunk_csets]
        else:
            sizes = [int(args.n_atoms)] * len(chunk_csets)
        raw = sample_raw_many(bundle.store, bundle.denoiser_cfg, bundle.schedule,
                              bundle.marginals, bundle.specs, chunk_csets, sizes,
                              args.s_guide, rng, bundle.atom_vocab, bundle.bond_vocab)
        out = []
        for g, cset, n in zip(raw, chunk_csets, sizes):
            converted = convert(g, args.conversion, rng)
            out.append((converted, g, cset, n))
        return out

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(run_chunk, chunks))
    else:
        results = [run_chunk(c) for c in chunks]

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    lines, sidecar = [], []
    for chunk in results:
        for converted, raw, cset, n in chunk:
            lines.append(write_smiles(converted))
            conditions = {spec.name: (spec.labels[v] if spec.kind == "categorical"
                                      and v is not None else v)
                          for spec, v in zip(bundle.specs, cset.values)}
            sidecar.append({"conditions": conditions, "n_atoms": n,
                            "raw_valid": bool(check_valence(raw).valid)})
    out_path.write_text("\n".join(lines) + "\n")
    Path(str(out_path) + ".conditions.json").write_text(
        json.dumps({"version": __version__, "s_guide": args.s_guide,
                    "conversion": args.conversion, "seed": args.seed,
                    "samples": sidecar}, indent=1, sort_keys=True))
    print(json.dumps({"written": len(lines), "out": str(out_path)}))
    return EXIT_OK


def _read_smiles_file(path: Path, vocab: AtomVocab):
    mols = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            mols.append(parse_smiles(line, vocab))
    return mols


def cmd_eval(args) -> int:
    train_ds = load_bundle(Path(args.train))
    vocab = train_ds.atom_vocab
    gen = _read_smiles_file(Path(args.gen), vocab)
    ref_path = Path(args.ref)
    if ref_path.is_dir():
        ref = [r.graph for r in load_bundle(ref_path).split("test")]
    else:
        ref = _read_smiles_file(ref_path, vocab)
    if not gen or not ref:
        raise SchemaError("gen and ref must be nonempty")

    if args.oracle == "exact":
        oracles = exact_oracles_for(train_ds.specs)
    else:
        oracles = knn_oracles_from_dataset(train_ds, k=args.knn_k)

    target_csets = None
    sidecar_path = Path(args.gen_conditions) if args.gen_conditions else Path(str(args.gen) + ".conditions.json")
    if sidecar_path.exists():
        doc = json.loads(sidecar_path.read_text())
        entries = doc["samples"] if isinstance(doc, dict) else doc
        by_name = {s.name: i for i, s in enumerate(train_ds.specs)}
        target_csets = []
        for entry in entries:
            values: list = [None] * len(train_ds.specs)
            for name, value in entry["conditions"].items():
                spec = train_ds.specs[by_name[name]]
                if value is None:
                    continue
                values[by_name[name]] = (spec.labels.index(value)
                                         if spec.kind == "categorical" and isinstance(value, str)
                                         else value)
            target_csets.append(ConditionSet(values=tuple(values)))
        if len(target_csets) != len(gen):
            raise SchemaError("conditions sidecar length does not match gen file")

    train_types = {s for r in train_ds.split("train") for s in r.graph.symbols()}
    report = metrics_report(gen, ref, train_types, target_csets=target_csets,
                            oracles=oracles, specs=train_ds.specs)
    payload = {"version": __version__, **report.to_json()}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(payload, indent=1, sort_keys=True))
    print(json.dumps(payload["condition_metrics"] | {
        "validity": payload["validity"], "diversity": payload["diversity"]}))
    return EXIT_OK


def cmd_noise_inspect(args) -> int:
    dataset = load_bundle(Path(args.dataset))
    marginals = estimate_marginals(dataset)
    schedule = cosine_schedule(args.t_steps, args.s_offset)
    t = args.t if args.t is not None else args.t_steps
    blocks = build_blocks(marginals, float(schedule.abar[t]), args.coupling_mode)
    rng = np.random.default_rng(args.seed)
    train_recs = dataset.split("train")
    n_max = dataset.max_atoms()

    node_counts = np.zeros(dataset.atom_vocab.size)
    edge_counts = np.zeros(dataset.bond_vocab.size)
    for k in range(args.samples):
        rec = train_recs[k % len(train_recs)]
        x0 = to_tokens(rec.graph, n_max)
        xt = forward_jump_sample(x0, blocks, args.lambda_couple, rng)
        states = xt.node_states()
        real = np.flatnonzero(xt.mask)
        for i in real:
            node_counts[states[i]] += 1
        edges = xt.edge_states()
        for a in range(len(real)):
            for b in range(a + 1, len(real)):
                edge_counts[edges[real[a], real[b]]] += 1
    node_emp = node_counts / max(node_counts.sum(), 1)
    edge_emp = edge_counts / max(edge_counts.sum(), 1)
    report = {
        "version": __version__,
        "t": t, "t_steps": args.t_steps, "samples": args.samples,
        "lambda_couple": args.lambda_couple, "coupling_mode": args.coupling_mode,
        "marginals": marginals.to_json(),
        "schedule": {"t_steps": schedule.t_steps, "s_offset": schedule.s_offset,
                     "abar_head": schedule.abar[:5].tolist(),
                     "abar_tail": schedule.abar[-5:].tolist()},
        "tv_nodes": float(0.5 * np.abs(node_emp - marginals.m_v).sum()),
        "tv_edges": float(0.5 * np.abs(edge_emp - marginals.m_e).sum()),
    }
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(json.dumps({"tv_nodes": report["tv_nodes"], "tv_edges": report["tv_edges"]}))
    return EXIT_OK


def cmd_rank(args) -> int:
    singles = {}
    for item in args.single:
        name, _, path = item.partition("=")
        if not path:
            raise ConfigError("--single needs name=checkpoint_dir")
        singles[name] = load_sampler_bundle(Path(path))
    multi = load_sampler_bundle(Path(args.multi))
    dataset = load_bundle(Path(args.dataset))
    for name in singles:
        if name not in {s.name for s in multi.specs}:
            raise CompatError(f"condition {name!r} missing from multi checkpoint")
    test_recs = dataset.split("test")[:args.cases]
    csets = [r.cset for r in test_recs]
    oracles = (exact_oracles_for(multi.specs) if args.oracle == "exact"
               else knn_oracles_from_dataset(dataset, k=args.knn_k))
    report = rank_experiment(singles, multi, csets, oracles,
                             n_per_condition=args.n_per_condition,
                             s_guide=args.s_guide, seed=args.seed)
    payload = {"version": __version__, **report.to_json(), **report.medians()}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(payload, indent=1, sort_keys=True))
    print(json.dumps(report.medians()))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import composed_loss_gradcheck
    worst = composed_loss_gradcheck(seed=args.seed)
    print(json.dumps({"max_relative_error": worst}))
    return EXIT_OK if worst < 1e-4 else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moldiff",
                                     description="conditional discrete graph diffusion")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="CSV -> dataset bundle")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="optional JSON with a 'conditions' list")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("toy", help="synthesize a toy dataset bundle")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("train", help="train from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint dir to resume from")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate molecules from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--conditions-file")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--s-guide", type=float, default=2.0)
    p.add_argument("--conversion", choices=("connect_all", "lcc"), default="connect_all")
    p.add_argument("--n-atoms", default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="metric report for generated molecules")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True, help="SMILES file or dataset bundle")
    p.add_argument("--train", required=True, help="dataset bundle")
    p.add_argument("--oracle", choices=("exact", "knn"), default="exact")
    p.add_argument("--knn-k", type=int, default=5)
    p.add_argument("--gen-conditions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("noise-inspect", help="marginals, schedule, corruption TV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--t", type=int)
    p.add_argument("--t-steps", type=int, default=200)
    p.add_argument("--s-offset", type=float, default=0.008)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--lambda-couple", type=float, default=0.0)
    p.add_argument("--coupling-mode", choices=("self_preserving", "literal"),
                   default="self_preserving")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_noise_inspect)

    p = sub.add_parser("rank", help="single- vs multi-conditional rank experiment")
    p.add_argument("--single", action="append", required=True,
                   help="name=checkpoint_dir (repeatable)")
    p.add_argument("--multi", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--n-per-condition", type=int, default=30)
    p.add_argument("--s-guide", type=float, default=2.0)
    p.add_argument("--oracle", choices=("exact", "knn"), default="exact")
    p.add_argument("--knn-k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training loss")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, SmilesSyntaxError, json.JSONDecodeError,
            FileNotFoundError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except NumericsError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except CompatError as err:
        print(f"compatibility error: {err}", file=sys.stderr)
        return EXIT_COMPAT


if __name__ == "__main__":
    sys.exit(main())
