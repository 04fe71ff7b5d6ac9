"""Command-line pipelines: corpus | lift | sft | eval | bench | report.

One YAML config document drives a run. Precedence, lowest to highest:
built-in defaults, the --config file, then --seed / --set flags. All
randomness flows from the single top-level `seed`; per-stage seeds are
derived from it by labeled hashing, and a `seed` key inside any section is
rejected so there is exactly one knob to vary.

Every command writes a manifest next to its primary output (config
snapshot, config hash, sha256 of each input file) and stamps the config
hash into every artifact it emits; `--from-manifest` replays a run from
that snapshot after verifying the inputs still hash the same.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numeric failure
(non-finite loss or out-of-memory).
"""

from __future__ import annotations

import os

# BLAS thread pools make reduction order (hence bits) machine-dependent;
# pin before numpy loads. Must precede the imports below.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import copy
import csv
import hashlib
import json
import sys
from pathlib import Path

import yaml

from . import __version__
from . import numcore as nc
from .evalbench import (ALL_MODES, EvalMode, bench_time, eval_reorder,
                        fit_scaling, prepare_training_qas, run_eval)
from .lift import LiftConfig, lift_adapt
from .model import (Model, ModelConfig, load_checkpoint, read_checkpoint_header,
                    save_checkpoint)
from .seeding import derive_seed
from .sft import SftConfig, sft_train
from .synth import (FactDoc, doc_to_record, gen_event_doc, gen_fact_doc,
                    gen_sft_corpus, make_fact_eval_qas, record_to_doc)
from . import plots


class ConfigError(ValueError):
    """Bad config file, key, value, or command usage. Exit code 2."""


# --- config loading ----------------------------------------------------------

_DEFAULTS: dict = {
    "seed": 0,
    "model": {
        "vocab_size": 256, "context_window": 64, "n_layers": 2,
        "n_heads": 2, "embed_dim": 64, "dtype": "float32",
    },
    "corpus": {
        "kind": "fact", "n_docs": 1, "n_facts": 12, "n_events": 6,
        "target_len": 2048, "qa_per_doc": 16, "placement": "spread",
    },
    "lift": {
        "seg_len": None, "stride": None, "aux_weight": 1.0, "epochs": 8,
        "use_auxiliary": False, "qa_count": 16, "micro_batch": 4,
        "icl_budget": None, "head_fraction": 0.5, "answer_reserve": 32,
        "plan": "overlap",
        "optimizer": {
            "learning_rate": 1e-6, "weight_decay": 1e-4, "max_grad_norm": 1.0,
            "beta1": 0.9, "beta2": 0.98, "epsilon": 1e-8,
        },
    },
    "sft": {"n_docs": 8, "qa_per_doc": 16, "outer_epochs": 4},
    "eval": {"mode": "ICL", "n_questions": 20, "style": "completion",
             "region": "middle"},
    "bench": {"lengths": [256, 512, 1024, 2048, 4096, 8192], "repeats": 3},
}

# keys that may hold null (resolved downstream from the model window)
_NULLABLE = {"lift.seg_len", "lift.stride", "lift.icl_budget"}


def _check_section(raw: dict, defaults: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in raw.items():
        dotted = f"{path}.{key}" if path else str(key)
        if key == "seed" and path:
            raise ConfigError(
                f"unknown config key {dotted!r}: seeds are derived from the "
                "top-level seed; set that instead")
        if key not in defaults:
            raise ConfigError(f"unknown config key {dotted!r}")
        default = defaults[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted!r} must be a mapping")
            out[key] = _check_section(value, default, dotted)
            continue
        if value is None:
            if dotted in _NULLABLE:
                out[key] = None
                continue
            raise ConfigError(f"config key {dotted!r} may not be null")
        if isinstance(default, bool) or isinstance(value, bool):
            if not (isinstance(default, bool) and isinstance(value, bool)):
                raise ConfigError(f"config key {dotted!r} must be a boolean"
                                  if isinstance(default, bool) else
                                  f"config key {dotted!r} must not be a boolean")
            out[key] = value
        elif isinstance(default, float):
            if not isinstance(value, (int, float)):
                raise ConfigError(f"config key {dotted!r} must be a number")
            out[key] = float(value)
        elif isinstance(default, int) or (default is None and dotted in _NULLABLE):
            if not isinstance(value, int):
                raise ConfigError(f"config key {dotted!r} must be an integer")
            out[key] = int(value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"config key {dotted!r} must be a string")
            out[key] = value
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"config key {dotted!r} must be a list")
            out[key] = list(value)
        else:
            out[key] = value
    return out


def load_config(config_path: str | None, seed: int | None,
                sets: list[str] | None) -> dict:
    """Defaults, overlaid by the YAML file, overlaid by flags."""
    raw: dict = {}
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse config file {config_path}: {e}") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a top-level mapping")
        raw = loaded
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, _, text = item.partition("=")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse --set value {text!r}: {e}") from e
        node = raw
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {dotted!r} crosses a non-mapping")
        node[parts[-1]] = value
    cfg = _check_section(raw, _DEFAULTS, "")
    if seed is not None:
        cfg["seed"] = int(seed)
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("config key 'seed' must be an integer")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _model_config(cfg: dict) -> ModelConfig:
    m = cfg["model"]
    try:
        return ModelConfig(seed=derive_seed(cfg["seed"], "model"), **m)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _lift_config(cfg: dict, seed_label: str = "lift") -> LiftConfig:
    l = dict(cfg["lift"])
    opt = nc.OptimHyper(**l.pop("optimizer"))
    try:
        return LiftConfig(optimizer=opt, seed=derive_seed(cfg["seed"], seed_label), **l)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


# --- artifact plumbing --------------------------------------------------------

TIMING_KEYS = ("wall_time", "total_wall_time")  # exempt from byte-identity


def strip_timing(record: dict) -> dict:
    """Drop wall-clock fields; reruns must agree on everything else."""
    return {k: v for k, v in record.items() if k not in TIMING_KEYS}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_jsonl(path, records: list[dict], command: str, chash: str) -> None:
    header = {"record": "header", "command": command, "config_hash": chash}
    with open(path, "w", encoding="utf-8") as f:
        for rec in [header, *records]:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def manifest_path_for(primary_output) -> Path:
    p = Path(primary_output)
    return p.with_name(p.name + ".manifest.json")


def write_manifest(command: str, cfg: dict, args_record: dict,
                   inputs: dict[str, str], primary_output) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "args": args_record,
        "inputs": {name: {"path": str(path), "sha256": sha256_file(path)}
                   for name, path in inputs.items()},
    }
    path = manifest_path_for(primary_output)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    for name, entry in manifest.get("inputs", {}).items():
        current = sha256_file(entry["path"])
        if current != entry["sha256"]:
            raise OSError(
                f"manifest input {name!r} ({entry['path']}) has changed: "
                f"recorded sha256 {entry['sha256'][:12]}..., found {current[:12]}...")
    return manifest


def _load_doc(path, index: int):
    rows = read_jsonl(path)
    docs = [r for r in rows if "type" in r]
    if not docs:
        raise ConfigError(f"no document records in {path}")
    if not 0 <= index < len(docs):
        raise ConfigError(f"document index {index} out of range "
                          f"(file has {len(docs)} documents)")
    return record_to_doc(docs[index])


def _load_or_init_model(ckpt_path, cfg: dict) -> tuple[Model, str]:
    """Checkpoint if given, else a fresh seeded model. Returns (model, kind)."""
    if ckpt_path is None:
        return Model(_model_config(cfg)), "base"
    header = read_checkpoint_header(ckpt_path)
    kind = header.get("extra", {}).get("kind", "base")
    return load_checkpoint(ckpt_path), kind


# --- commands -------------------------------------------------------------------


def cmd_corpus(cfg: dict, out_path) -> None:
    c = cfg["corpus"]
    chash = config_hash(cfg)
    root = cfg["seed"]
    records = []
    try:
        if c["kind"] == "fact":
            for i in range(c["n_docs"]):
                doc = gen_fact_doc(c["n_facts"], c["target_len"],
                                   derive_seed(root, f"corpus/doc/{i}"),
                                   placement=c["placement"])
                records.append(doc_to_record(doc))
        elif c["kind"] == "event":
            for i in range(c["n_docs"]):
                doc = gen_event_doc(c["n_events"], c["target_len"],
                                    derive_seed(root, f"corpus/doc/{i}"))
                records.append(doc_to_record(doc))
        elif c["kind"] == "sft":
            corpus = gen_sft_corpus(c["n_docs"], c["qa_per_doc"], c["target_len"],
                                    derive_seed(root, "corpus"))
            records.extend(doc_to_record(doc, qas) for doc, qas in corpus)
        else:
            raise ConfigError(f"unknown corpus kind {c['kind']!r}")
    except ValueError as e:
        raise ConfigError(str(e)) from e
    for rec in records:
        rec["config_hash"] = chash
    write_jsonl(out_path, records, "corpus", chash)
    write_manifest("corpus", cfg, {"out": str(out_path)}, {}, out_path)
    print(f"corpus: wrote {len(records)} documents to {out_path}")


def cmd_lift(cfg: dict, doc_path, doc_index: int, ckpt_in, ckpt_out,
             report_path) -> None:
    chash = config_hash(cfg)
    doc, stored_qas = _load_doc(doc_path, doc_index)
    base, _ = _load_or_init_model(ckpt_in, cfg)
    lift_cfg = _lift_config(cfg)
    qas = None
    if lift_cfg.use_auxiliary:
        qas = stored_qas if len(stored_qas) else prepare_training_qas(
            doc, lift_cfg, base.config.context_window)
    adapted, report = lift_adapt(base, doc.tokens(), qas, lift_cfg)
    save_checkpoint(adapted, ckpt_out, extra={"kind": "lift", "config_hash": chash})
    recs = [dict(r, config_hash=chash) for r in report.to_records()]
    write_jsonl(report_path, recs, "lift", chash)
    inputs = {"doc": doc_path}
    if ckpt_in is not None:
        inputs["ckpt_in"] = ckpt_in
    write_manifest("lift", cfg,
                   {"doc_index": doc_index, "ckpt_out": str(ckpt_out),
                    "report": str(report_path), "doc": str(doc_path),
                    "ckpt_in": None if ckpt_in is None else str(ckpt_in)},
                   inputs, ckpt_out)
    print(f"lift: {report.segment_count} segments, {report.qa_pair_count} QA pairs, "
          f"input loss {report.initial_input_loss:.4f} -> "
          f"{report.final_input_loss:.4f}; checkpoint {ckpt_out}")


def cmd_sft(cfg: dict, corpus_path, ckpt_in, ckpt_out, report_path) -> None:
    chash = config_hash(cfg)
    rows = read_jsonl(corpus_path)
    doc_rows = [r for r in rows if "type" in r]
    s = cfg["sft"]
    if len(doc_rows) < s["n_docs"]:
        raise ConfigError(f"sft.n_docs={s['n_docs']} but corpus has only "
                          f"{len(doc_rows)} documents")
    corpus = []
    for rec in doc_rows[:s["n_docs"]]:
        doc, qas = record_to_doc(rec)
        corpus.append((doc.tokens(), qas))
    base, _ = _load_or_init_model(ckpt_in, cfg)
    sft_cfg = SftConfig(lift_config=_lift_config(cfg), n_docs=s["n_docs"],
                        qa_per_doc=s["qa_per_doc"], outer_epochs=s["outer_epochs"],
                        seed=derive_seed(cfg["seed"], "sft"))
    trained, report = sft_train(base, corpus, sft_cfg)
    save_checkpoint(trained, ckpt_out, extra={"kind": "sft", "config_hash": chash})
    recs = [dict(r, config_hash=chash) for r in report.to_records()]
    write_jsonl(report_path, recs, "sft", chash)
    inputs = {"corpus": corpus_path}
    if ckpt_in is not None:
        inputs["ckpt_in"] = ckpt_in
    write_manifest("sft", cfg,
                   {"corpus": str(corpus_path), "ckpt_out": str(ckpt_out),
                    "report": str(report_path),
                    "ckpt_in": None if ckpt_in is None else str(ckpt_in)},
                   inputs, ckpt_out)
    print(f"sft: {sft_cfg.n_docs} documents, {sft_cfg.outer_epochs} epochs, "
          f"input loss {report.initial_input_loss:.4f} -> "
          f"{report.final_input_loss:.4f}; checkpoint {ckpt_out}")


def cmd_eval(cfg: dict, doc_path, doc_index: int, ckpt, sft_ckpt, out_path) -> None:
    chash = config_hash(cfg)
    e = cfg["eval"]
    doc, _ = _load_doc(doc_path, doc_index)
    base, base_kind = _load_or_init_model(ckpt, cfg)
    if e["mode"] == "all":
        modes = list(ALL_MODES)
    else:
        try:
            modes = [EvalMode.parse(e["mode"])]
        except ValueError as err:
            raise ConfigError(str(err)) from err

    sft_model = None
    if any(m.requires_sft for m in modes):
        if sft_ckpt is None:
            raise ConfigError(
                "SFT evaluation modes require --sft-ckpt (a checkpoint written "
                "by the sft command)")
        header = read_checkpoint_header(sft_ckpt)
        if header.get("extra", {}).get("kind") != "sft":
            raise ConfigError(f"{sft_ckpt} is not an SFT checkpoint")
        sft_model = load_checkpoint(sft_ckpt)

    lift_cfg = _lift_config(cfg, seed_label="eval/lift")
    records: list[dict] = []
    for mode in modes:
        model = sft_model if mode.requires_sft else base
        kind = "sft" if mode.requires_sft else base_kind
        if isinstance(doc, FactDoc):
            qas_eval = make_fact_eval_qas(
                doc, e["n_questions"], derive_seed(cfg["seed"], "eval/questions"),
                style=e["style"], region=e["region"])
            if not len(qas_eval):
                raise ConfigError("document has no facts in the requested region")
            report = run_eval(model, doc, qas_eval, mode, lift_cfg, model_kind=kind)
            records.extend(dict(r, config_hash=chash) for r in report.to_records())
        else:
            row = eval_reorder(model, doc, mode, lift_cfg, model_kind=kind)
            records.append(dict(row, config_hash=chash))
    write_jsonl(out_path, records, "eval", chash)
    inputs = {"doc": doc_path}
    if ckpt is not None:
        inputs["ckpt"] = ckpt
    if sft_ckpt is not None:
        inputs["sft_ckpt"] = sft_ckpt
    write_manifest("eval", cfg,
                   {"doc": str(doc_path), "doc_index": doc_index,
                    "ckpt": None if ckpt is None else str(ckpt),
                    "sft_ckpt": None if sft_ckpt is None else str(sft_ckpt),
                    "out": str(out_path)},
                   inputs, out_path)
    summaries = [r for r in records if r.get("record") == "summary"]
    for s_row in summaries:
        print(f"eval[{s_row['mode']}]: exact_match={s_row['exact_match']:.3f} "
              f"token_f1={s_row['token_f1']:.3f} over {s_row['n_questions']} questions")
    for r in records:
        if r.get("record") == "reorder":
            print(f"eval[{r['mode']}]: pairwise_order_score="
                  f"{r['pairwise_order_score']:.3f}")


def cmd_bench(cfg: dict, out_path) -> None:
    chash = config_hash(cfg)
    b = cfg["bench"]
    model_cfg = _model_config(cfg)
    try:
        records = bench_time(model_cfg, b["lengths"], repeats=b["repeats"],
                             seed=derive_seed(cfg["seed"], "bench"))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    rows = [dict(r.to_record(), config_hash=chash) for r in records]
    try:
        fit = fit_scaling(records)
        rows.extend(dict(r, config_hash=chash) for r in fit.to_records())
    except ValueError as e:
        rows.append({"record": "fit_error", "message": str(e),
                     "config_hash": chash})
    write_jsonl(out_path, rows, "bench", chash)
    write_manifest("bench", cfg, {"out": str(out_path)}, {}, out_path)
    for row in rows:
        if row["record"] == "timing":
            status = "OOM" if row["oom"] else f"{row['wall_time']:.4f}s"
            print(f"bench[{row['mode']}] L={row['input_length']}: {status}")
        elif row["record"] == "fit":
            print(f"fit[{row['mode']}]: loglog slope {row['loglog_slope']:.3f} "
                  f"(r2 {row['loglog_r2']:.4f}), quad term "
                  f"{'significant' if row['quad_significant'] else 'not significant'}")
        elif row["record"] == "crossover":
            print(f"fitted crossover length: {row['crossover_length']}")
        elif row["record"] == "fit_error":
            print(f"fit skipped: {row['message']}")


def cmd_report(in_paths: list, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for path in in_paths:
        rows.extend(read_jsonl(path))

    timing = [r for r in rows if r.get("record") == "timing"]
    fits = [r for r in rows if r.get("record") in ("fit", "crossover")]
    epochs = [r for r in rows if r.get("record") == "epoch"]
    summaries = [r for r in rows if r.get("record") == "summary" and "mode" in r]
    tables = [r for r in rows
              if r.get("record") in ("summary", "fit", "crossover", "reorder")]

    written = []
    if timing:
        written.append(plots.plot_timing(timing, fits, out / "timing.png"))
        with open(out / "timing_points.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["mode", "input_length", "wall_time", "oom"])
            for r in sorted(timing, key=lambda r: (r["mode"], r["input_length"])):
                w.writerow([r["mode"], r["input_length"], r["wall_time"], r["oom"]])
        written.append(str(out / "timing_points.csv"))
    if epochs:
        written.append(plots.plot_training(epochs, out / "training.png"))
    if summaries:
        written.append(plots.plot_eval(summaries, out / "eval_modes.png"))
    if tables:
        fields = sorted({k for r in tables for k in r})
        with open(out / "summary.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=fields)
            w.writeheader()
            for r in tables:
                w.writerow({k: ("" if v is None else v) for k, v in r.items()
                            if k in fields})
        written.append(str(out / "summary.csv"))
    if not written:
        raise ConfigError("no renderable records found in the given artifacts")
    for path in written:
        print(f"report: wrote {path}")


# --- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liftlab",
        description="Adapt small byte-level models to long inputs and measure it.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="override the root seed")
        p.add_argument("--set", action="append", dest="sets", metavar="KEY=VALUE",
                       help="override a config value, e.g. --set lift.epochs=4")
        p.add_argument("--from-manifest", dest="from_manifest",
                       help="replay a recorded run (inputs are hash-checked)")

    p = sub.add_parser("corpus", help="generate synthetic documents")
    common(p)
    p.add_argument("--out", help="output corpus JSONL path")

    p = sub.add_parser("lift", help="adapt a model to one document")
    common(p)
    p.add_argument("--doc", help="corpus JSONL holding the document")
    p.add_argument("--doc-index", type=int, dest="doc_index")
    p.add_argument("--ckpt-in", dest="ckpt_in", help="starting checkpoint "
                   "(omit to initialize a fresh model)")
    p.add_argument("--ckpt-out", dest="ckpt_out", help="adapted checkpoint path")
    p.add_argument("--report", help="training report JSONL path")

    p = sub.add_parser("sft", help="supervised fine-tuning over a corpus")
    common(p)
    p.add_argument("--corpus", help="corpus JSONL (kind: sft)")
    p.add_argument("--ckpt-in", dest="ckpt_in")
    p.add_argument("--ckpt-out", dest="ckpt_out")
    p.add_argument("--report")

    p = sub.add_parser("eval", help="run evaluation modes over a document")
    common(p)
    p.add_argument("--doc")
    p.add_argument("--doc-index", type=int, dest="doc_index")
    p.add_argument("--ckpt", help="base checkpoint (omit for a fresh model)")
    p.add_argument("--sft-ckpt", dest="sft_ckpt", help="SFT checkpoint for SFT modes")
    p.add_argument("--out", help="evaluation report JSONL path")

    p = sub.add_parser("bench", help="time adaptation vs full-attention forward")
    common(p)
    p.add_argument("--out", help="timing report JSONL path")

    p = sub.add_parser("report", help="render figures and CSV from artifacts")
    p.add_argument("inputs", nargs="+", help="artifact JSONL files")
    p.add_argument("--out-dir", dest="out_dir", default="report",
                   help="directory for figures and tables")
    return parser


def _merged_args(args, manifest: dict, keys: list[str]) -> dict:
    """Manifest-recorded args, overridden by explicitly passed flags."""
    merged = dict(manifest.get("args", {}))
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            cmd_report(args.inputs, args.out_dir)
            return 0

        if args.from_manifest:
            manifest = load_manifest(args.from_manifest)
            if manifest.get("command") != args.command:
                raise ConfigError(
                    f"manifest records a {manifest.get('command')!r} run, "
                    f"not {args.command!r}")
            cfg = _check_section(manifest["config"], _DEFAULTS, "")
        else:
            cfg = load_config(args.config, args.seed, args.sets)
            manifest = {}

        if args.command == "corpus":
            a = _merged_args(args, manifest, ["out"])
            if a.get("out") is None:
                raise ConfigError("corpus requires --out")
            cmd_corpus(cfg, a["out"])
        elif args.command == "lift":
            a = _merged_args(args, manifest,
                             ["doc", "doc_index", "ckpt_in", "ckpt_out", "report"])
            if a.get("doc") is None or a.get("ckpt_out") is None or a.get("report") is None:
                raise ConfigError("lift requires --doc, --ckpt-out and --report")
            cmd_lift(cfg, a["doc"], a.get("doc_index") or 0, a.get("ckpt_in"),
                     a["ckpt_out"], a["report"])
        elif args.command == "sft":
            a = _merged_args(args, manifest,
                             ["corpus", "ckpt_in", "ckpt_out", "report"])
            if a.get("corpus") is None or a.get("ckpt_out") is None or a.get("report") is None:
                raise ConfigError("sft requires --corpus, --ckpt-out and --report")
            cmd_sft(cfg, a["corpus"], a.get("ckpt_in"), a["ckpt_out"], a["report"])
        elif args.command == "eval":
            a = _merged_args(args, manifest,
                             ["doc", "doc_index", "ckpt", "sft_ckpt", "out"])
            if a.get("doc") is None or a.get("out") is None:
                raise ConfigError("eval requires --doc and --out")
            cmd_eval(cfg, a["doc"], a.get("doc_index") or 0, a.get("ckpt"),
                     a.get("sft_ckpt"), a["out"])
        elif args.command == "bench":
            a = _merged_args(args, manifest, ["out"])
            if a.get("out") is None:
                raise ConfigError("bench requires --out")
            cmd_bench(cfg, a["out"])
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except (nc.NumericError, FloatingPointError, MemoryError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
