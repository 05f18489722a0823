"""Command-line entry point wiring the library end to end.

Subcommands: ingest, train, profile, evaluate, stratify, geneval, prompt.
Configuration comes from an optional JSON file (--config) with flags taking
precedence; unknown config keys are rejected before any work starts.  Exit
codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import PROFILE_SCHEMA_VERSION, TOOL_VERSION, WEIGHTS_FORMAT_VERSION, taxonomy
from .errors import ConfigError, DomainError, ParseError, SpeechTraitsError
from .acoustics import describe_signal
from .embed import BackendDescriptor, RemoteBackend, SyntheticBackend
from .evalapps import (
    EvalRecord,
    GenEvalTriplet,
    accuracy,
    ccc_metric,
    gen_eval,
    macro_f1,
    stratify,
)
from .heads import (
    Hyper,
    age_sex_spec,
    load_weights,
    save_weights,
    single_task_spec,
    speech_flow_spec,
    train_head,
)
from .ingest import (
    ClipRecord,
    RejectionEntry,
    load_manifest,
    preprocess_file,
    write_manifest,
    write_rejection_report,
    write_wav,
)
from .profiler import (
    Clip,
    build_profile,
    dump_profile,
    parse_profile,
    predict_disfluency,
    predict_trait,
)
from .promptgen import PromptRequest, ServiceConfig, llm_render, render_prompt, tags_from_profile

_CONFIG_KEYS = {
    "seed",
    "backend",
    "weights_dir",
    "traits",
    "out",
    "lr",
    "epochs",
    "batch_size",
    "workers",
    "stable_output",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); bad flags are validation errors
        raise ConfigError(message)


def _load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    return doc


def _setting(args, config: dict, name: str, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in config:
        return config[name]
    return default


def _resolve_backend(spec: str):
    if spec == "synthetic":
        return SyntheticBackend()
    match = re.fullmatch(r"(?:tcp://)?([\w.\-]+):(\d+)(?::(\d+)x(\d+)@([\d.]+))?", spec)
    if match:
        host, port, layers, dims, rate = match.groups()
        descriptor = None
        if layers:
            descriptor = BackendDescriptor(
                name=f"remote:{host}:{port}",
                layers=int(layers),
                dims=int(dims),
                frame_rate_hz=float(rate),
            )
        return RemoteBackend(host, int(port), descriptor=descriptor)
    raise ConfigError(
        f"backend must be 'synthetic' or host:port[:LxD@rate], got {spec!r}"
    )


def _load_weight_registry(weights_dir) -> dict:
    path = Path(weights_dir) if weights_dir else None
    if path is None or not path.is_dir():
        raise ConfigError(f"weights directory not found: {weights_dir}")
    registry = {}
    for file in sorted(path.glob("*.vxpf")):
        weights = load_weights(file)
        for task in weights.spec.tasks:
            registry[task.trait] = weights
    if not registry:
        raise ConfigError(f"no .vxpf weight files in {weights_dir}")
    return registry


def _safe_name(clip_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", clip_id)


def _json_dump(doc, path=None, stable=False) -> str:
    if not stable:
        doc = dict(doc)
        doc["created_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    text = json.dumps(doc, sort_keys=True, indent=2)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def _emit(args, summary: dict, human: str):
    if getattr(args, "json", False):
        print(json.dumps(summary, sort_keys=True))
    else:
        print(human)


def _clip_for_record(record: ClipRecord, backend) -> Clip:
    if backend.requires_audio:
        return Clip(id=record.id, waveform=preprocess_file(record.audio_path))
    return Clip.from_record(record, load_audio=False)


# --- commands ---


def cmd_ingest(args, config):
    out = Path(_require(args, config, "out"))
    out.mkdir(parents=True, exist_ok=True)
    audio_dir = out / "audio"
    audio_dir.mkdir(exist_ok=True)
    records, rejections = load_manifest(args.manifest, strict_audio=False)
    kept: list[ClipRecord] = []
    for record in records:
        try:
            waveform = preprocess_file(record.audio_path)
        except SpeechTraitsError as exc:
            reason = getattr(exc, "reason", "rejected")
            rejections.append(RejectionEntry(record.id, reason, str(exc)))
            continue
        wav_path = audio_dir / f"{_safe_name(record.id)}.wav"
        write_wav(wav_path, waveform)
        record.audio_path = str(wav_path)
        record.sample_rate = 16000
        record.duration_s = len(waveform) / 16000.0
        kept.append(record)
    write_manifest(kept, out / "manifest.jsonl")
    write_rejection_report(rejections, out / "rejections.csv")
    _emit(
        args,
        {"kept": len(kept), "rejected": len(rejections), "out": str(out)},
        f"ingested {len(kept)} clips ({len(rejections)} rejected) -> {out}",
    )
    return 0


_MULTITASK_NAMES = {"age_sex": age_sex_spec, "speech_flow": speech_flow_spec}


def cmd_train(args, config):
    backend = _resolve_backend(_setting(args, config, "backend", "synthetic"))
    seed = int(_setting(args, config, "seed", 0))
    weights_dir = Path(_require(args, config, "weights_dir"))
    weights_dir.mkdir(parents=True, exist_ok=True)
    records, rejections = load_manifest(args.manifest)
    if rejections:
        print(f"warning: {len(rejections)} manifest records rejected", file=sys.stderr)
    if not records:
        raise DomainError("manifest has no usable records")
    d = backend.descriptor
    name = args.trait
    if name in _MULTITASK_NAMES:
        spec = _MULTITASK_NAMES[name](d.layers, d.dims, seed=seed)
    else:
        spec = single_task_spec(name, d.layers, d.dims, seed=seed)
    hyper = Hyper(
        lr=float(_setting(args, config, "lr", 5e-4)),
        epochs=int(_setting(args, config, "epochs", 10)),
        batch_size=int(_setting(args, config, "batch_size", 32)),
    )
    result = train_head(records, backend, spec, hyper)
    weights_path = weights_dir / f"{name}.vxpf"
    save_weights(result.weights, weights_path)
    log_path = weights_dir / f"{name}.train.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    best = result.log[result.best_epoch]
    _emit(
        args,
        {
            "weights": str(weights_path),
            "log": str(log_path),
            "best_epoch": result.best_epoch,
            "dev_metric": best["dev_metric"],
        },
        f"trained {name}: best epoch {result.best_epoch} "
        f"(dev metric {best['dev_metric']:.3f}) -> {weights_path}",
    )
    return 0


def _parse_traits(args, config, registry) -> list[str]:
    raw = _setting(args, config, "traits", None)
    if raw is None:
        return list(registry)
    traits = raw if isinstance(raw, list) else [t for t in raw.split(",") if t]
    for trait in traits:
        if trait not in registry:
            raise ConfigError(f"no weights cover requested trait {trait!r}")
    return traits


def cmd_profile(args, config):
    backend = _resolve_backend(_setting(args, config, "backend", "synthetic"))
    registry = _load_weight_registry(_setting(args, config, "weights_dir", None))
    traits = _parse_traits(args, config, registry)
    out = Path(_require(args, config, "out"))
    out.mkdir(parents=True, exist_ok=True)
    records, rejections = load_manifest(args.manifest)
    if rejections:
        print(f"warning: {len(rejections)} manifest records rejected", file=sys.stderr)
    workers = _setting(args, config, "workers", None) or os.cpu_count() or 1

    def one(record: ClipRecord):
        clip = _clip_for_record(record, backend)
        profile = build_profile(clip, registry, backend, traits=traits)
        path = out / f"{_safe_name(record.id)}.profile.json"
        path.write_text(dump_profile(profile) + "\n", encoding="utf-8")
        return str(path)

    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        paths = list(pool.map(one, records))
    _emit(
        args,
        {"profiles": len(paths), "out": str(out)},
        f"wrote {len(paths)} profiles -> {out}",
    )
    return 0


def _eval_records_for_trait(records, trait, registry, backend) -> list[EvalRecord]:
    out = []
    for record in records:
        if trait not in record.labels:
            continue
        clip = _clip_for_record(record, backend)
        if trait in ("speech_flow", "disfluency_type"):
            flow_pred, type_pred = predict_disfluency(clip, registry[trait], backend)
            pred = flow_pred if trait == "speech_flow" else type_pred
        else:
            pred = predict_trait(clip, registry[trait], backend, trait)
        truth = record.labels[trait]
        if isinstance(truth, list):
            out.append(
                EvalRecord(
                    clip_id=record.id,
                    prediction=pred,
                    true_labels=truth,
                    ref_transcript=record.ref_transcript,
                    hyp_transcript=record.hyp_transcript,
                )
            )
        else:
            out.append(
                EvalRecord(
                    clip_id=record.id,
                    prediction=pred,
                    true_scalar=float(truth),
                    ref_transcript=record.ref_transcript,
                    hyp_transcript=record.hyp_transcript,
                )
            )
    return out


def cmd_evaluate(args, config):
    backend = _resolve_backend(_setting(args, config, "backend", "synthetic"))
    registry = _load_weight_registry(_setting(args, config, "weights_dir", None))
    traits = _parse_traits(args, config, registry)
    out = Path(_require(args, config, "out"))
    out.mkdir(parents=True, exist_ok=True)
    records, _ = load_manifest(args.manifest)
    report = {}
    for trait in traits:
        evals = _eval_records_for_trait(records, trait, registry, backend)
        if not evals:
            continue
        kind = taxonomy.default_taxonomy().category(trait).kind
        entry = {"n": len(evals)}
        if kind == taxonomy.SCALAR_REGRESSION:
            preds = [e.prediction.scalar for e in evals]
            truths = [e.true_scalar for e in evals]
            entry["ccc"] = ccc_metric(preds, truths)
        else:
            entry["accuracy"] = accuracy(evals)
            entry["macro_f1"] = macro_f1(evals)
        report[trait] = entry
    if not report:
        raise DomainError("no records carried labels for the requested traits")
    stable = bool(_setting(args, config, "stable_output", False))
    _json_dump({"metrics": report}, out / "evaluation.json", stable=stable)
    with open(out / "evaluation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trait", "n", "accuracy", "macro_f1", "ccc"])
        for trait, entry in sorted(report.items()):
            writer.writerow(
                [
                    trait,
                    entry["n"],
                    entry.get("accuracy", ""),
                    entry.get("macro_f1", ""),
                    entry.get("ccc", ""),
                ]
            )
    _emit(args, {"metrics": report}, f"evaluated {sorted(report)} -> {out}")
    return 0


def cmd_stratify(args, config):
    backend = _resolve_backend(_setting(args, config, "backend", "synthetic"))
    registry = _load_weight_registry(_setting(args, config, "weights_dir", None))
    trait = args.trait
    if trait not in registry:
        raise ConfigError(f"no weights cover trait {trait!r}")
    out = Path(_require(args, config, "out"))
    out.mkdir(parents=True, exist_ok=True)
    records, _ = load_manifest(args.manifest)
    evals = []
    for record in records:
        if record.ref_transcript is None or record.hyp_transcript is None:
            continue
        clip = _clip_for_record(record, backend)
        pred = predict_trait(clip, registry[trait], backend, trait)
        evals.append(
            EvalRecord(
                clip_id=record.id,
                prediction=pred,
                true_labels=record.labels.get(trait),
                ref_transcript=record.ref_transcript,
                hyp_transcript=record.hyp_transcript,
            )
        )
    if not evals:
        raise DomainError("no records carried both transcripts")
    result = stratify(evals, min_confidence=args.min_confidence, by=args.by)
    doc = {
        "trait": result.trait,
        "by": result.by,
        "min_confidence": result.min_confidence,
        "n_input": result.n_input,
        "n_used": result.n_used,
        "groups": {
            label: {"count": g.count, "mean_wer": g.mean_wer} for label, g in result.groups.items()
        },
        "small_groups": result.small_groups,
        "pairwise_p": {f"{a}|{b}": p for (a, b), p in result.pairwise_p.items()},
    }
    stable = bool(_setting(args, config, "stable_output", False))
    _json_dump(doc, out / f"stratify_{trait}.json", stable=stable)
    with open(out / f"stratify_{trait}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "count", "mean_wer"])
        for label, g in result.groups.items():
            writer.writerow([label, g.count, f"{g.mean_wer:.6f}"])
    _plot_groups(result, out / f"stratify_{trait}.png")
    _emit(args, doc, f"stratified {result.n_used} records -> {out}")
    return 0


def _plot_groups(result, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = list(result.groups)
    means = [result.groups[label].mean_wer for label in labels]
    fig, ax = plt.subplots(figsize=(max(4, len(labels) * 1.2), 3.2))
    ax.bar(labels, means, color="#4878a8")
    ax.set_ylabel("mean WER")
    ax.set_title(f"WER by {result.by} {result.trait} (min confidence: {result.min_confidence})")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _clip_from_doc(doc: dict, role: str, lineno: int) -> Clip:
    if not isinstance(doc, dict) or "id" not in doc:
        raise ParseError(f"{role} clip needs an 'id'", line=lineno)
    path = doc.get("audio_path")
    if path and Path(path).exists():
        return Clip(id=str(doc["id"]), waveform=preprocess_file(path))
    return Clip(id=str(doc["id"]), duration_s=float(doc.get("duration_s", 3.0)))


def cmd_geneval(args, config):
    backend = _resolve_backend(_setting(args, config, "backend", "synthetic"))
    registry = _load_weight_registry(_setting(args, config, "weights_dir", None))
    trait = args.trait
    if trait not in registry:
        raise ConfigError(f"no weights cover trait {trait!r}")
    out = Path(_require(args, config, "out"))
    out.mkdir(parents=True, exist_ok=True)
    triplets = []
    text = Path(args.triplets).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed triplet line: {exc.msg}", line=lineno) from exc
        triplets.append(
            GenEvalTriplet(
                source=_clip_from_doc(doc.get("source"), "source", lineno),
                reference=_clip_from_doc(doc.get("reference"), "reference", lineno),
                output=_clip_from_doc(doc.get("output"), "output", lineno),
                trait=trait,
            )
        )
    report = gen_eval(triplets, registry[trait], backend, trait=trait)
    stable = bool(_setting(args, config, "stable_output", False))
    doc = {
        "trait": report.trait,
        "conditions": report.to_table(),
        "skipped": [{"output_id": cid, "reason": why} for cid, why in report.skipped],
    }
    _json_dump(doc, out / "geneval.json", stable=stable)
    with open(out / "geneval.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "n", "(Source, Output)", "(Reference, Output)"])
        for row in report.to_table():
            writer.writerow([row["condition"], row["n"], row["(Source, Output)"], row["(Reference, Output)"]])
    _emit(args, doc, f"scored {sum(c.n for c in report.conditions.values())} triplets -> {out}")
    return 0


def cmd_prompt(args, config):
    src = Path(args.profiles)
    files = sorted(src.glob("*.profile.json")) if src.is_dir() else [src]
    if not files:
        raise ConfigError(f"no profile JSON files under {src}")
    out = Path(_require(args, config, "out"))
    out.mkdir(parents=True, exist_ok=True)
    service = ServiceConfig.from_file(args.service) if args.service else None
    audio_by_id = {}
    if args.manifest:
        records, _ = load_manifest(args.manifest)
        audio_by_id = {r.id: r.audio_path for r in records}
    summary = []
    for file in files:
        profile = parse_profile(file.read_text(encoding="utf-8"))
        tags = tags_from_profile(profile)
        auxiliary = {}
        audio_path = audio_by_id.get(profile.clip_id)
        if audio_path and Path(audio_path).exists():
            auxiliary = describe_signal(preprocess_file(audio_path))
        request = PromptRequest(tags=tags, template_id=args.template, auxiliary=auxiliary)
        if service is not None:
            result = llm_render(request, service)
            text, source = result.text, result.source
        else:
            text, source = render_prompt(request), "template"
        path = out / f"{_safe_name(profile.clip_id)}.prompt.txt"
        path.write_text(text + "\n", encoding="utf-8")
        summary.append({"clip_id": profile.clip_id, "source": source, "tags": len(tags)})
    stable = bool(_setting(args, config, "stable_output", False))
    _json_dump({"prompts": summary}, out / "prompts.json", stable=stable)
    _emit(args, {"prompts": summary}, f"wrote {len(summary)} prompts -> {out}")
    return 0


def _require(args, config, name: str):
    value = _setting(args, config, name, None)
    if value is None:
        raise ConfigError(f"--{name.replace('_', '-')} is required (flag or config)")
    return value


# --- argument wiring ---


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--backend", default=None, help="'synthetic' or host:port[:LxD@rate]")
    p.add_argument("--out", default=None)
    p.add_argument("--weights-dir", dest="weights_dir", default=None)
    p.add_argument("--stable-output", dest="stable_output", action="store_const", const=True, default=None)
    p.add_argument("--json", action="store_true")


def build_parser() -> _Parser:
    parser = _Parser(prog="speechtraits", description=__doc__)
    parser.add_argument("--version", action="store_true", help="print version info")
    parser.add_argument("--json", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("ingest", help="preprocess audio and validate a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("train", help="train one trait head (or a multitask pair)")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--trait", required=True, help="trait id, or 'age_sex' / 'speech_flow'")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", dest="batch_size", type=int, default=None)

    p = sub.add_parser("profile", help="build speaker profiles")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--traits", default=None, help="comma-separated trait ids")

    p = sub.add_parser("evaluate", help="score predictions against manifest labels")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--traits", default=None)

    p = sub.add_parser("stratify", help="trait-stratified WER analysis")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--trait", required=True)
    p.add_argument("--min-confidence", dest="min_confidence", default="high", choices=["low", "moderate", "high"])
    p.add_argument("--by", default="predicted", choices=["predicted", "truth"])

    p = sub.add_parser("geneval", help="score generation trait transfer on triplets")
    _add_common(p)
    p.add_argument("--triplets", required=True, help="JSONL of source/reference/output clips")
    p.add_argument("--trait", default="accent_broad")

    p = sub.add_parser("prompt", help="render speaking-style prompts from profiles")
    _add_common(p)
    p.add_argument("--profiles", required=True, help="profile JSON file or directory")
    p.add_argument("--template", default="default")
    p.add_argument("--service", default=None, help="external text service config JSON")
    p.add_argument("--manifest", default=None, help="optional; enables pitch/rate/noise notes")
    return parser


_COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "profile": cmd_profile,
    "evaluate": cmd_evaluate,
    "stratify": cmd_stratify,
    "geneval": cmd_geneval,
    "prompt": cmd_prompt,
}


def version_info(as_json: bool = False) -> str:
    tax = taxonomy.default_taxonomy()
    if as_json:
        return json.dumps(
            {
                "tool_version": TOOL_VERSION,
                "taxonomy_version": tax.version,
                "taxonomy_hash": tax.content_hash(),
                "weights_format_version": WEIGHTS_FORMAT_VERSION,
                "profile_schema_version": PROFILE_SCHEMA_VERSION,
            },
            sort_keys=True,
        )
    return (
        f"speechtraits {TOOL_VERSION}\n"
        f"taxonomy {tax.version} ({tax.content_hash()[:12]})\n"
        f"weights format {WEIGHTS_FORMAT_VERSION}"
    )


def _main(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(version_info(as_json=args.json))
        return 0
    if not args.command:
        raise ConfigError("a command is required (ingest, train, profile, evaluate, stratify, geneval, prompt)")
    config = _load_config(args.config) if getattr(args, "config", None) else {}
    return _COMMANDS[args.command](args, config)


def main(argv=None) -> int:
    try:
        return _main(argv)
    except (ConfigError, DomainError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SpeechTraitsError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic, single line
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
