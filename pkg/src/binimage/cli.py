"""Command-line interface: the full pipeline as composable subcommands.

Commands operate on documented artifacts (cache directories, run
directories, embedding CSVs) so outputs of one step feed the next without
re-specifying paths. A run directory is laid out as::

    run_<confighash8>_s<seed>/
        config.json      resolved training config + corpus + split records
        checkpoints/     step_NNNNNN.bnck (+ .json sidecars)
        metrics.jsonl    one record per step
        report.json      test-split evaluation
        manifest.json    command, inputs, outputs with sha256 checksums

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    EmbeddingTable,
    export_embeddings,
    family_thresholds,
    novelty_score,
    project_2d,
)
from .dataset import (
    LabeledCorpus,
    SplitSpec,
    load_cache,
    load_corpus,
    save_cache,
    stratified_split,
    synth_corpus,
    write_cache_blob,
)
from .errors import (
    BadConfig,
    MissingFile,
    RuntimeFailure,
    ValidationError,
)
from .model import encoder_forward, head_forward
from .preprocess import ByteStream, binary_to_image, write_png
from .svg import loss_curves_svg, scatter_svg
from .trainer import MODES, TrainConfig, evaluate, load_state, train

CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"
METRICS_FILE = "metrics.jsonl"
REPORT_FILE = "report.json"


# ----------------------------------------------------------------------------
# Manifest plumbing
# ----------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def config_hash(config: TrainConfig) -> str:
    """Stable 8-hex-digit digest of the experiment configuration.

    The seed is factored out (it names the run dir separately) and so are
    the run-control knobs max_steps and checkpoint_interval, which may
    change on resume without starting a new experiment.
    """
    data = config.to_dict()
    for key in ("seed", "max_steps", "checkpoint_interval"):
        data.pop(key)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:8]


def write_manifest(
    out_dir: Path,
    command: list[str],
    inputs: list[str],
    outputs: list[Path],
    started: str,
    extra: dict | None = None,
) -> Path:
    """Atomically write manifest.json listing every output with its checksum."""
    manifest = {
        "command": command,
        "inputs": sorted(inputs),
        "outputs": {
            str(p.relative_to(out_dir)): _sha256(p) for p in sorted(outputs)
        },
        "started": started,
        "finished": _now(),
    }
    manifest.update(extra or {})
    path = out_dir / MANIFEST_FILE
    tmp = out_dir / (MANIFEST_FILE + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _walk_outputs(out_dir: Path) -> list[Path]:
    """Every regular file under out_dir except the manifest itself."""
    skip = {MANIFEST_FILE, MANIFEST_FILE + ".tmp"}
    return [
        p for p in sorted(out_dir.rglob("*")) if p.is_file() and p.name not in skip
    ]


# ----------------------------------------------------------------------------
# Corpus plumbing shared by train/eval/embed/detect
# ----------------------------------------------------------------------------


def _corpus_record(args, image_size: int) -> dict:
    """Normalize the corpus source flags into a serializable record."""
    chosen = [
        name
        for name, value in [
            ("--manifest", args.manifest),
            ("--cache", args.cache),
            ("--synth-families", args.synth_families),
        ]
        if value is not None
    ]
    if len(chosen) != 1:
        raise BadConfig(
            f"exactly one of --manifest, --cache, --synth-families is required, got {chosen or 'none'}"
        )
    if args.manifest is not None:
        manifest = Path(args.manifest).resolve()
        root = Path(args.root).resolve() if args.root else manifest.parent
        return {
            "kind": "manifest",
            "manifest": str(manifest),
            "root": str(root),
            "image_size": image_size,
        }
    if args.cache is not None:
        return {"kind": "cache", "path": str(Path(args.cache).resolve())}
    return {
        "kind": "synth",
        "families": args.synth_families,
        "per_family": args.synth_per_family,
        "seed": args.synth_seed,
        "size": image_size,
    }


def _build_corpus(record: dict) -> LabeledCorpus:
    kind = record["kind"]
    if kind == "manifest":
        return load_corpus(record["root"], record["manifest"], record["image_size"])
    if kind == "cache":
        return load_cache(record["path"])
    if kind == "synth":
        return synth_corpus(
            record["families"], record["per_family"], record["seed"], record["size"]
        )
    raise BadConfig(f"unknown corpus kind {kind!r}")


def _load_run_config(run_dir: Path) -> dict:
    path = run_dir / CONFIG_FILE
    if not path.is_file():
        raise MissingFile(str(path))
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _split_corpus(run_config: dict, which: str) -> LabeledCorpus:
    """Rebuild the run's corpus and return the requested side of its split."""
    corpus = _build_corpus(run_config["corpus"])
    if which == "all":
        return corpus
    split = run_config["split"]
    train_set, test_set = stratified_split(
        corpus, SplitSpec(split["train_fraction"], split["seed"])
    )
    return train_set if which == "train" else test_set


def _latest_checkpoint(run_dir: Path, explicit: str | None) -> Path:
    if explicit is not None:
        path = Path(explicit)
        if not path.is_file():
            raise MissingFile(str(path))
        return path
    ckpt_dir = run_dir / "checkpoints"
    candidates = sorted(ckpt_dir.glob("step_*.bnck"))
    if not candidates:
        raise MissingFile(f"{ckpt_dir}/step_*.bnck")
    return candidates[-1]


def _student_params(run_dir: Path, checkpoint: str | None):
    state = load_state(_latest_checkpoint(run_dir, checkpoint))
    return state.student, state.config


# ----------------------------------------------------------------------------
# train
# ----------------------------------------------------------------------------


def _set_if(section: dict, key: str, value) -> None:
    if value is not None:
        section[key] = value


def _resolve_train_config(args) -> dict:
    """Merge the optional JSON config file with explicit flag overrides."""
    if args.config is not None:
        config_path = Path(args.config)
        if not config_path.is_file():
            raise MissingFile(str(config_path))
        with open(config_path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise BadConfig(f"{config_path}: config must be a JSON object")
    else:
        data = {}

    model = data.setdefault("model", {})
    _set_if(model, "input_size", args.input_size)
    _set_if(model, "dropout_rate", args.dropout_rate)
    _set_if(model, "embed_channels", args.embed_channels)
    _set_if(model, "mlp_width", args.mlp_width)
    _set_if(model, "mlp_blocks", args.mlp_blocks)
    if args.same_channels is not None:
        model["same_channels"] = _int_list(args.same_channels, "--same-channels")
    if args.valid_channels is not None:
        model["valid_channels"] = _int_list(args.valid_channels, "--valid-channels")

    loss = data.setdefault("loss", {})
    _set_if(loss, "beta", args.beta)
    _set_if(loss, "lambda_weight", args.lambda_weight)

    ema = data.setdefault("ema", {})
    _set_if(ema, "tau", args.tau)
    _set_if(ema, "warmup_steps", args.tau_warmup_steps)
    _set_if(ema, "tau_start", args.tau_start)

    if args.block_size is not None or args.mask_ratio is not None or "mask" in data:
        mask = data.setdefault("mask", {})
        _set_if(mask, "block_size", args.block_size)
        _set_if(mask, "mask_ratio", args.mask_ratio)
        # The mask grid must cover exactly the model input.
        mask.setdefault("image_size", model.get("input_size", 400))

    _set_if(data, "batch_size", args.batch_size)
    _set_if(data, "learning_rate", args.learning_rate)
    _set_if(data, "max_steps", args.max_steps)
    _set_if(data, "seed", args.seed)
    _set_if(data, "mode", args.mode)
    _set_if(data, "checkpoint_interval", args.checkpoint_interval)
    return data


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise BadConfig(f"{flag} expects comma-separated integers, got {text!r}") from exc


def cmd_train(args) -> int:
    started = _now()
    data = _resolve_train_config(args)

    # The corpus defines the label space; probe it to size the classifier.
    image_size = data.get("model", {}).get("input_size", 400)
    corpus_record = _corpus_record(args, image_size)
    corpus = _build_corpus(corpus_record)
    model = data.setdefault("model", {})
    if "families" not in model:
        model["families"] = corpus.family_count
    elif model["families"] != corpus.family_count:
        raise BadConfig(
            f"model.families = {model['families']} but the corpus has "
            f"{corpus.family_count} families"
        )

    config = TrainConfig.from_dict(data)
    split = SplitSpec(
        args.train_fraction if args.train_fraction is not None else 0.9,
        args.split_seed if args.split_seed is not None else config.seed,
    )
    train_set, test_set = stratified_split(corpus, split)

    run_dir = Path(args.out) / f"run_{config_hash(config)}_s{config.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    run_config = {
        "train": config.to_dict(),
        "corpus": corpus_record,
        "split": {"train_fraction": split.train_fraction, "seed": split.seed},
        "families": corpus.family_names,
    }
    with open(run_dir / CONFIG_FILE, "w", encoding="utf-8") as fh:
        json.dump(run_config, fh, indent=2, sort_keys=True)
        fh.write("\n")

    resume_from = None
    if args.resume:
        resume_from = _latest_checkpoint(run_dir, None)
        print(f"resuming from {resume_from}")

    log = None
    if not args.quiet:
        every = max(1, config.max_steps // 10)

        def log(record, every=every):
            if record.step % every == 0 or record.step == config.max_steps:
                print(
                    f"step {record.step:6d}  ce {record.ce:.4f}  "
                    f"d2v {record.d2v:.6f}  composite {record.composite:.4f}"
                )

    result = train(
        config,
        train_set,
        eval_corpus=test_set,
        run_dir=run_dir,
        resume_from=resume_from,
        log=log,
    )

    inputs = [corpus_record[k] for k in ("manifest", "root", "path") if k in corpus_record]
    write_manifest(
        run_dir,
        ["train"] + (args.raw_argv or []),
        inputs,
        _walk_outputs(run_dir),
        started,
        extra={"config_hash": config_hash(config), "seed": config.seed},
    )
    if result.report is not None:
        print(f"test accuracy {result.report.accuracy:.4f} ({result.report.total} samples)")
    print(f"run directory: {run_dir}")
    return 0


# ----------------------------------------------------------------------------
# convert / synth
# ----------------------------------------------------------------------------


def cmd_convert(args) -> int:
    started = _now()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    failures = []
    used_names: set[str] = set()
    for raw in args.inputs:
        src = Path(raw)
        stem = src.stem or "input"
        name = stem
        serial = 1
        while name in used_names:
            name = f"{stem}_{serial}"
            serial += 1
        try:
            with open(src, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            failures.append((raw, str(exc)))
            continue
        try:
            image = binary_to_image(ByteStream(data, source_id=raw), args.size)
        except ValidationError as exc:
            failures.append((raw, str(exc)))
            continue
        used_names.add(name)
        blob = out_dir / f"{name}.bimg"
        write_cache_blob(image, blob)
        entry = {"source": str(src), "blob": blob.name}
        if args.png:
            png = out_dir / f"{name}.png"
            write_png(image, png)
            entry["png"] = png.name
        entries.append(entry)

    with open(out_dir / "index.json", "w", encoding="utf-8") as fh:
        json.dump({"size": args.size, "images": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(
        out_dir, ["convert"] + (args.raw_argv or []), list(args.inputs),
        _walk_outputs(out_dir), started,
    )
    print(f"converted {len(entries)} of {len(args.inputs)} file(s) into {out_dir}")
    for path, message in failures:
        print(f"error: {path}: {message}", file=sys.stderr)
    return 1 if failures else 0


def cmd_synth(args) -> int:
    started = _now()
    corpus = synth_corpus(args.families, args.per_family, args.seed, args.size)
    out_dir = Path(args.out)
    save_cache(corpus, out_dir)
    write_manifest(
        out_dir, ["synth"] + (args.raw_argv or []), [], _walk_outputs(out_dir), started,
    )
    print(
        f"wrote {len(corpus)} samples across {corpus.family_count} families to {out_dir}"
    )
    return 0


# ----------------------------------------------------------------------------
# eval / embed / project / detect / plot-loss
# ----------------------------------------------------------------------------


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    run_config = _load_run_config(run_dir)
    params, _ = _student_params(run_dir, args.checkpoint)
    corpus = _split_corpus(run_config, args.split)
    report = evaluate(params, corpus)
    out = Path(args.out) if args.out else run_dir / REPORT_FILE
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    correct = int(round(report.accuracy * report.total))
    print(f"accuracy {report.accuracy:.4f} ({correct}/{report.total}) -> {out}")
    return 0


def cmd_embed(args) -> int:
    run_dir = Path(args.run)
    run_config = _load_run_config(run_dir)
    params, _ = _student_params(run_dir, args.checkpoint)
    corpus = _split_corpus(run_config, args.split)
    table = export_embeddings(params, corpus)
    out = Path(args.out) if args.out else run_dir / f"embeddings_{args.split}.csv"
    table.to_csv(out)
    print(f"wrote {len(table)} x {table.dim} embeddings -> {out}")
    return 0


def cmd_project(args) -> int:
    table = EmbeddingTable.from_csv(args.embeddings)
    projection = project_2d(table, args.method, command=args.command)
    out = Path(args.out)
    projection.to_csv(out)
    print(f"wrote {len(projection)} projected rows -> {out}")
    if args.svg:
        names = args.family_names.split(",") if args.family_names else None
        svg = scatter_svg(projection.xy, projection.family_ids, names, args.title)
        Path(args.svg).write_text(svg, encoding="utf-8")
        print(f"wrote scatter plot -> {args.svg}")
    return 0


def cmd_detect(args) -> int:
    run_dir = Path(args.run)
    run_config = _load_run_config(run_dir)
    params, config = _student_params(run_dir, args.checkpoint)
    reference = EmbeddingTable.from_csv(args.reference)
    thresholds = family_thresholds(reference, args.percentile)
    families = run_config.get("families", [])

    rows = []
    for raw in args.queries:
        path = Path(raw)
        if not path.is_file():
            raise MissingFile(str(path))
        with open(path, "rb") as fh:
            data = fh.read()
        image = binary_to_image(
            ByteStream(data, source_id=raw), config.model.input_size
        )
        emb = encoder_forward(params, image[None], "eval")
        probs = head_forward(params, emb, "eval")[0]
        flat = emb.reshape(-1).astype(np.float64)
        verdict = novelty_score(thresholds, flat, args.percentile)
        predicted = int(np.argmax(probs))

        def family_name(fid: int) -> str:
            return families[fid] if 0 <= fid < len(families) else str(fid)

        rows.append(
            [
                raw,
                family_name(predicted),
                repr(float(probs[predicted])),
                family_name(int(verdict.nearest_family)),
                repr(verdict.distance),
                repr(verdict.threshold),
                int(verdict.novel),
            ]
        )

    out = Path(args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "source_id",
                "predicted_family",
                "max_prob",
                "nearest_family",
                "distance",
                "threshold",
                "novel",
            ]
        )
        writer.writerows(rows)
    flagged = sum(row[-1] for row in rows)
    print(f"scored {len(rows)} quer{'y' if len(rows) == 1 else 'ies'}, {flagged} novel -> {out}")
    return 0


def cmd_plot_loss(args) -> int:
    series = []
    for raw in args.runs:
        run_dir = Path(raw)
        metrics_path = run_dir / METRICS_FILE
        if not metrics_path.is_file():
            raise MissingFile(str(metrics_path))
        steps, values = [], []
        with open(metrics_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                steps.append(int(record["step"]))
                values.append(float(record[args.metric]))
        try:
            mode = _load_run_config(run_dir)["train"]["mode"]
            label = f"{run_dir.name} ({mode})"
        except (MissingFile, KeyError):
            label = run_dir.name
        series.append((label, steps, values))
    svg = loss_curves_svg(
        series, title=f"{args.metric} per step", log_y=not args.linear
    )
    Path(args.out).write_text(svg, encoding="utf-8")
    print(f"wrote {len(series)} curve(s) -> {args.out}")
    return 0


# ----------------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Argparse that reports usage problems as validation errors (exit 1)."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _add_corpus_flags(parser) -> None:
    group = parser.add_argument_group("corpus source (exactly one)")
    group.add_argument("--manifest", help="CSV manifest of path,family rows")
    group.add_argument(
        "--root", help="base directory for relative manifest paths (default: manifest's directory)"
    )
    group.add_argument("--cache", help="cache directory written by convert or synth")
    group.add_argument(
        "--synth-families", type=int, help="generate a synthetic corpus with this many families"
    )
    group.add_argument(
        "--synth-per-family", type=int, default=50, help="synthetic samples per family (default: 50)"
    )
    group.add_argument(
        "--synth-seed", type=int, default=0, help="synthetic corpus seed (default: 0)"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="binimage",
        description=(
            "Classify executables as grayscale images: convert bytes to images, "
            "train a CNN+MLP under a composite supervised + self-distillation "
            "objective, and audit the learned embeddings."
        ),
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser(
        "convert",
        help="convert raw binaries to cached images",
        description="Convert raw binary files into cached grayscale images (optionally PNGs).",
    )
    p.add_argument("inputs", nargs="+", help="binary files to convert")
    p.add_argument("--out", required=True, help="output cache directory")
    p.add_argument("--size", type=int, default=400, help="image side length (default: 400)")
    p.add_argument("--png", action="store_true", help="also write PNG previews")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser(
        "synth",
        help="generate a synthetic labeled corpus",
        description="Generate a deterministic synthetic corpus of textured byte streams.",
    )
    p.add_argument("--families", type=int, required=True, help="number of families")
    p.add_argument("--per-family", type=int, required=True, help="samples per family")
    p.add_argument("--seed", type=int, default=0, help="corpus seed (default: 0)")
    p.add_argument("--size", type=int, default=400, help="image side length (default: 400)")
    p.add_argument("--out", required=True, help="output cache directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "train",
        help="train a model and write a run directory",
        description=(
            "Train the classifier. Flags mirror the training config keys; a JSON "
            "config file supplies defaults that explicit flags override."
        ),
    )
    p.add_argument("--config", help="JSON config file (flags below override its keys)")
    p.add_argument("--out", default="runs", help="parent directory for run dirs (default: runs)")
    p.add_argument("--seed", type=int, help="run seed (default: 0)")
    p.add_argument("--mode", choices=MODES, help="training objective (default: composite)")
    p.add_argument("--max-steps", type=int, help="optimizer steps (default: 1000)")
    p.add_argument("--batch-size", type=int, help="samples per step (default: 16)")
    p.add_argument("--learning-rate", type=float, help="Adam step size (default: 1e-4)")
    p.add_argument(
        "--checkpoint-interval", type=int,
        help="also checkpoint every N steps (default: 0 = final only)",
    )
    p.add_argument("--train-fraction", type=float, help="per-family train share (default: 0.9)")
    p.add_argument("--split-seed", type=int, help="split shuffle seed (default: same as --seed)")
    p.add_argument("--resume", action="store_true", help="resume from the run's latest checkpoint")
    p.add_argument("--quiet", action="store_true", help="suppress per-step progress lines")
    model = p.add_argument_group("model")
    model.add_argument("--input-size", type=int, help="square input side (default: 400)")
    model.add_argument("--dropout-rate", type=float, help="dropout probability (default: 0.2)")
    model.add_argument(
        "--same-channels", help="comma list of stride-1 conv widths (default: 32,64,128)"
    )
    model.add_argument(
        "--valid-channels",
        help="comma list of stride-2 conv widths (default: 128,128,256,256,256,256)",
    )
    model.add_argument("--embed-channels", type=int, help="embedding channels (default: 256)")
    model.add_argument("--mlp-width", type=int, help="classifier hidden width (default: 128)")
    model.add_argument("--mlp-blocks", type=int, help="residual blocks in the head (default: 3)")
    loss = p.add_argument_group("loss")
    loss.add_argument("--beta", type=float, help="smooth-L1 knee width (default: 0.5)")
    loss.add_argument(
        "--lambda-weight", type=float, help="embedding-loss weight in the composite (default: 1.0)"
    )
    ema = p.add_argument_group("teacher")
    ema.add_argument("--tau", type=float, help="teacher EMA decay (default: 0.999)")
    ema.add_argument(
        "--tau-warmup-steps", type=int, help="steps to ramp tau linearly (default: 0 = off)"
    )
    ema.add_argument("--tau-start", type=float, help="warmup starting tau (default: 0.9)")
    mask = p.add_argument_group("masking")
    mask.add_argument(
        "--block-size", type=int,
        help="mask block side in pixels (default: largest divisor of input size <= 16)",
    )
    mask.add_argument("--mask-ratio", type=float, help="fraction of blocks masked (default: 0.5)")
    _add_corpus_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "eval",
        help="evaluate a run's checkpoint",
        description="Evaluate a checkpoint on the run's recorded corpus split.",
    )
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--checkpoint", help="checkpoint path (default: latest in the run)")
    p.add_argument(
        "--split", choices=("test", "train", "all"), default="test",
        help="which side of the recorded split (default: test)",
    )
    p.add_argument("--out", help="report JSON path (default: <run>/report.json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "embed",
        help="export embeddings as CSV",
        description="Export eval-mode embeddings for the run's recorded corpus split.",
    )
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--checkpoint", help="checkpoint path (default: latest in the run)")
    p.add_argument(
        "--split", choices=("test", "train", "all"), default="test",
        help="which side of the recorded split (default: test)",
    )
    p.add_argument("--out", help="embedding CSV path (default: <run>/embeddings_<split>.csv)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser(
        "project",
        help="project embeddings to 2-D",
        description=(
            "Project an embedding CSV to 2-D, natively (pca) or through an external "
            "projector command reading the CSV on stdin."
        ),
    )
    p.add_argument("--embeddings", required=True, help="embedding CSV from `embed`")
    p.add_argument(
        "--method", choices=("pca", "external"), default="pca",
        help="projection method (default: pca)",
    )
    p.add_argument("--command", help="external projector command (required with --method external)")
    p.add_argument("--out", required=True, help="projection CSV path")
    p.add_argument("--svg", help="also write a scatter plot SVG here")
    p.add_argument("--family-names", help="comma list of family names for the plot legend")
    p.add_argument("--title", default="Embedding projection", help="plot title")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser(
        "detect",
        help="score query binaries for novelty",
        description=(
            "Embed query binaries with a trained model and flag the ones lying "
            "beyond every known family's distance threshold. Also reports the "
            "classifier's predicted family and its confidence."
        ),
    )
    p.add_argument("--run", required=True, help="run directory with the trained model")
    p.add_argument("--checkpoint", help="checkpoint path (default: latest in the run)")
    p.add_argument("--reference", required=True, help="reference embedding CSV from `embed`")
    p.add_argument("--out", required=True, help="novelty report CSV path")
    p.add_argument(
        "--percentile", type=float, default=95.0,
        help="member-distance percentile defining each family's threshold (default: 95)",
    )
    p.add_argument("queries", nargs="+", help="binary files to score")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser(
        "plot-loss",
        help="overlay loss curves from runs as SVG",
        description="Overlay one logged loss metric across runs in a single SVG.",
    )
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument(
        "--metric", choices=("ce", "d2v", "composite"), default="d2v",
        help="which logged loss to plot (default: d2v)",
    )
    p.add_argument("--linear", action="store_true", help="linear y axis instead of log")
    p.add_argument("--out", required=True, help="output SVG path")
    p.set_defaults(func=cmd_plot_loss)

    parser.set_defaults(func=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if args.func is None:
            parser.error("a subcommand is required")
        args.raw_argv = argv[1:]
        return args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
