"""Command-line entry point: ``wildspread <subcommand> ...``.

Subcommands: synth, stack, sample, train, eval, predict, rollout. JSON configs
are checked against the schemas in ``wildspread/schemas``. Exit status is 0 on
success, 1 for invalid arguments or configs, 2 for failures while running.
Every run writes a JSON run manifest next to its main output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from . import __version__

log = logging.getLogger("wildspread")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2
DEFAULT_SAMPLE_COUNT = 20000


class ValidationError(Exception):
    """Bad arguments or config; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# --- config handling -----------------------------------------------------------


def load_schema(name: str) -> dict:
    return json.loads(resources.files("wildspread").joinpath("schemas", f"{name}.json").read_text())


def _field_path(err: jsonschema.ValidationError) -> str:
    parts = list(err.absolute_path)
    if err.validator == "required" and isinstance(err.instance, dict):
        missing = [f for f in err.validator_value if f not in err.instance]
        if missing:
            parts.append(missing[0])
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in parts)


def validate_config(doc, schema_name: str, source: str = "config") -> None:
    """Raise ValidationError naming the offending field path."""
    validator = jsonschema.Draft202012Validator(load_schema(schema_name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = [f"{source}: {_field_path(e)}: {e.message}" for e in errors]
        raise ValidationError("\n".join(lines))


def read_config(path, schema_name: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"{path}: no such config file") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e})") from None
    validate_config(doc, schema_name, str(path))
    return doc


def _resolve(base: Path, p: str) -> str:
    return p if os.path.isabs(p) else str(base / p)


# --- run manifest -----------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _is_manifest(p: Path) -> bool:
    return p.name == "run.json" or p.name.endswith(".run.json")


def _checksums(paths) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file() and not _is_manifest(q)):
                out[str(f)] = sha256_file(f)
        elif p.is_file():
            out[str(p)] = sha256_file(p)
    return out


def write_run_manifest(path, subcommand: str, argv, seed, config_path, config, inputs, outputs,
                       wall_time: float, threads) -> Path:
    """Atomic JSON record of one run; only ``wall_time`` differs between repeats."""
    doc = {
        "subcommand": subcommand,
        "argv": list(argv),
        "config_path": str(config_path) if config_path else None,
        "config": config,
        "seed": seed,
        "threads": threads,
        "inputs": _checksums(inputs),
        "outputs": _checksums(outputs),
        "wall_time": round(wall_time, 3),
        "version": __version__,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


class Run:
    """What a subcommand reports back for the run manifest."""

    def __init__(self, seed=None, config_path=None, config=None, inputs=(), outputs=(), manifest=None):
        self.seed = seed
        self.config_path = config_path
        self.config = config
        self.inputs = list(inputs)
        self.outputs = list(outputs)
        self.manifest = manifest


def _default_manifest(out) -> Path:
    out = Path(out)
    return out / "run.json" if out.is_dir() else out.with_name(out.name + ".run.json")


# --- subcommands ----------------------------------------------------------------


def cmd_synth(args) -> Run:
    from .stacking import save_archive
    from .synthfire import SynthError, SynthParams, generate_archive, write_bundle

    doc = read_config(args.config, "synth") if args.config else {}
    if args.seed is not None:
        doc = {**doc, "seed": args.seed}
    try:
        params = SynthParams.from_dict(doc)
    except (SynthError, TypeError) as e:
        raise ValidationError(f"{args.config or 'synth'}: {e}") from None
    archive = generate_archive(params)
    save_archive(archive, args.out)
    outputs = [args.out]
    if args.bundle:
        write_bundle(params, args.bundle)
        outputs.append(args.bundle)
    log.info("synthetic fire %s: %d daily stacks -> %s", params.fire_id, len(archive.stacks), args.out)
    return Run(params.seed, args.config, params.to_dict(), [args.config] if args.config else [], outputs)


def cmd_stack(args) -> Run:
    from .stacking import archive_from_manifest, save_archive

    doc = read_config(args.manifest, "fire_manifest")
    archive = archive_from_manifest(args.manifest)
    save_archive(archive, args.out)
    base = Path(args.manifest).parent
    raw = [args.manifest, _resolve(base, doc["perimeters"]), _resolve(base, doc["weather"])]
    raw += [_resolve(base, p) for sc in doc["scenes"] for p in sc["layers"].values()]
    log.info("fire %s: %d stacks -> %s", archive.fire_id, len(archive.stacks), args.out)
    return Run(None, args.manifest, doc, raw, [args.out])


def pair_counts(total: int, pairs: int) -> list:
    """Spread ``total`` POIs over ``pairs`` stack pairs, earlier pairs taking the remainder."""
    return [total // pairs + (1 if i < total % pairs else 0) for i in range(pairs)]


def cmd_sample(args) -> Run:
    from .sampling import sample_mask_scheme, sample_pois, write_store
    from .stacking import load_archive

    if args.count is not None and args.count < 1:
        raise ValidationError("--count must be >= 1")
    if args.per_pair is not None and args.per_pair < 1:
        raise ValidationError("--per-pair must be >= 1")
    if args.patch < 1 or args.patch % 2 == 0:
        raise ValidationError("--patch must be odd and positive")
    if len(args.splits) != 3 or any(f <= 0 for f in args.splits) or abs(sum(args.splits) - 1) > 1e-9:
        raise ValidationError("--splits needs three positive fractions summing to 1")
    seed = 0 if args.seed is None else args.seed
    samples = []
    schema = None
    for path in args.archives:
        archive = load_archive(path)
        if schema is not None and archive.schema != schema:
            raise RuntimeError(f"{path}: layer schema differs from the first archive")
        schema = archive.schema
        pairs = archive.pairs()
        if not pairs:
            raise RuntimeError(f"{path}: archive has fewer than two stacks")
        counts = [args.per_pair] * len(pairs) if args.per_pair else pair_counts(args.count or DEFAULT_SAMPLE_COUNT, len(pairs))
        for (a, b), k in zip(pairs, counts):
            if k == 0:
                continue
            if args.scheme == "mask":
                samples += sample_mask_scheme(a, b, k, args.patch, seed, fire_id=archive.fire_id)
            else:
                samples += sample_pois(a, b, k, seed, archive.fire_id, args.patch, args.augment, args.majority_cap)
    write_store(samples, args.out, seed, tuple(args.splits), schema,
                extra={"sources": [Path(p).name for p in args.archives]})
    log.info("%d samples -> %s", len(samples), args.out)
    config = {"count": args.count, "per_pair": args.per_pair, "splits": args.splits, "scheme": args.scheme,
              "patch": args.patch, "augment": args.augment, "majority_cap": args.majority_cap}
    return Run(seed, None, config, args.archives, [args.out])


def cmd_train(args) -> Run:
    from .training import TrainConfig, TrainError, train_run

    doc = read_config(args.config, "train")
    base = Path(args.config).parent
    doc["stores"] = [_resolve(base, s) for s in doc["stores"]]
    if doc.get("val_stores"):
        doc["val_stores"] = [_resolve(base, s) for s in doc["val_stores"]]
    if doc.get("resume_from"):
        doc["resume_from"] = _resolve(base, doc["resume_from"])
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        config = TrainConfig.from_dict(doc)
    except (TrainError, TypeError) as e:
        raise ValidationError(f"{args.config}: {e}") from None
    out = Path(args.out)
    run = train_run(config, out)
    last = run.history[-1]
    log.info("trained %d epochs in %.1fs; final train acc %s, val acc %s",
             len(run.history), run.wall_time, last.train_acc, last.val_acc)
    inputs = [args.config] + config.stores + (config.val_stores or [])
    return Run(config.seed, args.config, config.to_dict(), inputs, [out], out / "run.json")


def _load_model(path):
    from .nn.checkpoint import load_checkpoint

    return load_checkpoint(path)


def cmd_eval(args) -> Run:
    from .stacking import LayerSchema
    from .training import evaluate_with_loss, metrics, persistence_predictor, _open

    if not 0.0 <= args.threshold <= 1.0:
        raise ValidationError("--threshold must lie in [0, 1]")
    model = _load_model(args.checkpoint)
    stores = _open(args.stores)
    loss, cm = evaluate_with_loss(model, stores, args.split, args.threshold)
    result = {
        "checkpoint": str(args.checkpoint),
        "stores": [str(s) for s in args.stores],
        "split": args.split,
        "threshold": args.threshold,
        "loss": loss,
        "confusion": cm.to_dict(),
        "normalized": cm.normalized(),
        "metrics": metrics(cm).to_dict(),
    }
    if args.persistence:
        schema = stores[0].schema_list
        if schema is None:
            raise RuntimeError("store has no layer schema; cannot locate the fire-mask channel")
        fi = LayerSchema.from_list(schema).fire_mask_index
        _, pcm = evaluate_with_loss(persistence_predictor(fi), stores, args.split, args.threshold)
        result["persistence"] = {"confusion": pcm.to_dict(), "normalized": pcm.normalized(),
                                 "metrics": metrics(pcm).to_dict()}
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    print(cm.table())
    outputs = []
    if args.out:
        tmp = Path(args.out + ".tmp")
        tmp.write_text(text + "\n")
        os.replace(tmp, args.out)
        outputs.append(args.out)
    manifest = _default_manifest(args.out) if args.out else None
    return Run(None, None, {"split": args.split, "threshold": args.threshold},
               [args.checkpoint] + list(args.stores), outputs, manifest)


def _pick_stack(archive, timestamp: Optional[str]):
    from .geo import parse_timestamp

    if timestamp is None:
        return archive.stacks[0]
    try:
        t = parse_timestamp(timestamp)
    except ValueError as e:
        raise ValidationError(f"--timestamp: {e}") from None
    return archive.find(t)


def cmd_predict(args) -> Run:
    from .rollout import export_mask, predict_dense
    from .stacking import load_archive

    if not 0.0 <= args.threshold <= 1.0:
        raise ValidationError("--threshold must lie in [0, 1]")
    model = _load_model(args.checkpoint)
    stack = _pick_stack(load_archive(args.archive), args.timestamp)
    mask = predict_dense(model, stack)
    export_mask(mask, args.out, args.format, args.threshold, model)
    return Run(None, None, {"timestamp": args.timestamp, "threshold": args.threshold},
               [args.checkpoint, args.archive], [args.out, args.out + ".json"])


def cmd_rollout(args) -> Run:
    from .rollout import export_mask, rollout
    from .stacking import load_archive

    if args.steps < 1:
        raise ValidationError("--steps must be >= 1")
    if not 0.0 <= args.threshold <= 1.0:
        raise ValidationError("--threshold must lie in [0, 1]")
    model = _load_model(args.checkpoint)
    stack = _pick_stack(load_archive(args.archive), args.timestamp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for pm, binary in rollout(model, stack, args.steps, args.threshold, args.union):
        export_mask(pm, out / f"step_{pm.horizon:03d}.{args.format}", args.format, args.threshold, model,
                    {"burned_pixels": int(binary.sum())})
    config = {"steps": args.steps, "threshold": args.threshold, "union": args.union, "timestamp": args.timestamp}
    return Run(None, None, config, [args.checkpoint, args.archive], [out], out / "run.json")


# --- parser and entry point --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wildspread", description="Next-day wildfire spread pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed", type=int, default=None, help="seed overriding every config seed")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS/OpenMP thread cap; 1 gives the bit-reproducible mode")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--manifest", default=None, help="run manifest path (default: next to the output)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth", help="generate a synthetic fire archive")
    s.add_argument("config", nargs="?", help="synth parameter JSON (defaults when omitted)")
    s.add_argument("--out", required=True, help="archive .npz to write")
    s.add_argument("--bundle", help="also write the raw-file bundle (rasters, GeoJSON, CSV, manifest) here")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("stack", help="build a layer-stack archive from a fire manifest")
    s.add_argument("manifest", help="fire manifest JSON")
    s.add_argument("--out", required=True, help="archive .npz to write")
    s.set_defaults(func=cmd_stack)

    s = sub.add_parser("sample", help="sample patches from archives into a zip store")
    s.add_argument("archives", nargs="+", help="archive .npz files")
    s.add_argument("--out", required=True, help="store .zip to write")
    g = s.add_mutually_exclusive_group()
    g.add_argument("-n", "--count", type=int, default=None,
                   help=f"POIs per archive, spread over its stack pairs (default {DEFAULT_SAMPLE_COUNT})")
    g.add_argument("--per-pair", type=int, default=None, help="POIs per consecutive stack pair")
    s.add_argument("--splits", type=float, nargs=3, default=[0.8, 0.1, 0.1], metavar=("TRAIN", "VAL", "TEST"))
    s.add_argument("--scheme", choices=["binary", "mask"], default="binary")
    s.add_argument("--patch", type=int, default=31, help="patch side length (odd)")
    s.add_argument("--augment", action="store_true", help="add the 7 dihedral variants of every patch")
    s.add_argument("--majority-cap", type=float, default=None,
                   help="keep at most this many majority-class samples per minority sample")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("train", help="train the classifier")
    s.add_argument("config", help="training config JSON")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="confusion matrix and metrics on a store split")
    s.add_argument("checkpoint")
    s.add_argument("stores", nargs="+")
    s.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--persistence", action="store_true", help="also score the persistence baseline")
    s.add_argument("--out", help="also write the JSON report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="dense next-day probability mask")
    s.add_argument("checkpoint")
    s.add_argument("archive")
    s.add_argument("--timestamp", help="stack timestamp (default: first stack)")
    s.add_argument("--out", required=True, help="mask file (.asc or .pgm)")
    s.add_argument("--format", choices=["asc", "pgm"], default=None, help="default: from the extension")
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("rollout", help="multi-day autoregressive masks")
    s.add_argument("checkpoint")
    s.add_argument("archive")
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--timestamp", help="starting stack timestamp (default: first stack)")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--union", action="store_true", help="keep burned pixels burning")
    s.add_argument("--format", choices=["asc", "pgm"], default="pgm")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_rollout)
    return p


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                result = args.func(args)
        else:
            result = args.func(args)
    except ValidationError as e:
        print(f"wildspread {args.command}: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # any failure past validation is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"wildspread {args.command}: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest = args.manifest or result.manifest
    if manifest is None and result.outputs:
        manifest = _default_manifest(result.outputs[0])
    if manifest is not None:
        write_run_manifest(manifest, args.command, argv, result.seed, result.config_path, result.config,
                           result.inputs, result.outputs, time.perf_counter() - t0, args.threads)
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
