"""Command-line front end.

Subcommands: ``attack``, ``defend``, ``report``, ``predict``.
Exit codes: 0 ok, 2 usage or configuration error, 3 backend failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .attack import (PRESETS, AttackConfig, AttackConfigError, ReportTable, read_jsonl,
                     run_batch, source_target_analysis, summarize, write_jsonl)
from .classifier import (BackendError, RemoteCaptioner, RemoteClassifier, WeightFileError,
                         load_builtin)
from .defenses import (DefenseError, DefenseSpec, recovery_eval, write_accuracy_csv,
                       write_recovery_csv, write_recovery_log)
from .es import CMAConfig, DEConfig, OptimizerError
from .imageio import ImageFormatError, load_image, save_image
from .toy import load_toy_classifier

EXIT_OK, EXIT_USAGE, EXIT_BACKEND = 0, 2, 3


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from exc


_ATTACK_KEYS = {"name", "domain", "location", "optimizer", "shape", "scratches", "objective",
                "target", "alpha", "beta", "budget", "seed", "restarts", "color_range"}


def build_config(doc: dict, args) -> AttackConfig:
    """AttackConfig from a parsed config file, with command-line flags taking precedence."""
    section = dict(doc.get("attack", {}))
    preset = section.pop("preset", None)
    if getattr(args, "preset", None) is not None:
        preset = args.preset
    base = AttackConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[preset]
    unknown = set(section) - _ATTACK_KEYS
    if unknown:
        raise UsageError(f"unknown [attack] keys: {sorted(unknown)}")
    for key in ("budget", "scratches", "shape", "seed", "target", "objective", "domain",
                "location", "optimizer", "restarts", "name"):
        val = getattr(args, key, None)
        if val is not None:
            section[key] = val
    if "color_range" in section:
        section["color_range"] = tuple(section["color_range"])
    de = dict(doc.get("de", {}))
    cma = dict(doc.get("cma", {}))
    for key, val in (("population", args.population), ("iterations", args.iterations)):
        if val is not None:
            de[key] = val
            cma[key] = val
    try:
        return replace(base, de=replace(base.de, **de), cma=replace(base.cma, **cma), **section)
    except TypeError as exc:
        raise UsageError(f"bad config: {exc}") from exc


def config_digest(configs, classifier_id: str, images_digest: str) -> str:
    payload = json.dumps({"configs": [c.to_dict() for c in configs], "classifier": classifier_id,
                          "images": images_digest, "version": __version__}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


# --------------------------------------------------------------------------
# inputs


def resolve_classifier(args, doc=None):
    section = (doc or {}).get("classifier", {})
    model = getattr(args, "model", None) or section.get("model")
    remote = getattr(args, "remote", None) or section.get("remote")
    caption = getattr(args, "caption", None) or section.get("caption")
    if sum(v is not None for v in (model, remote, caption)) > 1:
        raise UsageError("choose only one of --model, --remote, --caption")
    if caption:
        return RemoteCaptioner(caption)
    if remote:
        return RemoteClassifier(remote)
    if model in (None, "toy"):
        return load_toy_classifier()
    if not Path(model).is_file():
        raise UsageError(f"model file not found: {model}")
    return load_builtin(model)


IMAGE_SUFFIXES = (".ppm", ".scrt")


def load_dataset(directory):
    """Images and labels from ``directory``; labels come from labels.csv (filename,label)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"image directory not found: {directory}")
    labels_path = directory / "labels.csv"
    if not labels_path.is_file():
        raise UsageError(f"missing labels file: {labels_path}")
    with open(labels_path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and rows[0][0] == "filename":
        rows = rows[1:]
    names, data = [], []
    for row in rows:
        if len(row) < 2:
            raise UsageError(f"{labels_path}: malformed row {row}")
        path = directory / row[0]
        if not path.is_file():
            raise UsageError(f"image listed in labels.csv not found: {path}")
        try:
            data.append((load_image(path), int(row[1])))
        except ValueError as exc:
            raise UsageError(f"{path}: {exc}") from exc
        names.append(row[0])
    if not data:
        raise UsageError(f"no images listed in {labels_path}")
    return names, data


def _digest_files(directory) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(directory).iterdir()):
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# subcommands


def cmd_attack(args) -> int:
    doc = load_config(args.config) if args.config else {}
    config = build_config(doc, args)
    classifier = resolve_classifier(args, doc)
    names, dataset = load_dataset(args.images)
    out = Path(args.out)
    (out / "adv").mkdir(parents=True, exist_ok=True)

    started = time.time()
    report = run_batch(dataset, [config], classifier, workers=args.workers)
    write_jsonl(report.results, out / "results.jsonl")
    report.to_csv(out / "report.csv")
    for r in report.results:
        ext = ".ppm" if config.domain == "image" else ".scrt"
        save_image(r.image, out / "adv" / f"{Path(names[r.index]).stem}_r{r.restart}{ext}")

    manifest = {
        "config_digest": config_digest([config], classifier.identity, _digest_files(args.images)),
        "config": config.to_dict(), "seed": config.seed, "version": __version__,
        "classifier": classifier.identity, "images": str(args.images),
        "started": started, "finished": time.time(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if report.eligible == 0:
        print("warning: classifier got every image wrong; nothing was attacked", file=sys.stderr)
    for row in report.rows:
        print(f"{row.config}: {row.successes}/{row.attempts} successful")
    return EXIT_OK


def cmd_defend(args) -> int:
    try:
        spec = DefenseSpec(args.defense, args.quality if args.defense == "jpeg" else None)
    except DefenseError as exc:
        raise UsageError(str(exc)) from exc
    classifier = resolve_classifier(args)
    results = _read_results(args.results)
    adversarials = [(r.source, r.image) for r in results if r.success and r.source is not None]
    benign = None
    if args.benign:
        _, data = load_dataset(args.benign)
        benign = [(y, x) for x, y in data]
    report = recovery_eval(adversarials, spec, classifier, benign)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_recovery_csv([report], out / "recovery.csv")
    write_recovery_log(report, out / "recovery_log.jsonl")
    if benign:
        write_accuracy_csv([report], out / "accuracy.csv")
    print(f"{report.defense}: recovered {report.recovered}/{report.total} "
          f"({report.recovery_rate:.2f}%)")
    return EXIT_OK


def _read_results(path):
    if not Path(path).is_file():
        raise UsageError(f"results file not found: {path}")
    try:
        return read_jsonl(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{path}: not a results log ({exc})") from exc


def cmd_report(args) -> int:
    results = _read_results(args.results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in dict.fromkeys(r.config for r in results):
        group = [r for r in results if r.config == name]
        rows.append(summarize(group, AttackConfig(name=name, scratches=group[0].scratches,
                                                  budget=10 ** 9)))
    ReportTable(rows, len({r.index for r in results})).to_csv(out / "report.csv")
    labelled = [r for r in results if r.source is not None and r.target is not None]
    if labelled:
        k = args.classes or 1 + max(max(r.source, r.target) for r in labelled)
        source_target_analysis(labelled, k).to_csv(out / "source_target.csv")
    print(f"wrote {out / 'report.csv'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    classifier = resolve_classifier(args)
    try:
        x = load_image(args.image)
    except (OSError, ImageFormatError) as exc:
        raise UsageError(f"{args.image}: {exc}") from exc
    if isinstance(classifier, RemoteCaptioner):
        text, conf = classifier.caption(x)
        print(json.dumps({"caption": text, "confidence": conf}))
    else:
        p = classifier.probabilities(x)
        print(json.dumps({"probs": [float(v) for v in p], "argmax": int(np.argmax(p))}))
    return EXIT_OK


def _add_backend(p):
    p.add_argument("--model", help="SCR1 weight file, or 'toy' for the bundled model")
    p.add_argument("--remote", help="base URL of a remote classifier (POST /predict)")
    p.add_argument("--caption", help="base URL of a remote caption service (POST /caption)")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scratchattack", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="attack a directory of labelled images")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--preset", help=f"start from a named preset: {', '.join(sorted(PRESETS))}")
    p.add_argument("--images", required=True, help="directory with images and labels.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--scratches", type=int)
    p.add_argument("--shape", choices=["bezier", "line"])
    p.add_argument("--seed", type=int)
    p.add_argument("--target", type=int)
    p.add_argument("--objective", choices=["targeted", "untargeted", "caption"])
    p.add_argument("--domain", choices=["image", "network"])
    p.add_argument("--location", choices=["variable", "fixed"])
    p.add_argument("--optimizer", choices=["de", "cma"])
    p.add_argument("--restarts", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--name")
    p.add_argument("--workers", type=int, default=1)
    _add_backend(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="recovery rate of a defense on attack results")
    p.add_argument("--results", required=True, help="results.jsonl from 'attack'")
    p.add_argument("--defense", required=True, help="clip, median or jpeg")
    p.add_argument("--quality", type=int, default=90)
    p.add_argument("--benign", help="directory of clean labelled images for the accuracy drop")
    p.add_argument("--out", required=True)
    _add_backend(p)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("report", help="report tables from a results log")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("predict", help="classify a single image")
    p.add_argument("image")
    _add_backend(p)
    p.set_defaults(func=cmd_predict)
    return ap


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except BackendError as exc:
        print(f"error: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (UsageError, AttackConfigError, OptimizerError, DefenseError, WeightFileError,
            ImageFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # last resort: a diagnostic, not a traceback
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
