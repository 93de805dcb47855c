"""Command-line front end.

Subcommands: gen, sample, train, eval, xdomain, perclass, boundary.
A single JSON config carries one section per stage; CLI flags override
their config keys. Exit codes: 0 success, 2 config error, 3 I/O error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import embeddings as emb
from . import episodes as eps
from . import evaluation as ev
from . import figures
from . import functional as fn
from .classifiers import LinearClassifier, load_classifier
from .errors import ConfigError, DataError, FormatError, MetafuncError

log = logging.getLogger("metafunc")

_TOP_KEYS = {"seed", "gen", "sample", "train", "eval", "boundary"}
_SECTION_KEYS = {
    "gen": {"kind", "num_classes", "samples_per_class", "dim", "noise_sigma", "separation", "seed"},
    "sample": {
        "many_shot_repeats_Ml", "few_shot_repeats_Mf", "shot_s", "negative_multipliers_k",
        "hyper_set_H", "many_shot_negative_factor", "n_way", "outer_loops",
        "fit_max_iter", "fit_tol",
    },
    "train": {
        "variant", "depth", "epochs", "batch_size", "lr", "lr_late", "lr_drop_epoch",
        "momentum", "val_fraction", "hidden", "seed",
    },
    "eval": {
        "n_way", "k_shot", "queries_per_class", "n_episodes", "base_classifier",
        "classifier_C", "seed", "ensemble", "fit_max_iter", "fit_tol",
    },
    "boundary": {"bounds", "resolution", "ppm"},
}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise _IOFailure(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name, keys in _SECTION_KEYS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be an object")
        bad = set(section) - keys
        if bad:
            raise ConfigError(f"unknown keys in section {name!r}: {sorted(bad)}")
    return doc


class _IOFailure(MetafuncError):
    pass


def _section(doc: dict, name: str, seed_override: int | None) -> dict:
    section = dict(doc.get(name, {}))
    if seed_override is not None:
        section["seed"] = seed_override
    elif "seed" not in section and "seed" in doc:
        section["seed"] = doc["seed"]
    return section


def _dist_spec(section: dict) -> emb.DistributionSpec:
    try:
        return emb.DistributionSpec(**section)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _sampler_cfg(section: dict) -> eps.SamplerConfig:
    section = dict(section)
    section.pop("seed", None)
    for key in ("negative_multipliers_k", "hyper_set_H"):
        if key in section:
            section[key] = tuple(section[key])
    try:
        cfg = eps.SamplerConfig(**section)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def _train_cfg(section: dict) -> tuple[fn.MflVariant, fn.MflTrainConfig]:
    section = dict(section)
    variant = fn.MflVariant(section.pop("variant", "vanilla"), section.pop("depth", 1))
    variant.validate()
    try:
        cfg = fn.MflTrainConfig(**section)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return variant, cfg


def _episode_cfg(section: dict) -> tuple[ev.EpisodeConfig, bool]:
    section = dict(section)
    use_ensemble = bool(section.pop("ensemble", False))
    if "classifier_C" in section:
        section["classifier_C"] = tuple(section["classifier_C"])
    try:
        cfg = ev.EpisodeConfig(**section)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, use_ensemble


def _write(path: Path, writer) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc}") from exc


def _read(path, reader):
    try:
        return reader(path)
    except OSError as exc:
        raise _IOFailure(f"cannot read {path}: {exc}") from exc


def cmd_gen(args, doc) -> int:
    spec = _dist_spec(_section(doc, "gen", args.seed))
    es = emb.generate_synthetic(spec)
    _write(Path(args.out), lambda p: emb.save_embeddings(es, p))
    log.info("gen: wrote %d records of dim %d to %s", len(es), es.dim, args.out)
    print(f"wrote {len(es)} records (dim {es.dim}) to {args.out}")
    return 0


def cmd_sample(args, doc) -> int:
    base = _read(args.embeddings, emb.load_embeddings)
    section = _section(doc, "sample", args.seed)
    seed = int(section.pop("seed", 0))
    cfg = _sampler_cfg(section)
    if cfg.n_way >= 2:
        fset = eps.sample_multiclass_functional_set(base, cfg, seed)
        expected = eps.expected_multiclass_count(cfg)
    else:
        fset = eps.sample_binary_functional_set(base, cfg, seed)
        expected = eps.expected_binary_count(len(base.classes), cfg)
    _write(Path(args.out), lambda p: eps.save_functional_set(fset, p))
    print(f"sampled {len(fset)} tuples (expected {expected}) to {args.out}")
    return 0


def cmd_train(args, doc) -> int:
    variant, cfg = _train_cfg(_section(doc, "train", args.seed))
    if args.embeddings:
        base = _read(args.embeddings, emb.load_embeddings)
        sample_section = _section(doc, "sample", None)
        sample_section.pop("seed", None)
        sampler_cfg = _sampler_cfg(sample_section)
        model = fn.train_mfl_multiclass(base, sampler_cfg, variant, cfg)
    elif args.fset:
        fset = _read(args.fset, eps.load_functional_set)
        model = fn.train_mfl(fset, variant, cfg)
    else:
        raise ConfigError("train needs --fset or --embeddings")
    for epoch, (tr, va) in enumerate(zip(model.history["train_mse"], model.history["val_mse"])):
        print(f"epoch {epoch:3d}  train_mse {tr:.6e}  val_mse {va:.6e}")
    _write(Path(args.out), lambda p: fn.save_model(model, p))
    out = Path(args.out)
    _write(out.with_suffix(".training.png"), lambda p: figures.plot_training_curve(model.history, p))
    print(f"wrote model to {args.out}")
    return 0


def _emit_report(report: ev.AccuracyReport, out_dir: Path, stem: str) -> None:
    _write(out_dir / f"{stem}.json", lambda p: p.write_text(report.to_json()))
    _write(out_dir / f"{stem}.csv", lambda p: ev.save_report_csv(report, p, label=stem))
    _write(out_dir / f"{stem}.png", lambda p: figures.plot_accuracy_hist(report, p, title=stem))


def cmd_eval(args, doc) -> int:
    novel = _read(args.novel, emb.load_embeddings)
    cfg, use_ensemble = _episode_cfg(_section(doc, "eval", args.seed))
    out_dir = Path(args.out)
    if args.model:
        model = _read(args.model, fn.load_model)
        if use_ensemble:
            report = ev.run_fsl_eval(novel, cfg, model=model, use_ensemble=True, workers=args.workers)
            _emit_report(report, out_dir, "ensemble")
            print(f"ensemble: mean {report.mean:.4f} +/- {report.ci95:.4f}")
        else:
            van, tra = ev.run_paired_eval(novel, cfg, model, workers=args.workers)
            _emit_report(van, out_dir, "vanilla")
            _emit_report(tra, out_dir, "transformed")
            _write(out_dir / "paired.png", lambda p: figures.plot_paired_hist(van, tra, p))
            print(f"vanilla:     mean {van.mean:.4f} +/- {van.ci95:.4f}")
            print(f"transformed: mean {tra.mean:.4f} +/- {tra.ci95:.4f}")
    else:
        report = ev.run_fsl_eval(novel, cfg, workers=args.workers)
        _emit_report(report, out_dir, "vanilla")
        print(f"vanilla: mean {report.mean:.4f} +/- {report.ci95:.4f}")
    return 0


def cmd_xdomain(args, doc) -> int:
    base = _read(args.base, emb.load_embeddings)
    novel = _read(args.novel, emb.load_embeddings)
    sample_section = _section(doc, "sample", args.seed)
    seed = int(sample_section.pop("seed", 0))
    sampler_cfg = _sampler_cfg(sample_section)
    variant, train_cfg = _train_cfg(_section(doc, "train", seed if args.seed is not None else None))
    episode_cfg, _ = _episode_cfg(_section(doc, "eval", args.seed))
    van, tra = ev.run_cross_domain_eval(base, novel, sampler_cfg, variant, train_cfg, episode_cfg,
                                        workers=args.workers)
    out_dir = Path(args.out)
    _emit_report(van, out_dir, "vanilla")
    _emit_report(tra, out_dir, "transformed")
    _write(out_dir / "paired.png", lambda p: figures.plot_paired_hist(van, tra, p, title="Cross-domain"))
    print(f"vanilla:     mean {van.mean:.4f} +/- {van.ci95:.4f}")
    print(f"transformed: mean {tra.mean:.4f} +/- {tra.ci95:.4f}")
    return 0


def cmd_perclass(args, doc) -> int:
    novel = _read(args.novel, emb.load_embeddings)
    model = _read(args.model, fn.load_model)
    cfg, _ = _episode_cfg(_section(doc, "eval", args.seed))
    table = ev.per_class_improvement(novel, model, cfg, workers=args.workers)
    out_dir = Path(args.out)

    def write_csv(p):
        import csv

        with open(p, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "vanilla", "transformed", "delta"])
            for row in table:
                writer.writerow([row["class"], repr(row["vanilla"]), repr(row["transformed"]), repr(row["delta"])])

    _write(out_dir / "perclass.csv", write_csv)
    _write(out_dir / "perclass.json", lambda p: p.write_text(json.dumps(table, indent=2, sort_keys=True)))
    _write(out_dir / "perclass.png", lambda p: figures.plot_class_deltas(table, p))
    for row in table:
        print(f"class {row['class']:3d}  vanilla {row['vanilla']:.4f}  "
              f"transformed {row['transformed']:.4f}  delta {row['delta']:+.4f}")
    return 0


def cmd_boundary(args, doc) -> int:
    clf = _read(args.classifier, load_classifier)
    if not isinstance(clf, LinearClassifier):
        raise ConfigError("boundary grids need a binary linear classifier")
    section = _section(doc, "boundary", None)
    bounds = tuple(section.get("bounds", (-10.0, 10.0, -10.0, 10.0)))
    if len(bounds) != 4:
        raise ConfigError("bounds must be [x0, x1, y0, y1]")
    resolution = int(section.get("resolution", 200))
    grid = ev.decision_boundary_grid(clf, bounds, resolution)
    out_dir = Path(args.out)
    _write(out_dir / "boundary.csv", lambda p: ev.save_grid_csv(grid, bounds, p))
    if section.get("ppm", False):
        _write(out_dir / "boundary.ppm", lambda p: ev.save_grid_ppm(grid, p))
    _write(out_dir / "boundary.png", lambda p: figures.plot_boundary(grid, bounds, p))
    print(f"wrote {resolution}x{resolution} boundary grid to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metafunc",
                                     description="Classifier-space regularization pipelines")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--workers", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic embeddings")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("sample", help="sample a functional set")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("train", help="train the functional transform")
    p.add_argument("--fset")
    p.add_argument("--embeddings", help="multi-class outer-loop training from embeddings")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="episodic few-shot evaluation")
    p.add_argument("--novel", required=True)
    p.add_argument("--model")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("xdomain", help="cross-domain paired evaluation")
    p.add_argument("--base", required=True)
    p.add_argument("--novel", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_xdomain)

    p = sub.add_parser("perclass", help="per-class improvement table")
    p.add_argument("--novel", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_perclass)

    p = sub.add_parser("boundary", help="decision-boundary raster")
    p.add_argument("--classifier", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_boundary)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("METAFUNC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        doc = _load_config(args.config)
        return args.fn(args, doc)
    except _IOFailure as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except (FormatError,) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except (DataError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except MetafuncError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
