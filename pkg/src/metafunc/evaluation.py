"""Episodic N-way K-shot evaluation and reporting.

Episodes are sampled from a novel embedding set with RNG streams keyed by
(seed, episode index), so baseline and transformed runs on the same config
consume identical supports and queries, and results do not depend on the
worker count.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .classifiers import (
    FitConfig,
    LinearClassifier,
    MulticlassLinear,
    compute_prototypes,
    decision,
    train_linear_svm,
    train_logistic,
    train_softmax,
)
from .embeddings import EmbeddingSet
from .errors import ConfigError, DimensionError
from .functional import MflModel, MflTrainConfig, MflVariant, apply, ensemble_transform, train_mfl
from .episodes import SamplerConfig, sample_binary_functional_set

BASE_CLASSIFIERS = ("logistic", "svm", "softmax")


@dataclass(frozen=True)
class EpisodeConfig:
    n_way: int = 2
    k_shot: int = 1
    queries_per_class: int = 15
    n_episodes: int = 600
    base_classifier: str = "logistic"
    classifier_C: tuple = (1.0,)
    seed: int = 0
    fit_max_iter: int = 20000
    fit_tol: float = 1e-6

    def validate(self, novel: EmbeddingSet | None = None):
        if self.n_way < 2:
            raise ConfigError("n_way must be >= 2")
        if self.k_shot < 1 or self.queries_per_class < 1 or self.n_episodes < 1:
            raise ConfigError("k_shot, queries_per_class and n_episodes must be >= 1")
        if self.base_classifier not in BASE_CLASSIFIERS:
            raise ConfigError(f"unknown base classifier {self.base_classifier!r}")
        if not self.classifier_C:
            raise ConfigError("classifier_C must be non-empty")
        if novel is not None:
            classes = novel.classes
            if self.n_way > len(classes):
                raise ConfigError(f"n_way={self.n_way} exceeds {len(classes)} novel classes")
            smallest = min(len(novel.class_vectors(c)) for c in classes)
            if self.k_shot + self.queries_per_class > smallest:
                raise ConfigError("k_shot + queries_per_class exceeds the smallest class size")


@dataclass(frozen=True)
class AccuracyReport:
    per_episode: np.ndarray
    mean: float
    ci95: float
    config: dict = field(default_factory=dict)

    @staticmethod
    def from_accuracies(acc, config: dict | None = None) -> "AccuracyReport":
        acc = np.asarray(acc, dtype=np.float64)
        mean = float(acc.mean())
        ci95 = confidence_interval_95(acc)
        return AccuracyReport(acc, mean, ci95, config or {})

    def to_json(self) -> str:
        return json.dumps(
            {
                "mean": self.mean,
                "ci95": self.ci95,
                "n_episodes": int(self.per_episode.shape[0]),
                "per_episode": [float(a) for a in self.per_episode],
                "config": self.config,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "AccuracyReport":
        doc = json.loads(text)
        return AccuracyReport(
            np.asarray(doc["per_episode"], dtype=np.float64),
            float(doc["mean"]),
            float(doc["ci95"]),
            doc.get("config", {}),
        )


def confidence_interval_95(acc: np.ndarray) -> float:
    acc = np.asarray(acc, dtype=np.float64)
    if acc.size < 2:
        return 0.0
    return float(1.96 * acc.std(ddof=1) / np.sqrt(acc.size))


from .rng import keyed_rng as _rng


def _fit_cfg(C: float, cfg: EpisodeConfig) -> FitConfig:
    return FitConfig(inverse_reg_C=C, max_iter=cfg.fit_max_iter, tol=cfg.fit_tol)


def sample_episode(novel: EmbeddingSet, cfg: EpisodeConfig, episode_idx: int, positive_class: int | None = None):
    """Deterministic supports/queries for one episode.

    Returns (way_classes, supports (n_way,k,d), queries (n_way,q,d),
    support_index) where support_index holds per-class record positions.
    """
    rng = _rng(cfg.seed, episode_idx)
    classes = novel.classes
    if positive_class is None:
        way = [int(c) for c in rng.choice(classes, size=cfg.n_way, replace=False)]
    else:
        others = [c for c in classes if c != positive_class]
        picked = rng.choice(others, size=cfg.n_way - 1, replace=False)
        way = [int(positive_class)] + [int(c) for c in picked]
    index = novel.class_index()
    supports, queries, support_index = [], [], []
    for c in way:
        rows = index[c]
        pick = rng.choice(rows.size, size=cfg.k_shot + cfg.queries_per_class, replace=False)
        vecs = novel.vectors[rows[pick]].astype(np.float64)
        supports.append(vecs[: cfg.k_shot])
        queries.append(vecs[cfg.k_shot :])
        support_index.append([int(rows[p]) for p in pick[: cfg.k_shot]])
    return way, np.stack(supports), np.stack(queries), support_index


def _train_ovr(supports: np.ndarray, C: float, cfg: EpisodeConfig):
    """One-vs-rest binary classifiers plus per-class prototype pairs."""
    n_way, k, d = supports.shape
    train = train_linear_svm if cfg.base_classifier == "svm" else train_logistic
    clfs, protos = [], []
    for c in range(n_way):
        X_pos = supports[c]
        X_neg = supports[np.arange(n_way) != c].reshape(-1, d)
        X = np.concatenate([X_pos, X_neg])
        y = np.concatenate([np.ones(k), -np.ones(X_neg.shape[0])])
        clfs.append(train(X, y, _fit_cfg(C, cfg)))
        protos.append(compute_prototypes(X_pos, X_neg).flatten())
    return clfs, protos


def _ovr_accuracy(flat_clfs: list[np.ndarray], queries: np.ndarray) -> float:
    n_way, q, d = queries.shape
    X = queries.reshape(-1, d)
    scores = np.stack([X @ f[:-1] + f[-1] for f in flat_clfs], axis=1)
    pred = np.argmax(scores, axis=1)
    truth = np.repeat(np.arange(n_way), q)
    return float(np.mean(pred == truth))


def _softmax_accuracy(flat: np.ndarray, n_way: int, queries: np.ndarray) -> float:
    q = queries.shape[1]
    clf = MulticlassLinear.unflatten(flat, n_way)
    pred = clf.predict(queries.reshape(-1, queries.shape[2]))
    truth = np.repeat(np.arange(n_way), q)
    return float(np.mean(pred == truth))


def evaluate_episode(
    novel: EmbeddingSet,
    cfg: EpisodeConfig,
    episode_idx: int,
    model: MflModel | None = None,
    positive_class: int | None = None,
) -> dict:
    """Per-C vanilla/transformed accuracies plus the ensemble accuracy."""
    way, supports, queries, support_index = sample_episode(novel, cfg, episode_idx, positive_class)
    n_way, k, d = supports.shape
    out = {"way": way, "support_index": support_index, "vanilla": {}, "transformed": {}}
    if cfg.base_classifier == "softmax":
        X = supports.reshape(-1, d)
        y = np.repeat(np.arange(n_way), k)
        proto = supports.mean(axis=1).ravel()
        flats = {}
        for C in cfg.classifier_C:
            flat = train_softmax(X, y, _fit_cfg(C, cfg)).flatten()
            flats[C] = flat
            out["vanilla"][C] = _softmax_accuracy(flat, n_way, queries)
            if model is not None:
                out["transformed"][C] = _softmax_accuracy(apply(model, flat, proto), n_way, queries)
        if model is not None:
            ens = ensemble_transform(model, list(flats.values()), proto)
            out["ensemble"] = _softmax_accuracy(ens, n_way, queries)
        return out
    per_c_flat, per_c_proto = {}, None
    for C in cfg.classifier_C:
        clfs, protos = _train_ovr(supports, C, cfg)
        flats = [c.flatten() for c in clfs]
        per_c_flat[C] = flats
        per_c_proto = protos
        out["vanilla"][C] = _ovr_accuracy(flats, queries)
        if model is not None:
            tflats = [apply(model, f, p) for f, p in zip(flats, protos)]
            out["transformed"][C] = _ovr_accuracy(tflats, queries)
    if model is not None:
        ens = [
            ensemble_transform(model, [per_c_flat[C][c] for C in cfg.classifier_C], per_c_proto[c])
            for c in range(n_way)
        ]
        out["ensemble"] = _ovr_accuracy(ens, queries)
    return out


def _map_episodes(fn, n_episodes: int, workers: int = 1) -> list:
    if workers <= 1:
        return [fn(i) for i in range(n_episodes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_episodes)))


def run_fsl_eval(novel: EmbeddingSet, cfg: EpisodeConfig, model: MflModel | None = None,
                 use_ensemble: bool = False, workers: int = 1) -> AccuracyReport:
    """Episodic accuracy report for one configuration.

    With no model the first C value's vanilla accuracy is reported; with a
    model, its transformed accuracy (or the hyper-parameter ensemble).
    """
    cfg.validate(novel)
    if use_ensemble and model is None:
        raise ConfigError("ensemble evaluation needs a model")
    c0 = cfg.classifier_C[0]

    def one(i):
        res = evaluate_episode(novel, cfg, i, model=model)
        if use_ensemble:
            return res["ensemble"]
        return res["transformed"][c0] if model is not None else res["vanilla"][c0]

    acc = _map_episodes(one, cfg.n_episodes, workers)
    return AccuracyReport.from_accuracies(acc, config=_echo(cfg, model, use_ensemble))


def run_paired_eval(novel: EmbeddingSet, cfg: EpisodeConfig, model: MflModel,
                    workers: int = 1) -> tuple[AccuracyReport, AccuracyReport]:
    """Baseline and transformed reports over identical episode streams."""
    cfg.validate(novel)
    c0 = cfg.classifier_C[0]
    res = _map_episodes(lambda i: evaluate_episode(novel, cfg, i, model=model), cfg.n_episodes, workers)
    van = AccuracyReport.from_accuracies([r["vanilla"][c0] for r in res], config=_echo(cfg, None, False))
    tra = AccuracyReport.from_accuracies([r["transformed"][c0] for r in res], config=_echo(cfg, model, False))
    return van, tra


def run_cross_domain_eval(
    train_base: EmbeddingSet,
    novel_other_domain: EmbeddingSet,
    sampler_cfg: SamplerConfig,
    variant: MflVariant,
    train_cfg: MflTrainConfig,
    episode_cfg: EpisodeConfig,
    workers: int = 1,
) -> tuple[AccuracyReport, AccuracyReport]:
    """Train the transform on one domain, evaluate paired on another."""
    if train_base.dim != novel_other_domain.dim:
        raise DimensionError("domains must share the embedding dimension")
    fset = sample_binary_functional_set(train_base, sampler_cfg, seed=train_cfg.seed)
    model = train_mfl(fset, variant, train_cfg)
    return run_paired_eval(novel_other_domain, episode_cfg, model, workers=workers)


def per_class_improvement(novel: EmbeddingSet, model: MflModel, cfg: EpisodeConfig,
                          workers: int = 1) -> list[dict]:
    """Per-novel-class paired accuracies for 2-way episodes.

    Each row fixes one class as the positive and reports vanilla,
    transformed and delta means over cfg.n_episodes episodes.
    """
    if cfg.n_way != 2:
        raise ConfigError("per-class improvement is defined for 2-way episodes")
    cfg.validate(novel)
    c0 = cfg.classifier_C[0]
    table = []
    for c in novel.classes:
        res = _map_episodes(
            lambda i: evaluate_episode(novel, replace(cfg, seed=cfg.seed + 7919 * (c + 1)), i,
                                       model=model, positive_class=c),
            cfg.n_episodes,
            workers,
        )
        van = float(np.mean([r["vanilla"][c0] for r in res]))
        tra = float(np.mean([r["transformed"][c0] for r in res]))
        table.append({"class": int(c), "vanilla": van, "transformed": tra, "delta": tra - van})
    return table


def decision_boundary_grid(clf: LinearClassifier | np.ndarray, bounds, resolution: int) -> np.ndarray:
    """Row-major grid of decision scores over a 2D box.

    Rows follow ascending y, columns ascending x.
    """
    if isinstance(clf, np.ndarray):
        clf = LinearClassifier.unflatten(clf)
    if clf.dim != 2:
        raise DimensionError("boundary grids require 2D classifiers")
    if resolution < 2:
        raise ConfigError("resolution must be >= 2")
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return decision(clf, pts).reshape(resolution, resolution)


def save_grid_csv(grid: np.ndarray, bounds, path) -> None:
    x0, x1, y0, y1 = bounds
    n = grid.shape[0]
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "score"])
        for i, y in enumerate(ys):
            for j, x in enumerate(xs):
                writer.writerow([repr(float(x)), repr(float(y)), repr(float(grid[i, j]))])


def save_grid_ppm(grid: np.ndarray, path) -> None:
    """Binary PPM raster: blue for negative scores, red for positive."""
    n, m = grid.shape
    mag = np.abs(grid)
    scale = mag.max() if mag.max() > 0 else 1.0
    inten = (255 * np.sqrt(mag / scale)).astype(np.uint8)
    img = np.zeros((n, m, 3), dtype=np.uint8)
    img[..., 0] = np.where(grid > 0, inten, 0)
    img[..., 2] = np.where(grid < 0, inten, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{m} {n}\n255\n".encode())
        fh.write(img[::-1].tobytes())  # flip so increasing y points up


def save_report_csv(report: AccuracyReport, path, label: str = "run") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "n_episodes", "mean", "ci95"])
        writer.writerow([label, report.per_episode.shape[0], repr(report.mean), repr(report.ci95)])


def _echo(cfg: EpisodeConfig, model, use_ensemble: bool) -> dict:
    return {
        "n_way": cfg.n_way,
        "k_shot": cfg.k_shot,
        "queries_per_class": cfg.queries_per_class,
        "n_episodes": cfg.n_episodes,
        "base_classifier": cfg.base_classifier,
        "classifier_C": list(cfg.classifier_C),
        "seed": cfg.seed,
        "transform": "ensemble" if use_ensemble else ("model" if model is not None else "none"),
    }
