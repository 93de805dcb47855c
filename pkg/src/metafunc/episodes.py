"""Sampling paired functional sets from a base embedding set.

Each tuple pairs a few-shot classifier with its many-shot counterpart and
the prototypes of the few-shot support samples. Binary tuples are sampled
per positive class: the many-shot side sees every positive plus a sampled
negative pool (twice the positive count, trained at C=1), and each few-shot
side takes s positives and k*s negatives from inside that episode, once per
(k, C) combination. Multi-class tuples carry softmax classifiers over
n_way sampled classes.

All randomness is keyed by (seed, class, repeat indices) so tuples can be
sampled independently and the output order is canonical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .classifiers import (
    FitConfig,
    class_prototypes,
    compute_prototypes,
    train_logistic,
    train_softmax,
)
from .embeddings import EmbeddingSet
from .errors import (
    ConfigError,
    EmptyBase,
    FormatError,
    InsufficientClasses,
    InsufficientSamples,
)

_MAGIC = b"FSET"
_VERSION = 1


@dataclass(frozen=True)
class SamplerConfig:
    many_shot_repeats_Ml: int = 5
    few_shot_repeats_Mf: int = 100
    shot_s: int = 1
    negative_multipliers_k: tuple = (1, 2, 3, 4)
    hyper_set_H: tuple = (1e-2, 1e-1, 1e0, 1e1, 1e2)
    many_shot_negative_factor: int = 2
    n_way: int = 1  # 1 = binary one-vs-rest tuples
    outer_loops: int = 1
    fit_max_iter: int = 20000
    fit_tol: float = 1e-6

    def validate(self):
        if self.many_shot_repeats_Ml < 1 or self.few_shot_repeats_Mf < 1:
            raise ConfigError("repeat counts must be >= 1")
        if self.shot_s < 1:
            raise ConfigError("shot_s must be >= 1")
        if not self.hyper_set_H:
            raise ConfigError("hyper_set_H must be non-empty")
        if self.n_way < 1:
            raise ConfigError("n_way must be >= 1")
        if self.many_shot_negative_factor < 1:
            raise ConfigError("many_shot_negative_factor must be >= 1")
        if self.n_way == 1 and not self.negative_multipliers_k:
            raise ConfigError("negative_multipliers_k must be non-empty")
        if self.outer_loops < 1:
            raise ConfigError("outer_loops must be >= 1")


@dataclass(frozen=True)
class FunctionalTuple:
    f_phi: np.ndarray  # float32
    f_tilde: np.ndarray
    f_p: np.ndarray
    meta: dict

    def __post_init__(self):
        for name in ("f_phi", "f_tilde", "f_p"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"non-finite values in {name}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.f_phi.shape != self.f_tilde.shape:
            raise ConfigError("f_phi and f_tilde must have the same length")

    def __eq__(self, other) -> bool:
        if not isinstance(other, FunctionalTuple):
            return NotImplemented
        return (
            np.array_equal(self.f_phi, other.f_phi)
            and np.array_equal(self.f_tilde, other.f_tilde)
            and np.array_equal(self.f_p, other.f_p)
            and self.meta == other.meta
        )


@dataclass(frozen=True)
class FunctionalSet:
    dim: int
    n_way: int  # 1 = binary mode
    tuples: tuple

    @property
    def mode(self) -> str:
        return "binary" if self.n_way == 1 else f"multiclass({self.n_way})"

    def __len__(self) -> int:
        return len(self.tuples)

    def classifier_len(self) -> int:
        return self.tuples[0].f_phi.shape[0] if self.tuples else 0

    def arrays(self):
        """(F_phi, F_tilde, F_p) stacked float64 arrays."""
        fphi = np.stack([t.f_phi for t in self.tuples]).astype(np.float64)
        ftil = np.stack([t.f_tilde for t in self.tuples]).astype(np.float64)
        fp = np.stack([t.f_p for t in self.tuples]).astype(np.float64)
        return fphi, ftil, fp

    def __eq__(self, other) -> bool:
        if not isinstance(other, FunctionalSet):
            return NotImplemented
        return self.dim == other.dim and self.n_way == other.n_way and self.tuples == other.tuples


from .rng import keyed_rng as _rng


def expected_binary_count(n_base_classes: int, cfg: SamplerConfig) -> int:
    return (
        n_base_classes
        * cfg.many_shot_repeats_Ml
        * cfg.few_shot_repeats_Mf
        * len(cfg.negative_multipliers_k)
        * len(cfg.hyper_set_H)
    )


def expected_multiclass_count(cfg: SamplerConfig) -> int:
    """Tuples per outer loop; multiply by outer_loops for the grand total."""
    return cfg.many_shot_repeats_Ml * cfg.few_shot_repeats_Mf * len(cfg.hyper_set_H)


def _fit_cfg(C: float, cfg: SamplerConfig) -> FitConfig:
    return FitConfig(inverse_reg_C=C, max_iter=cfg.fit_max_iter, tol=cfg.fit_tol)


def sample_binary_functional_set(base: EmbeddingSet, cfg: SamplerConfig, seed: int) -> FunctionalSet:
    cfg.validate()
    classes = base.classes
    if not classes:
        raise EmptyBase("base set has no classes")
    index = base.class_index()
    ks = sorted(cfg.negative_multipliers_k)
    hs = sorted(cfg.hyper_set_H)
    max_k = max(ks)
    tuples = []
    for b in classes:
        pos_rows = index[b]
        n_b = pos_rows.size
        if n_b < cfg.shot_s:
            raise InsufficientSamples(f"class {b} has {n_b} records, needs >= {cfg.shot_s}")
        neg_rows = np.concatenate([index[c] for c in classes if c != b]) if len(classes) > 1 else np.array([], int)
        n_neg_episode = cfg.many_shot_negative_factor * n_b
        if neg_rows.size < n_neg_episode:
            raise InsufficientSamples(
                f"negative pool for class {b} has {neg_rows.size} records, needs >= {n_neg_episode}"
            )
        X_pos_all = base.vectors[pos_rows].astype(np.float64)
        for ml in range(cfg.many_shot_repeats_Ml):
            rng_ep = _rng(seed, b, ml)
            neg_pick = rng_ep.choice(neg_rows.size, size=n_neg_episode, replace=False)
            X_neg_ep = base.vectors[neg_rows[neg_pick]].astype(np.float64)
            X_many = np.concatenate([X_pos_all, X_neg_ep])
            y_many = np.concatenate([np.ones(n_b), -np.ones(n_neg_episode)])
            f_tilde = train_logistic(X_many, y_many, _fit_cfg(1.0, cfg)).flatten().astype(np.float32)
            for mf in range(cfg.few_shot_repeats_Mf):
                rng_sub = _rng(seed, b, ml, mf)
                for k in ks:
                    pos_pick = rng_sub.choice(n_b, size=cfg.shot_s, replace=False)
                    need_neg = k * cfg.shot_s
                    if need_neg > n_neg_episode:
                        raise InsufficientSamples(
                            f"k={k}, s={cfg.shot_s} needs {need_neg} negatives, episode has {n_neg_episode}"
                        )
                    sub_neg = rng_sub.choice(n_neg_episode, size=need_neg, replace=False)
                    X_s_pos = X_pos_all[pos_pick]
                    X_s_neg = X_neg_ep[sub_neg]
                    X_few = np.concatenate([X_s_pos, X_s_neg])
                    y_few = np.concatenate([np.ones(cfg.shot_s), -np.ones(need_neg)])
                    f_p = compute_prototypes(X_s_pos, X_s_neg).flatten().astype(np.float32)
                    for C in hs:
                        f_phi = train_logistic(X_few, y_few, _fit_cfg(C, cfg)).flatten().astype(np.float32)
                        tuples.append(
                            FunctionalTuple(
                                f_phi,
                                f_tilde,
                                f_p,
                                meta={
                                    "class": int(b),
                                    "ml": ml,
                                    "mf": mf,
                                    "k": int(k),
                                    "C": float(C),
                                    "s": cfg.shot_s,
                                    # class-relative positive picks and picks into the
                                    # canonical (sorted-class, input-order) negative pool
                                    "pos_idx": [int(i) for i in pos_pick],
                                    "neg_pool_idx": [int(neg_pick[j]) for j in sub_neg],
                                },
                            )
                        )
    fset = FunctionalSet(base.dim, 1, tuple(tuples))
    assert len(fset) == expected_binary_count(len(classes), cfg)
    return fset


def sample_multiclass_functional_set(base: EmbeddingSet, cfg: SamplerConfig, seed: int) -> FunctionalSet:
    cfg.validate()
    if cfg.n_way < 2:
        raise ConfigError("multiclass sampling needs n_way >= 2")
    classes = base.classes
    if not classes:
        raise EmptyBase("base set has no classes")
    if cfg.n_way > len(classes):
        raise InsufficientClasses(f"n_way={cfg.n_way} exceeds {len(classes)} base classes")
    index = base.class_index()
    hs = sorted(cfg.hyper_set_H)
    tuples = []
    for ml in range(cfg.many_shot_repeats_Ml):
        rng_ep = _rng(seed, ml)
        way = sorted(int(c) for c in rng_ep.choice(classes, size=cfg.n_way, replace=False))
        per_class = []
        for c in way:
            rows = index[c]
            if rows.size < cfg.shot_s:
                raise InsufficientSamples(f"class {c} has {rows.size} records, needs >= {cfg.shot_s}")
            per_class.append(base.vectors[rows].astype(np.float64))
        X_many = np.concatenate(per_class)
        y_many = np.concatenate([np.full(len(v), i) for i, v in enumerate(per_class)])
        f_tilde = train_softmax(X_many, y_many, _fit_cfg(1.0, cfg)).flatten().astype(np.float32)
        for mf in range(cfg.few_shot_repeats_Mf):
            rng_sub = _rng(seed, ml, mf)
            picks = [rng_sub.choice(len(v), size=cfg.shot_s, replace=False) for v in per_class]
            supports = np.stack([v[p] for v, p in zip(per_class, picks)])
            X_few = supports.reshape(-1, base.dim)
            y_few = np.repeat(np.arange(cfg.n_way), cfg.shot_s)
            f_p = class_prototypes(supports).astype(np.float32)
            for C in hs:
                f_phi = train_softmax(X_few, y_few, _fit_cfg(C, cfg)).flatten().astype(np.float32)
                tuples.append(
                    FunctionalTuple(
                        f_phi,
                        f_tilde,
                        f_p,
                        meta={
                            "way": way,
                            "ml": ml,
                            "mf": mf,
                            "C": float(C),
                            "s": cfg.shot_s,
                            "picks": [[int(i) for i in p] for p in picks],
                        },
                    )
                )
    fset = FunctionalSet(base.dim, cfg.n_way, tuple(tuples))
    assert len(fset) == expected_multiclass_count(cfg)
    return fset


def binary_support_vectors(base: EmbeddingSet, meta: dict) -> tuple[np.ndarray, np.ndarray]:
    """Recover the few-shot support samples a binary tuple was built from."""
    index = base.class_index()
    b = meta["class"]
    pos = base.vectors[index[b]][meta["pos_idx"]].astype(np.float64)
    neg_rows = np.concatenate([index[c] for c in base.classes if c != b])
    neg = base.vectors[neg_rows[meta["neg_pool_idx"]]].astype(np.float64)
    return pos, neg


def save_functional_set(fset: FunctionalSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIQ", _VERSION, fset.dim, fset.n_way, len(fset)))
        for t in fset.tuples:
            meta = json.dumps(t.meta, sort_keys=True).encode()
            fh.write(struct.pack("<IIII", t.f_phi.shape[0], t.f_tilde.shape[0], t.f_p.shape[0], len(meta)))
            fh.write(t.f_phi.astype("<f4").tobytes())
            fh.write(t.f_tilde.astype("<f4").tobytes())
            fh.write(t.f_p.astype("<f4").tobytes())
            fh.write(meta)


def load_functional_set(path) -> FunctionalSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError("bad magic; not a functional-set file")
    if len(blob) < 24:
        raise FormatError("truncated header")
    version, dim, n_way, count = struct.unpack_from("<IIIQ", blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}")
    off = 24
    tuples = []
    for _ in range(count):
        if off + 16 > len(blob):
            raise FormatError("truncated tuple header")
        l_phi, l_til, l_p, l_meta = struct.unpack_from("<IIII", blob, off)
        off += 16
        need = 4 * (l_phi + l_til + l_p) + l_meta
        if off + need > len(blob):
            raise FormatError("truncated tuple payload")
        f_phi = np.frombuffer(blob, dtype="<f4", count=l_phi, offset=off)
        off += 4 * l_phi
        f_tilde = np.frombuffer(blob, dtype="<f4", count=l_til, offset=off)
        off += 4 * l_til
        f_p = np.frombuffer(blob, dtype="<f4", count=l_p, offset=off)
        off += 4 * l_p
        try:
            meta = json.loads(blob[off : off + l_meta].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError("corrupt tuple metadata") from exc
        off += l_meta
        if l_phi != l_til:
            raise FormatError("tuple classifier lengths disagree")
        expect_phi = dim + 1 if n_way == 1 else n_way * (dim + 1)
        expect_p = 2 * dim if n_way == 1 else n_way * dim
        if l_phi != expect_phi or l_p != expect_p:
            raise FormatError("tuple payload length inconsistent with header dims")
        tuples.append(FunctionalTuple(f_phi.copy(), f_tilde.copy(), f_p.copy(), meta))
    if off != len(blob):
        raise FormatError("trailing bytes after last tuple")
    return FunctionalSet(dim, n_way, tuple(tuples))
