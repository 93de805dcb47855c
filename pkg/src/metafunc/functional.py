"""Training and applying the classifier-space regularizing transform.

Variants:
  vanilla          block input is the flattened classifier alone
  with_prototypes  block input is [classifier || prototypes], skip from the
                   classifier slice
  composite        sum of a classifier branch (with skip) and a prototype
                   branch (no skip)

Depth > 1 chains blocks with iterative updates: every block regresses the
same many-shot target from the previous block's prediction and only its
own parameters receive gradients.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .episodes import (
    FunctionalSet,
    SamplerConfig,
    sample_multiclass_functional_set,
)
from .errors import (
    ConfigError,
    DimensionError,
    EmptyEnsemble,
    EmptyFunctionalSet,
    FormatError,
    InvalidWay,
    MissingPrototypes,
)
from .neural import ResidualRegressor, TrainState, default_hidden, load_block, mse_loss, save_block, sgd_step

_MAGIC = b"MFLM"
VARIANTS = ("vanilla", "with_prototypes", "composite")
_VARIANT_TAG = {name: i for i, name in enumerate(VARIANTS)}


@dataclass(frozen=True)
class MflVariant:
    kind: str = "vanilla"
    depth: int = 1

    def validate(self):
        if self.kind not in VARIANTS:
            raise ConfigError(f"unknown variant kind {self.kind!r}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")

    @property
    def uses_prototypes(self) -> bool:
        return self.kind in ("with_prototypes", "composite")


@dataclass(frozen=True)
class MflTrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 0.01
    lr_late: float = 0.001
    lr_drop_epoch: int = 20
    momentum: float = 0.9
    val_fraction: float = 0.1
    hidden: int | None = None  # None = default ratio of the output width
    seed: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")


class MflModel:
    def __init__(self, variant: MflVariant, clf_len: int, proto_len: int, hidden: int | None = None, seed: int = 0):
        variant.validate()
        self.variant = variant
        self.clf_len = clf_len
        self.proto_len = proto_len
        hid = hidden if hidden is not None else default_hidden(clf_len)
        self.hidden = hid
        in_dim = clf_len + (proto_len if variant.kind == "with_prototypes" else 0)
        self.blocks = [
            ResidualRegressor(in_dim, hid, clf_len, skip=True, seed=_block_seed(seed, x))
            for x in range(variant.depth)
        ]
        if variant.kind == "composite":
            self.proto_blocks = [
                ResidualRegressor(proto_len, hid, clf_len, skip=False, seed=_block_seed(seed, 1000 + x))
                for x in range(variant.depth)
            ]
        else:
            self.proto_blocks = []
        self.history: dict = {}

    def _wire(self, cur: np.ndarray, fp: np.ndarray | None) -> np.ndarray:
        if self.variant.kind == "with_prototypes":
            return np.concatenate([cur, fp], axis=1)
        return cur

    def apply_batch(self, f_phi: np.ndarray, f_p: np.ndarray | None = None, depth: int | None = None) -> np.ndarray:
        """Eval-mode transform of a batch of flattened classifiers."""
        f_phi = np.atleast_2d(np.asarray(f_phi, dtype=np.float64))
        if f_phi.shape[1] != self.clf_len:
            raise DimensionError(f"expected classifier length {self.clf_len}")
        if self.variant.uses_prototypes:
            if f_p is None:
                raise MissingPrototypes(f"variant {self.variant.kind} needs prototypes")
            f_p = np.atleast_2d(np.asarray(f_p, dtype=np.float64))
            if f_p.shape != (f_phi.shape[0], self.proto_len):
                raise DimensionError(f"expected prototype length {self.proto_len}")
        cur = f_phi
        n_blocks = self.variant.depth if depth is None else depth
        for x in range(n_blocks):
            out, _ = self.blocks[x].forward(self._wire(cur, f_p), mode="eval")
            if self.variant.kind == "composite":
                extra, _ = self.proto_blocks[x].forward(f_p, mode="eval")
                out = out + extra
            cur = out
        return cur

    def copy_state(self) -> dict:
        return {
            "blocks": [b.copy_params() for b in self.blocks],
            "proto_blocks": [b.copy_params() for b in self.proto_blocks],
        }

    def load_state(self, state: dict) -> None:
        for b, s in zip(self.blocks, state["blocks"]):
            b.load_params(s)
        for b, s in zip(self.proto_blocks, state["proto_blocks"]):
            b.load_params(s)


def _block_seed(seed: int, x: int) -> int:
    return ((int(seed) & 0xFFFFFFFFFFFFFFFF) * 0x9E3779B97F4A7C15 + x + 1) % (2**63)


from .rng import keyed_rng as _rng


def apply(model: MflModel, f_phi: np.ndarray, f_p: np.ndarray | None = None) -> np.ndarray:
    """Transform one flattened classifier; returns a flattened classifier."""
    out = model.apply_batch(np.asarray(f_phi)[None, :], None if f_p is None else np.asarray(f_p)[None, :])
    return out[0]


def ensemble_transform(model: MflModel, classifiers, f_p: np.ndarray | None = None) -> np.ndarray:
    """Unweighted mean of the transforms of hyper-parameter siblings."""
    classifiers = list(classifiers)
    if not classifiers:
        raise EmptyEnsemble("no classifiers to ensemble")
    outs = [apply(model, np.asarray(f), f_p) for f in classifiers]
    return np.mean(outs, axis=0)


def identity_baseline_mse(f_phi: np.ndarray, f_tilde: np.ndarray) -> float:
    diff = np.asarray(f_tilde, dtype=np.float64) - np.asarray(f_phi, dtype=np.float64)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def train_mfl(
    fset: FunctionalSet,
    variant: MflVariant,
    cfg: MflTrainConfig,
    model: MflModel | None = None,
) -> MflModel:
    """Fit the transform on a materialized functional set.

    Per mini-batch, blocks are visited in order; block x consumes block
    x-1's train-mode prediction (computed before x-1's update is visible to
    it) and only block x's parameters are updated. The returned model is
    the epoch snapshot with the lowest validation MSE; the pre-training
    snapshot participates, so the result never scores worse than the
    identity baseline.
    """
    variant.validate()
    cfg.validate()
    if len(fset) == 0:
        raise EmptyFunctionalSet("cannot train on an empty functional set")
    fphi, ftil, fp_all = fset.arrays()
    n, clf_len = fphi.shape
    proto_len = fp_all.shape[1]
    if model is None:
        model = MflModel(variant, clf_len, proto_len, hidden=cfg.hidden, seed=cfg.seed)
    elif model.clf_len != clf_len or (variant.uses_prototypes and model.proto_len != proto_len):
        raise DimensionError("model dimensions do not match the functional set")

    perm = _rng(cfg.seed, 0).permutation(n)
    n_val = int(round(cfg.val_fraction * n))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size < 2:
        raise EmptyFunctionalSet("not enough tuples left for training after the validation split")
    fp_arg = fp_all if variant.uses_prototypes else None

    def split_mse(idx) -> float:
        if idx.size == 0:
            return float("nan")
        pred = model.apply_batch(fphi[idx], None if fp_arg is None else fp_arg[idx])
        return mse_loss(pred, ftil[idx])[0]

    states = [TrainState(b) for b in model.blocks]
    proto_states = [TrainState(b) for b in model.proto_blocks]
    drop_rngs = [_rng(cfg.seed, 100 + x) for x in range(variant.depth)]
    proto_rngs = [_rng(cfg.seed, 200 + x) for x in range(variant.depth)]

    best_state = model.copy_state()
    best_val = split_mse(val_idx) if n_val else float("inf")
    history = {"train_mse": [split_mse(train_idx)], "val_mse": [split_mse(val_idx)]}

    for epoch in range(cfg.epochs):
        lr = cfg.lr if epoch < cfg.lr_drop_epoch else cfg.lr_late
        order = _rng(cfg.seed, 1, epoch).permutation(train_idx.size)
        for start in range(0, train_idx.size, cfg.batch_size):
            batch = train_idx[order[start : start + cfg.batch_size]]
            if batch.size < 2:
                continue  # batch statistics need >= 2 rows
            cur = fphi[batch]
            target = ftil[batch]
            fp_b = fp_all[batch] if variant.uses_prototypes else None
            for x in range(variant.depth):
                inp = model._wire(cur, fp_b)
                out, cache = model.blocks[x].forward(inp, mode="train", rng=drop_rngs[x])
                if variant.kind == "composite":
                    extra, pcache = model.proto_blocks[x].forward(fp_b, mode="train", rng=proto_rngs[x])
                    out = out + extra
                _, grad = mse_loss(out, target)
                grads, _ = model.blocks[x].backward(cache, grad)
                sgd_step(states[x], grads, lr, cfg.momentum)
                if variant.kind == "composite":
                    pgrads, _ = model.proto_blocks[x].backward(pcache, grad)
                    sgd_step(proto_states[x], pgrads, lr, cfg.momentum)
                cur = out  # pre-update prediction feeds the next block
        history["train_mse"].append(split_mse(train_idx))
        val = split_mse(val_idx)
        history["val_mse"].append(val)
        if n_val and val < best_val:
            best_val = val
            best_state = model.copy_state()

    if n_val:
        model.load_state(best_state)
    model.history = history
    return model


def train_mfl_multiclass(
    base,
    sampler_cfg: SamplerConfig,
    variant: MflVariant,
    cfg: MflTrainConfig,
    seed: int | None = None,
) -> MflModel:
    """Outer-loop training: resample a multi-class functional set, then run
    a full inner training round, continuing from the same parameters."""
    if sampler_cfg.n_way < 2:
        raise InvalidWay("multi-class training needs n_way >= 2")
    seed = cfg.seed if seed is None else seed
    model = None
    for i in range(sampler_cfg.outer_loops):
        fset = sample_multiclass_functional_set(base, sampler_cfg, seed=(seed << 8) + i)
        model = train_mfl(fset, variant, replace(cfg, seed=(cfg.seed << 8) + i), model=model)
    return model


def save_model(model: MflModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<IIIII",
                _VARIANT_TAG[model.variant.kind],
                model.variant.depth,
                model.clf_len,
                model.proto_len,
                model.hidden,
            )
        )
        for b in model.blocks:
            save_block(b, fh)
        for b in model.proto_blocks:
            save_block(b, fh)


def load_model(path) -> MflModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise FormatError("bad magic; not a model checkpoint")
        tag, depth, clf_len, proto_len, hidden = struct.unpack("<IIIII", fh.read(20))
        if tag >= len(VARIANTS):
            raise FormatError(f"unknown variant tag {tag}")
        variant = MflVariant(VARIANTS[tag], depth)
        model = MflModel(variant, clf_len, proto_len, hidden=hidden)
        model.blocks = [load_block(fh) for _ in range(depth)]
        if variant.kind == "composite":
            model.proto_blocks = [load_block(fh) for _ in range(depth)]
        return model
