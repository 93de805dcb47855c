"""Dependency-free neural primitives for the parameter-space regressor.

One residual block: FC -> BatchNorm -> LeakyReLU -> inverted Dropout -> FC,
plus a skip connection that adds a leading slice of the input to the
output. All passes are written by hand in float64 with exact analytic
gradients (verified against finite differences in the test suite).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BatchTooSmall, CacheError, DimensionError, FormatError
from .rng import keyed_rng

_MAGIC = b"MFLN"
_EPS = 1e-5

PARAM_NAMES = ("W1", "b1", "gamma", "beta", "W2", "b2")
STAT_NAMES = ("running_mean", "running_var")


def default_hidden(out_dim: int) -> int:
    """Hidden width defaulting to the 600:1601 ratio of the block design."""
    return max(2, round(0.375 * out_dim))


class ResidualRegressor:
    """Residual regression block operating on flattened classifier vectors.

    in_dim >= out_dim; when `skip` is set the leading `out_dim` slice of the
    input is added to the output, so a zero-initialized second layer makes
    the block an exact identity on that slice.
    """

    def __init__(
        self,
        in_dim: int,
        hidden: int,
        out_dim: int,
        skip: bool = True,
        keep_prob: float = 0.9,
        slope: float = 0.01,
        bn_momentum: float = 0.1,
        seed: int = 0,
    ):
        if skip and in_dim < out_dim:
            raise DimensionError("skip requires in_dim >= out_dim")
        if not 0.0 < keep_prob <= 1.0:
            raise DimensionError("keep probability must be in (0, 1]")
        self.in_dim, self.hidden, self.out_dim = in_dim, hidden, out_dim
        self.skip, self.keep_prob, self.slope = skip, keep_prob, slope
        self.bn_momentum = bn_momentum
        rng = keyed_rng(seed)
        bound = 1.0 / np.sqrt(in_dim)
        self.params = {
            "W1": rng.uniform(-bound, bound, (in_dim, hidden)),
            "b1": np.zeros(hidden),
            "gamma": np.ones(hidden),
            "beta": np.zeros(hidden),
            # zero-init keeps the block at the identity at the start
            "W2": np.zeros((hidden, out_dim)),
            "b2": np.zeros(out_dim),
        }
        self.running_mean = np.zeros(hidden)
        self.running_var = np.ones(hidden)

    def copy_params(self) -> dict:
        state = {k: v.copy() for k, v in self.params.items()}
        state["running_mean"] = self.running_mean.copy()
        state["running_var"] = self.running_var.copy()
        return state

    def load_params(self, state: dict) -> None:
        for k in PARAM_NAMES:
            self.params[k] = state[k].copy()
        self.running_mean = state["running_mean"].copy()
        self.running_var = state["running_var"].copy()

    def forward(self, x: np.ndarray, mode: str = "eval", rng: np.random.Generator | None = None):
        """Returns (output, cache); cache is None in eval mode."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"batch must be (B, {self.in_dim})")
        if mode not in ("train", "eval"):
            raise DimensionError(f"unknown mode {mode!r}")
        train = mode == "train"
        if train and x.shape[0] < 2:
            raise BatchTooSmall("train mode needs batch size >= 2 for batch statistics")
        p = self.params
        h = x @ p["W1"] + p["b1"]
        if train:
            mu = h.mean(axis=0)
            var = h.var(axis=0)
            m = self.bn_momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mu
            self.running_var = (1.0 - m) * self.running_var + m * var
        else:
            mu, var = self.running_mean, self.running_var
        ivar = 1.0 / np.sqrt(var + _EPS)
        xhat = (h - mu) * ivar
        u = p["gamma"] * xhat + p["beta"]
        a = np.where(u > 0.0, u, self.slope * u)
        if train and self.keep_prob < 1.0:
            if rng is None:
                raise CacheError("train mode with dropout needs an rng")
            mask = (rng.random(a.shape) < self.keep_prob) / self.keep_prob
        else:
            mask = np.ones_like(a)
        d = a * mask
        y = d @ p["W2"] + p["b2"]
        if self.skip:
            y = y + x[:, : self.out_dim]
        if not train:
            return y, None
        cache = {
            "x": x, "h": h, "mu": mu, "ivar": ivar, "xhat": xhat,
            "u": u, "mask": mask, "d": d, "B": x.shape[0],
        }
        return y, cache

    def backward(self, cache: dict, grad_out: np.ndarray):
        """Exact gradients of the train-mode forward; returns (grads, grad_x)."""
        if cache is None or "xhat" not in cache:
            raise CacheError("backward needs a train-mode cache")
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != (cache["B"], self.out_dim):
            raise DimensionError("grad_out shape mismatch")
        p = self.params
        B = cache["B"]
        grads = {}
        grads["W2"] = cache["d"].T @ grad_out
        grads["b2"] = grad_out.sum(axis=0)
        dd = grad_out @ p["W2"].T
        da = dd * cache["mask"]
        du = da * np.where(cache["u"] > 0.0, 1.0, self.slope)
        grads["gamma"] = (du * cache["xhat"]).sum(axis=0)
        grads["beta"] = du.sum(axis=0)
        dxhat = du * p["gamma"]
        # batch-norm backward through the batch statistics
        ivar = cache["ivar"]
        xc = cache["h"] - cache["mu"]
        dvar = np.sum(dxhat * xc, axis=0) * (-0.5) * ivar**3
        dmu = -np.sum(dxhat, axis=0) * ivar + dvar * (-2.0 / B) * xc.sum(axis=0)
        dh = dxhat * ivar + dvar * (2.0 / B) * xc + dmu / B
        grads["W1"] = cache["x"].T @ dh
        grads["b1"] = dh.sum(axis=0)
        grad_x = dh @ p["W1"].T
        if self.skip:
            grad_x[:, : self.out_dim] += grad_out
        return grads, grad_x


@dataclass
class TrainState:
    """Momentum buffers for one block; parameters live on the block itself."""

    net: ResidualRegressor
    velocity: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if not self.velocity:
            self.velocity = {k: np.zeros_like(v) for k, v in self.net.params.items()}


def sgd_step(state: TrainState, grads: dict, lr: float, momentum: float = 0.0) -> TrainState:
    """v <- momentum*v + g; theta <- theta - lr*v (in place)."""
    if not 0.0 <= momentum < 1.0:
        raise DimensionError("momentum must be in [0, 1)")
    for k, g in grads.items():
        if g.shape != state.net.params[k].shape:
            raise DimensionError(f"gradient shape mismatch for {k}")
        state.velocity[k] = momentum * state.velocity[k] + g
        state.net.params[k] = state.net.params[k] - lr * state.velocity[k]
    state.step += 1
    return state


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean over the batch of squared Euclidean distance, with gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise DimensionError("pred and target must be equal-shaped 2D arrays")
    diff = pred - target
    loss = float(np.sum(diff * diff) / pred.shape[0])
    return loss, 2.0 * diff / pred.shape[0]


def save_block(net: ResidualRegressor, path_or_fh) -> None:
    fh = path_or_fh if hasattr(path_or_fh, "write") else open(path_or_fh, "wb")
    own = fh is not path_or_fh
    try:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<IIIB3f",
                net.in_dim, net.hidden, net.out_dim, int(net.skip),
                net.keep_prob, net.slope, net.bn_momentum,
            )
        )
        for name in PARAM_NAMES:
            fh.write(net.params[name].astype("<f4").tobytes())
        fh.write(net.running_mean.astype("<f4").tobytes())
        fh.write(net.running_var.astype("<f4").tobytes())
    finally:
        if own:
            fh.close()


def load_block(path_or_fh) -> ResidualRegressor:
    fh = path_or_fh if hasattr(path_or_fh, "read") else open(path_or_fh, "rb")
    own = fh is not path_or_fh
    try:
        if fh.read(4) != _MAGIC:
            raise FormatError("bad magic; not a network checkpoint")
        header = fh.read(struct.calcsize("<IIIB3f"))
        in_dim, hidden, out_dim, skip, keep, slope, bn_m = struct.unpack("<IIIB3f", header)
        net = ResidualRegressor(in_dim, hidden, out_dim, skip=bool(skip),
                                keep_prob=keep, slope=slope, bn_momentum=bn_m)
        shapes = {
            "W1": (in_dim, hidden), "b1": (hidden,), "gamma": (hidden,),
            "beta": (hidden,), "W2": (hidden, out_dim), "b2": (out_dim,),
        }
        for name in PARAM_NAMES:
            count = int(np.prod(shapes[name]))
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise FormatError("truncated checkpoint")
            net.params[name] = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shapes[name])
        for attr in STAT_NAMES:
            buf = fh.read(4 * hidden)
            if len(buf) != 4 * hidden:
                raise FormatError("truncated checkpoint")
            setattr(net, attr, np.frombuffer(buf, dtype="<f4").astype(np.float64))
        return net
    finally:
        if own:
            fh.close()
