"""Ablation models: SMLP (per-element perceptrons plus sum pooling) and PAB-only."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import (
    DTYPES,
    ConfigError,
    ConvFrontEnd,
    DecoderWeights,
    QuAN,
    canonical_miniset_order,
    conv_forward,
    conv_output_width,
    decoder_head,
    pab_forward,
)
from .nn import Linear, Module
from .tensor import Tensor, no_grad, reshape, sigmoid, sum_

VARIANTS = ("smlp", "pab-only")


@dataclass
class BaselineConfig:
    """Perceptron widths run encoder first; for SMLP the last entry of
    ``encoder_widths`` feeds ``decoder_widths`` and then a 1-wide readout."""

    variant: str
    grid: tuple[int, int]
    set_size: int
    encoder_widths: tuple[int, ...] = (48, 16)
    decoder_widths: tuple[int, ...] = (48,)
    hidden_activation: str = "identity"
    use_conv: bool = False
    n_channels: int = 8
    kernel: int = 2
    d_hidden: int = 16
    n_heads: int = 4
    residual_activation: str = "relu"
    precision: str = "f64"

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.decoder_widths = tuple(int(w) for w in self.decoder_widths)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown baseline variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.encoder_widths:
            raise ConfigError("encoder_widths must not be empty")
        if self.variant == "pab-only":
            if self.encoder_widths[-1] != self.d_hidden:
                raise ConfigError("PAB-only encoder must end at d_hidden")
            if self.d_hidden % self.n_heads:
                raise ConfigError(f"d_hidden={self.d_hidden} is not divisible by n_heads={self.n_heads}")
        if self.precision not in DTYPES:
            raise ConfigError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return DTYPES[self.precision]

    @property
    def d_in(self) -> int:
        if self.use_conv:
            return conv_output_width(self.grid, self.kernel, self.n_channels)
        return self.grid[0] * self.grid[1]

    def to_dict(self):
        d = asdict(self)
        for key in ("grid", "encoder_widths", "decoder_widths"):
            d[key] = list(d[key])
        return d


class _SetBaseline(Module):
    variant = ""

    def __init__(self, config: BaselineConfig, seed=0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        dt = config.dtype
        if config.use_conv:
            self.conv = ConvFrontEnd(config.n_channels, config.kernel, rng=rng, dtype=dt)
        dims = [config.d_in, *config.encoder_widths]
        self.encoder = [Linear(a, b, config.hidden_activation, rng=rng, dtype=dt)
                        for a, b in zip(dims, dims[1:])]
        self._build_head(rng, dt)

    def _build_head(self, rng, dt):
        raise NotImplementedError

    def _arrange(self, X):
        X = np.asarray(X)
        single = X.ndim == 3
        if single:
            X = X[None]
        if X.shape[1] != self.config.set_size or tuple(X.shape[-2:]) != self.config.grid:
            raise ConfigError(
                f"input sets of shape {X.shape[1:]} do not match set_size={self.config.set_size}, "
                f"grid={self.config.grid}")
        # content order makes the pooled sums independent of the input order
        order = canonical_miniset_order(X, np.broadcast_to(np.arange(X.shape[1]), X.shape[:2]), 1)
        return np.take_along_axis(X, order[:, :, None, None], axis=1), order, single

    def _encode(self, X, train):
        if self.config.use_conv:
            x = conv_forward(X, self.conv, train)
        else:
            x = Tensor(X.reshape(*X.shape[:-2], -1).astype(self.config.dtype))
        for layer in self.encoder:
            x = layer(x)
        return x

    def predict(self, sets, batch_size=64):
        sets = np.asarray(sets)
        with no_grad():
            out = [self.forward(sets[i:i + batch_size], train=False).data
                   for i in range(0, len(sets), batch_size)]
        return np.concatenate(out).astype(np.float64) if out else np.zeros(0)

    def __call__(self, X, train=None, seed=None):
        return self.forward(X, train=train, seed=seed)


class SMLP(_SetBaseline):
    """sigmoid(sum_i f(x_i)) with f a stack of perceptrons; no attention."""

    variant = "smlp"

    def _build_head(self, rng, dt):
        cfg = self.config
        dims = [cfg.encoder_widths[-1], *cfg.decoder_widths]
        self.decoder = [Linear(a, b, cfg.hidden_activation, rng=rng, dtype=dt)
                        for a, b in zip(dims, dims[1:])]
        self.readout = Linear(dims[-1], 1, "identity", rng=rng, dtype=dt)

    def pre_sigmoid(self, X, train=None):
        """The pooled sum before the final sigmoid, one value per set."""
        train = self.training if train is None else train
        X, _, single = self._arrange(X)
        x = self._encode(X, train)
        for layer in self.decoder:
            x = layer(x)
        s = sum_(self.readout(x), axis=(-2, -1))
        return reshape(s, ()) if single else s

    def forward(self, X, train=None, seed=None):
        return sigmoid(self.pre_sigmoid(X, train))


class PABOnly(_SetBaseline):
    """Per-element perceptron encoder followed by the QuAN pooling decoder."""

    variant = "pab-only"

    def _build_head(self, rng, dt):
        self.decoder = DecoderWeights(self.config.d_hidden, rng=rng, dtype=dt)

    def forward(self, X, train=None, seed=None, return_details=False):
        cfg = self.config
        train = self.training if train is None else train
        X, order, single = self._arrange(X)
        pooled, scores = pab_forward(self._encode(X, train), self.decoder, cfg.n_heads)
        y = decoder_head(pooled, self.decoder, cfg.residual_activation)
        if single:
            y = reshape(y, ())
        if return_details:
            from .model import ForwardDetails
            s = scores.data[0] if single else scores.data
            return y, ForwardDetails(order[0] if single else order, s, [])
        return y


def smlp_forward(X, weights: SMLP, train=False):
    return weights.forward(X, train=train)


def pab_only_forward(X, weights: PABOnly, train=False):
    return weights.forward(X, train=train)


def build_baseline(config: BaselineConfig, seed=0):
    return {"smlp": SMLP, "pab-only": PABOnly}[config.variant](config, seed)


def count_parameters(config) -> int:
    """Trainable parameter count of the model a config describes."""
    if isinstance(config, BaselineConfig):
        return build_baseline(config).n_parameters()
    return QuAN(config).n_parameters()


def budget_matched(config: BaselineConfig, target: int, tolerance: float = 0.10) -> BaselineConfig:
    """Rescale the wide hidden layers so the parameter count lands within ``tolerance`` of ``target``.

    Only layers wider than the encoder output are resized; the bottleneck
    width (``d_hidden`` for PAB-only) is kept.
    """
    base = config.to_dict()
    bottleneck = config.encoder_widths[-1]
    best, best_gap = None, None
    for width in range(1, 4 * max(config.encoder_widths + config.decoder_widths) + 1):
        trial = dict(base)
        trial["encoder_widths"] = [width if w > bottleneck else w for w in config.encoder_widths[:-1]] + [bottleneck]
        trial["decoder_widths"] = [width if w > bottleneck else w for w in config.decoder_widths]
        candidate = BaselineConfig(**trial)
        gap = abs(count_parameters(candidate) - target) / target
        if best_gap is None or gap < best_gap:
            best, best_gap = candidate, gap
    if best_gap > tolerance:
        raise ConfigError(f"no width brings the parameter count within {tolerance:.0%} of {target}")
    return best
