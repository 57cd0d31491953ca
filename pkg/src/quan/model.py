"""QuAN: convolution (or perceptron) front end, MSSAB encoder, PAB decoder.

Shapes follow the convention ``[..., set, feature]``; any leading axes are
batch axes, so a batch of sets is processed in a single pass.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import Linear, Module, linear, new_weight
from .tensor import (
    Parameter,
    Tensor,
    activation,
    batch_norm,
    layer_norm,
    matmul,
    no_grad,
    reshape,
    sigmoid,
    softmax_rows,
    take,
    transpose,
)

DTYPES = {"f64": np.float64, "float64": np.float64, "f32": np.float32, "float32": np.float32}


class ConfigError(ValueError):
    """Inconsistent model hyperparameters."""


@dataclass
class ModelConfig:
    grid: tuple[int, int]
    set_size: int
    d_hidden: int = 16
    n_heads: int = 4
    n_minisets: int = 1
    n_layers: int = 1
    residual_activation: str = "relu"
    frontend: str = "conv"
    n_channels: int = 8
    kernel: int = 2
    mlp_widths: tuple[int, ...] = (48, 16)
    precision: str = "f64"

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        self.mlp_widths = tuple(int(w) for w in self.mlp_widths)
        self.validate()

    def validate(self):
        n_r, n_c = self.grid
        if n_r < 1 or n_c < 1 or self.set_size < 1:
            raise ConfigError("grid extents and set_size must be positive")
        if self.d_hidden % self.n_heads:
            raise ConfigError(f"d_hidden={self.d_hidden} is not divisible by n_heads={self.n_heads}")
        if self.n_minisets < 1 or self.n_layers < 0:
            raise ConfigError("n_minisets must be >= 1 and n_layers >= 0")
        if self.set_size % self.n_minisets ** self.n_layers:
            raise ConfigError(
                f"set_size={self.set_size} is not divisible by n_minisets**n_layers="
                f"{self.n_minisets ** self.n_layers}")
        if self.frontend == "conv" and self.kernel > min(n_r, n_c):
            raise ConfigError(f"kernel={self.kernel} does not fit a {n_r}x{n_c} grid")
        if self.frontend not in ("conv", "mlp"):
            raise ConfigError(f"unknown frontend {self.frontend!r}")
        activation(self.residual_activation)
        if self.precision not in DTYPES:
            raise ConfigError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return DTYPES[self.precision]

    @property
    def d_x(self) -> int:
        """Width of the front-end output fed to the first attention layer."""
        n_r, n_c = self.grid
        if self.frontend == "conv":
            return self.n_channels * (n_r - self.kernel + 1) * (n_c - self.kernel + 1)
        return self.mlp_widths[-1] if self.mlp_widths else n_r * n_c

    def to_dict(self):
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["mlp_widths"] = list(self.mlp_widths)
        return d


def conv_output_width(grid, kernel, n_channels) -> int:
    n_r, n_c = grid
    if kernel > min(n_r, n_c):
        raise ConfigError(f"kernel={kernel} does not fit a {n_r}x{n_c} grid")
    return n_channels * (n_r - kernel + 1) * (n_c - kernel + 1)


def moment_order(n_minisets: int, n_layers: int) -> int:
    """Highest inter-snapshot moment order reachable: (2 N_s^2)^L."""
    if n_minisets < 1 or n_layers < 0:
        raise ValueError("need n_minisets >= 1 and n_layers >= 0")
    return (2 * n_minisets ** 2) ** n_layers


def layers_required(theta: int, n_minisets: int) -> int:
    """Smallest L with (2 N_s^2)^L >= theta."""
    if theta < 1 or n_minisets < 1:
        raise ValueError("need theta >= 1 and n_minisets >= 1")
    base = 2 * n_minisets ** 2
    layers, reach = 0, 1
    while reach < theta:
        reach *= base
        layers += 1
    return layers


# ---------------------------------------------------------------------------
# weights


class ConvFrontEnd(Module):
    """2-D convolution (stride 1, no padding) followed by per-channel batch norm.

    The convolution has no additive bias: batch norm subtracts the channel
    mean, so a bias would cancel exactly and carry a zero gradient.
    """

    def __init__(self, n_channels, kernel, *, rng, dtype=np.float64):
        super().__init__()
        self.filters = new_weight(rng, (n_channels, kernel, kernel), dtype)
        self.bn_gain = Parameter(np.ones(n_channels, dtype=dtype))
        self.bn_bias = Parameter(np.zeros(n_channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(n_channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(n_channels, dtype=dtype))
        self.kernel = kernel


class MLPFrontEnd(Module):
    def __init__(self, d_in, widths, *, rng, dtype=np.float64):
        super().__init__()
        dims = [d_in, *widths]
        self.layers = [Linear(a, b, "sigmoid", rng=rng, dtype=dtype) for a, b in zip(dims, dims[1:])]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class AttentionWeights(Module):
    """Q, K, V [d_hidden, d_in], residual O [d_hidden, d_hidden] and two layer norms."""

    def __init__(self, d_in, d_hidden, *, rng, dtype=np.float64):
        super().__init__()
        self.Q = new_weight(rng, (d_hidden, d_in), dtype)
        self.K = new_weight(rng, (d_hidden, d_in), dtype)
        self.V = new_weight(rng, (d_hidden, d_in), dtype)
        self.O = new_weight(rng, (d_hidden, d_hidden), dtype)
        self.ln1_gain = Parameter(np.ones(d_hidden, dtype=dtype))
        self.ln1_bias = Parameter(np.zeros(d_hidden, dtype=dtype))
        self.ln2_gain = Parameter(np.ones(d_hidden, dtype=dtype))
        self.ln2_bias = Parameter(np.zeros(d_hidden, dtype=dtype))


class MSSABWeights(Module):
    """One MSSAB layer: the parallel SAB and (for N_s > 1) the shared MAB."""

    def __init__(self, d_in, d_hidden, n_minisets, *, rng, dtype=np.float64):
        super().__init__()
        self.sab = AttentionWeights(d_in, d_hidden, rng=rng, dtype=dtype)
        self.mab = AttentionWeights(d_hidden, d_hidden, rng=rng, dtype=dtype) if n_minisets > 1 else None


class DecoderWeights(Module):
    """Seed S [1, d], K'' and V'' [d, d], residual O, layer norms, readout W [1, d] and b."""

    def __init__(self, d_hidden, *, rng, dtype=np.float64):
        super().__init__()
        self.S = new_weight(rng, (1, d_hidden), dtype)
        self.K = new_weight(rng, (d_hidden, d_hidden), dtype)
        self.V = new_weight(rng, (d_hidden, d_hidden), dtype)
        self.O = new_weight(rng, (d_hidden, d_hidden), dtype)
        self.ln1_gain = Parameter(np.ones(d_hidden, dtype=dtype))
        self.ln1_bias = Parameter(np.zeros(d_hidden, dtype=dtype))
        self.ln2_gain = Parameter(np.ones(d_hidden, dtype=dtype))
        self.ln2_bias = Parameter(np.zeros(d_hidden, dtype=dtype))
        self.W = new_weight(rng, (1, d_hidden), dtype)
        self.b = Parameter(np.zeros(1, dtype=dtype))


# ---------------------------------------------------------------------------
# mini-set plans


@dataclass(frozen=True)
class MiniSetPlan:
    """Row shuffle, contiguous split into ``n_minisets`` parts, and RedAB order ``sigma``."""

    permutation: np.ndarray
    n_minisets: int
    sigma: np.ndarray
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        n = len(self.permutation)
        if n % self.n_minisets:
            raise ConfigError(f"set of {n} rows cannot be split into {self.n_minisets} mini-sets")
        if not np.array_equal(np.sort(self.permutation), np.arange(n)):
            raise ValueError("permutation is not a bijection on the set indices")
        if not np.array_equal(np.sort(self.sigma), np.arange(self.n_minisets)):
            raise ValueError("sigma is not a bijection on the mini-set labels")

    @property
    def miniset_size(self) -> int:
        return len(self.permutation) // self.n_minisets

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.permutation, np.arange(len(self.permutation))))

    def partition(self) -> list[np.ndarray]:
        return np.split(self.permutation, self.n_minisets)

    @classmethod
    def identity(cls, n, n_minisets):
        return cls(np.arange(n), n_minisets, np.arange(n_minisets))

    @classmethod
    def draw(cls, n, n_minisets, rng):
        return cls(rng.permutation(n), n_minisets, rng.permutation(n_minisets))

    @classmethod
    def from_seed(cls, n, n_minisets, seed):
        rng = np.random.default_rng(seed)
        return cls(rng.permutation(n), n_minisets, rng.permutation(n_minisets), seed)


# ---------------------------------------------------------------------------
# blocks


def _split_heads(t, n_heads):
    *lead, n, d = t.shape
    k = len(lead)
    t = reshape(t, (*lead, n, n_heads, d // n_heads))
    return transpose(t, tuple(range(k)) + (k + 1, k, k + 2))


def _merge_heads(t):
    *lead, h, n, dk = t.shape
    k = len(lead)
    t = transpose(t, tuple(range(k)) + (k + 1, k, k + 2))
    return reshape(t, (*lead, n, h * dk))


def attend(q, k, v, n_heads):
    """Multi-head ``q + softmax(q k^T / sqrt(d_head)) v``; returns (output, scores).

    ``q``, ``k`` and ``v`` are already projected. Scores have shape
    ``[..., n_heads, n_query, n_key]``.
    """
    d_head = q.shape[-1] // n_heads
    qh, kh, vh = _split_heads(q, n_heads), _split_heads(k, n_heads), _split_heads(v, n_heads)
    # scaling the queries rather than the n x n logits keeps the big array untouched
    scores = softmax_rows(matmul(qh * (1.0 / math.sqrt(d_head)), transpose(kh)))
    return q + _merge_heads(matmul(scores, vh)), scores


def _post_process(h, w: AttentionWeights, act):
    h1 = layer_norm(h, w.ln1_gain, w.ln1_bias)
    return sigmoid(layer_norm(h1 + activation(act)(linear(h1, w.O)), w.ln2_gain, w.ln2_bias))


def mab_forward(query_set, key_set, w: AttentionWeights, n_heads, act="relu", return_scores=False):
    """Cross attention: queries from ``query_set``, keys and values from ``key_set``."""
    if query_set.shape[-1] != w.Q.shape[1] or key_set.shape[-1] != w.K.shape[1]:
        raise ValueError(
            f"width mismatch: query {query_set.shape[-1]}, key {key_set.shape[-1]}, "
            f"weights expect {w.Q.shape[1]}")
    if w.Q.shape[0] % n_heads:
        raise ConfigError(f"d_hidden={w.Q.shape[0]} is not divisible by n_heads={n_heads}")
    h, scores = attend(linear(query_set, w.Q), linear(key_set, w.K), linear(key_set, w.V), n_heads)
    out = _post_process(h, w, act)
    return (out, scores) if return_scores else out


def sab_forward(x, w: AttentionWeights, n_heads, act="relu", return_scores=False):
    """Self attention of a set with itself."""
    return mab_forward(x, x, w, n_heads, act, return_scores)


def mssab_forward(x, plan: MiniSetPlan, w: MSSABWeights, n_heads, act="relu"):
    """Parallel SAB on mini-sets, RecAB over cyclic successors, RedAB fold in ``sigma`` order.

    ``x``: ``[..., N, d]``; returns ``[..., N / N_s, d_hidden]``.
    """
    n, n_s = x.shape[-2], plan.n_minisets
    if n != len(plan.permutation):
        raise ValueError(f"plan covers {len(plan.permutation)} rows but the set has {n}")
    if not plan.is_identity:
        x = take(x, plan.permutation, axis=-2)
    if n_s == 1:
        return sab_forward(x, w.sab, n_heads, act)
    lead = x.shape[:-2]
    y = sab_forward(reshape(x, (*lead, n_s, n // n_s, x.shape[-1])), w.sab, n_heads, act)
    labels = np.arange(n_s)
    h = y
    for t in range(n_s - 1):
        h = mab_forward(take(y, (labels + t + 1) % n_s, axis=-3), h, w.mab, n_heads, act)
    y_rec = h
    h = take(y_rec, plan.sigma[:1], axis=-3)
    for t in range(1, n_s):
        h = mab_forward(take(y_rec, plan.sigma[t:t + 1], axis=-3), h, w.mab, n_heads, act)
    return reshape(h, (*lead, n // n_s, h.shape[-1]))


def pab_forward(z, w: DecoderWeights, n_heads):
    """Pooling attention with the seed S as query.

    Returns ``pooled [..., d]`` and scores ``[..., n_heads, n]``; each head's
    scores sum to one.
    """
    h, scores = attend(w.S, linear(z, w.K), linear(z, w.V), n_heads)
    lead = z.shape[:-2]
    pooled = reshape(h, (*lead, h.shape[-1]))
    scores = reshape(scores, (*lead, n_heads, z.shape[-2]))
    return pooled, scores


def decoder_head(pooled, w: DecoderWeights, act="relu"):
    """sigmoid(W . LayerNorm(p' + act(O p')) + b) with p' = LayerNorm(p)."""
    lead = pooled.shape[:-1]
    p = reshape(pooled, (-1, pooled.shape[-1]))
    p1 = layer_norm(p, w.ln1_gain, w.ln1_bias)
    r = layer_norm(p1 + activation(act)(linear(p1, w.O)), w.ln2_gain, w.ln2_bias)
    return reshape(sigmoid(linear(r, w.W, w.b)), lead)


def conv_forward(X, w: ConvFrontEnd, train: bool):
    """Binary snapshots ``[..., N, N_r, N_c]`` to features ``[..., N, d_x]``.

    Output is flattened channel-major, then row, then column.
    """
    X = np.asarray(X)
    k = w.kernel
    n_r, n_c = X.shape[-2:]
    if k > min(n_r, n_c):
        raise ConfigError(f"kernel={k} does not fit a {n_r}x{n_c} grid")
    patches = np.lib.stride_tricks.sliding_window_view(X, (k, k), axis=(-2, -1))
    out_r, out_c = n_r - k + 1, n_c - k + 1
    patches = patches.reshape(*X.shape[:-2], out_r * out_c, k * k).astype(w.filters.dtype)
    filt = reshape(w.filters, (w.filters.shape[0], k * k))
    maps = linear(Tensor(patches), filt)
    maps = batch_norm(maps, w.bn_gain, w.bn_bias, w.running_mean, w.running_var, training=train)
    lead = X.shape[:-2]
    m = len(lead)
    maps = transpose(maps, tuple(range(m)) + (m + 1, m))
    return reshape(maps, (*lead, -1))


# ---------------------------------------------------------------------------
# set ordering


def canonical_miniset_order(X, permutations, n_minisets):
    """Row order for each set: apply its permutation, then sort inside every mini-set.

    Inside a mini-set snapshots are sorted lexicographically by content. A
    single layer is equivariant within a mini-set, so this only fixes the
    summation order there; with more layers the row order of a layer's
    output decides the next partition, and the sort makes that choice a
    function of the set rather than of its listing. Either way permutations
    that keep mini-set membership give bit-identical outputs.

    X: ``[B, N, ...]``; permutations: ``[B, N]``. Returns ``[B, N]`` indices.
    """
    B, N = X.shape[:2]
    flat = np.ascontiguousarray(X.reshape(B * N, -1))
    _, codes = np.unique(flat, axis=0, return_inverse=True)
    codes = codes.reshape(B, N)
    arranged = np.take_along_axis(codes, permutations, axis=1).reshape(B, n_minisets, -1)
    inner = np.argsort(arranged, axis=-1, kind="stable")
    perm = permutations.reshape(B, n_minisets, -1)
    return np.take_along_axis(perm, inner, axis=-1).reshape(B, N)


def _as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# full model


@dataclass
class ForwardDetails:
    """Side outputs of one forward pass (for analysis)."""

    order: np.ndarray
    scores: np.ndarray
    plans: list


class QuAN(Module):
    variant = "quan"

    def __init__(self, config: ModelConfig, seed=0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        dt = config.dtype
        n_r, n_c = config.grid
        if config.frontend == "conv":
            self.frontend = ConvFrontEnd(config.n_channels, config.kernel, rng=rng, dtype=dt)
        else:
            self.frontend = MLPFrontEnd(n_r * n_c, config.mlp_widths, rng=rng, dtype=dt)
        widths = [config.d_x] + [config.d_hidden] * config.n_layers
        self.layers = [MSSABWeights(widths[i], config.d_hidden, config.n_minisets, rng=rng, dtype=dt)
                       for i in range(config.n_layers)]
        self.decoder = DecoderWeights(config.d_hidden if config.n_layers else config.d_x, rng=rng, dtype=dt)
        self._plan_rng = np.random.default_rng(None if seed is None else seed + 1)

    def encode_frontend(self, X, train):
        if self.config.frontend == "conv":
            return conv_forward(X, self.frontend, train)
        flat = X.reshape(*X.shape[:-2], -1).astype(self.config.dtype)
        return self.frontend(Tensor(flat))

    def forward(self, X, train=None, seed=None, return_details=False):
        """Confidence ``y`` in (0, 1) for one set ``[N, N_r, N_c]`` or a batch ``[B, N, N_r, N_c]``.

        In training mode the mini-set shuffle and ``sigma`` are drawn from
        ``seed`` (an int or Generator; defaults to the model's own stream).
        In evaluation mode the plan is the identity with ``sigma`` = identity.
        """
        cfg = self.config
        train = self.training if train is None else train
        X = np.asarray(X)
        single = X.ndim == 3
        if single:
            X = X[None]
        B, N = X.shape[:2]
        if N != cfg.set_size:
            raise ConfigError(f"set has {N} snapshots but the model expects set_size={cfg.set_size}")
        if tuple(X.shape[-2:]) != cfg.grid:
            raise ConfigError(f"snapshot grid {X.shape[-2:]} does not match config grid {cfg.grid}")
        rng = (self._plan_rng if seed is None else _as_generator(seed)) if train else None
        n_s = cfg.n_minisets if cfg.n_layers else 1

        if train and n_s > 1:
            perms = np.stack([rng.permutation(N) for _ in range(B)])
        else:
            perms = np.broadcast_to(np.arange(N), (B, N))
        order = canonical_miniset_order(X, perms, n_s)
        X = np.take_along_axis(X, order[:, :, None, None], axis=1)

        x = self.encode_frontend(X, train)
        plans = []
        for i, w in enumerate(self.layers):
            n = x.shape[-2]
            if i == 0:
                sigma = rng.permutation(n_s) if train else np.arange(n_s)
                plan = MiniSetPlan(np.arange(n), n_s, sigma)
            else:
                plan = MiniSetPlan.draw(n, n_s, rng) if train else MiniSetPlan.identity(n, n_s)
            plans.append(plan)
            x = mssab_forward(x, plan, w, cfg.n_heads, cfg.residual_activation)
        pooled, scores = pab_forward(x, self.decoder, cfg.n_heads)
        y = decoder_head(pooled, self.decoder, cfg.residual_activation)
        if single:
            y = reshape(y, ())
        if return_details:
            s = scores.data[0] if single else scores.data
            o = order[0] if single else order
            return y, ForwardDetails(o, s, plans)
        return y

    __call__ = forward

    def predict(self, sets, batch_size=64):
        """Evaluation-mode confidences for ``[M, N, N_r, N_c]`` as a float array."""
        sets = np.asarray(sets)
        with no_grad():
            out = [self.forward(sets[i:i + batch_size], train=False).data
                   for i in range(0, len(sets), batch_size)]
        return np.concatenate(out).astype(np.float64) if out else np.zeros(0)


def quan_forward(X, config: ModelConfig, weights: QuAN, seed=None, train=False):
    """Functional spelling of :meth:`QuAN.forward`."""
    if weights.config != config:
        raise ConfigError("weights were built for a different configuration")
    return weights.forward(X, train=train, seed=seed)
