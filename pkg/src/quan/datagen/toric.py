"""Toric-code Z-basis snapshots on an L_v x L_h torus, bit-flip noise and plaquette windows.

Edge layout (``[..., 2, L_v, L_h]``): channel 0 holds the horizontal edge
from vertex (r, c) to (r, c+1), channel 1 the vertical edge from (r, c) to
(r+1, c), all indices periodic. Plaquette (r, c) is the face whose top-left
vertex is (r, c); its boundary is h[r, c], h[r+1, c], v[r, c], v[r, c+1].
Bits store Z eigenvalues as 0 -> +1 and 1 -> -1.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class ToricCodeParams:
    L_v: int = 12
    L_h: int = 12
    p_flip: float = 0.0
    window: tuple[int, int] = (6, 6)
    samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.window = tuple(int(w) for w in self.window)
        if self.L_v < 1 or self.L_h < 1:
            raise ValueError("torus extents must be positive")
        check_p(self.p_flip)
        if self.L_v % self.window[0] or self.L_h % self.window[1]:
            raise ValueError(f"window {self.window} does not tile the {self.L_v}x{self.L_h} plaquette grid")

    @property
    def n_edges(self) -> int:
        return 2 * self.L_v * self.L_h

    def to_dict(self):
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def check_p(p):
    if not 0.0 <= p <= 0.5:
        raise ValueError(f"p_flip={p} lies outside [0, 0.5]")


def sample_toric_ground(params: ToricCodeParams, rng=None) -> np.ndarray:
    """Uniform samples of the closed-loop group: flip each vertex star with probability 1/2.

    Returns ``uint8 [samples, 2, L_v, L_h]``; every plaquette parity is even.
    """
    rng = np.random.default_rng(params.seed if rng is None else rng)
    stars = rng.integers(0, 2, size=(params.samples, params.L_v, params.L_h), dtype=np.uint8)
    h = stars ^ np.roll(stars, -1, axis=2)
    v = stars ^ np.roll(stars, -1, axis=1)
    return np.stack([h, v], axis=1)


def apply_bitflip_channel(snapshots, p_flip, seed) -> np.ndarray:
    """Flip every bit independently with probability ``p_flip``."""
    check_p(p_flip)
    snapshots = np.asarray(snapshots, dtype=np.uint8)
    rng = np.random.default_rng(seed)
    flips = rng.random(snapshots.shape) < p_flip
    return snapshots ^ flips.astype(np.uint8)


def plaquette_transform(edges) -> np.ndarray:
    """Edge bits ``[..., 2, L_v, L_h]`` to plaquette parities ``[..., L_v, L_h]``."""
    edges = np.asarray(edges, dtype=np.uint8)
    if edges.ndim < 3 or edges.shape[-3] != 2:
        raise ValueError(f"expected edge snapshots of shape [..., 2, L_v, L_h], got {edges.shape}")
    h, v = edges[..., 0, :, :], edges[..., 1, :, :]
    return h ^ np.roll(h, -1, axis=-2) ^ v ^ np.roll(v, -1, axis=-1)


def window_slices(grid, w_r, w_c) -> np.ndarray:
    """Non-overlapping ``w_r x w_c`` tiles of ``[..., R, C]`` grids, row-major per grid.

    Returns ``[n_grids * n_windows, w_r, w_c]``.
    """
    grid = np.asarray(grid)
    R, C = grid.shape[-2:]
    if R % w_r or C % w_c:
        raise ValueError(f"{R}x{C} grid is not divisible into {w_r}x{w_c} windows")
    lead = grid.shape[:-2]
    g = grid.reshape(*lead, R // w_r, w_r, C // w_c, w_c)
    g = np.moveaxis(g, -3, -2)
    return g.reshape(-1, w_r, w_c)


def assemble_windows(windows, R, C) -> np.ndarray:
    """Inverse of :func:`window_slices` for grids of size ``R x C``."""
    windows = np.asarray(windows)
    w_r, w_c = windows.shape[-2:]
    g = windows.reshape(-1, R // w_r, C // w_c, w_r, w_c)
    return np.moveaxis(g, -2, -3).reshape(-1, R, C)


def loop_values(windows, size) -> np.ndarray:
    """Z product around every ``size x size`` square loop inside each window.

    The loop operator equals the product of the plaquettes it encloses.
    Returns ``+-1`` values of shape ``[n_windows, n_placements]``.
    """
    windows = np.asarray(windows, dtype=np.int64)
    n, R, C = windows.shape
    if not 1 <= size <= min(R, C):
        raise ValueError(f"loop size {size} does not fit a {R}x{C} window")
    s = np.zeros((n, R + 1, C + 1), dtype=np.int64)
    s[:, 1:, 1:] = windows.cumsum(1).cumsum(2)
    block = s[:, size:, size:] - s[:, :-size, size:] - s[:, size:, :-size] + s[:, :-size, :-size]
    return (1 - 2 * (block & 1)).reshape(n, -1)


def loop_expectation(windows, size):
    """Mean and standard error of the loop operator of perimeter ``4*size``.

    The standard error treats windows as the independent units.
    """
    vals = loop_values(windows, size).mean(axis=1)
    se = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0
    return float(vals.mean()), float(se)


def fit_loop_tension(perimeters, expectations) -> float:
    """Least-squares slope (through the origin) of ``-ln <Z>`` against perimeter."""
    x = np.asarray(perimeters, dtype=np.float64)
    y = -np.log(np.asarray(expectations, dtype=np.float64))
    return float(x @ y / (x @ x))


def loop_tension_exact(p_flip) -> float:
    """Decay rate of <Z_loop> per perimeter edge under the bit-flip channel."""
    return float(-np.log1p(-2.0 * p_flip))


def toric_windows(params: ToricCodeParams) -> np.ndarray:
    """Noisy plaquette windows ``[samples * n_windows, w_r, w_c]`` for one parameter point."""
    seq = np.random.SeedSequence(params.seed)
    ground_seed, noise_seed = seq.spawn(2)
    edges = sample_toric_ground(params, np.random.default_rng(ground_seed))
    edges = apply_bitflip_channel(edges, params.p_flip, np.random.default_rng(noise_seed))
    return window_slices(plaquette_transform(edges), *params.window)
