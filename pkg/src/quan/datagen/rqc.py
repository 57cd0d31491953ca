"""State-vector simulation of random circuits on a rectangular qubit grid.

Qubit ``q = r * cols + c`` is the ``q``-th most significant bit of the
basis index, so reshaping the state to ``[2] * n`` gives axis ``q`` to qubit
``q``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

MAX_QUBITS = 24
PATTERN = "ABCDCDAB"

_I = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_W = (_X + _Y) / np.sqrt(2)
_V = (_X - _Y) / np.sqrt(2)


def sqrt_pauli(P):
    """Principal square root of an involutory Pauli-like matrix."""
    return 0.5 * (1 + 1j) * _I + 0.5 * (1 - 1j) * P


def _gate_set():
    gates, names = [], []
    for label, P in (("X", _X), ("Y", _Y), ("W", _W), ("V", _V)):
        g = sqrt_pauli(P)
        gates += [g, g.conj().T]
        names += [f"sqrt{label}", f"sqrt{label}^-1"]
    return np.stack(gates), names


SINGLE_QUBIT_GATES, SINGLE_QUBIT_NAMES = _gate_set()


def fsim(theta, phi):
    """fSim(theta, phi) on the basis |00>, |01>, |10>, |11>."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1, 0, 0, 0],
                     [0, c, -1j * s, 0],
                     [0, -1j * s, c, 0],
                     [0, 0, 0, np.exp(-1j * phi)]], dtype=complex)


def edge_layers(rows, cols) -> dict[str, list[tuple[int, int]]]:
    """Four matchings of the grid: A/B horizontal edges at even/odd column,
    C/D vertical edges at even/odd row."""
    layers = {k: [] for k in "ABCD"}
    for r in range(rows):
        for c in range(cols - 1):
            layers["A" if c % 2 == 0 else "B"].append((r * cols + c, r * cols + c + 1))
    for r in range(rows - 1):
        for c in range(cols):
            layers["C" if r % 2 == 0 else "D"].append((r * cols + c, (r + 1) * cols + c))
    return layers


@dataclass
class RqcParams:
    rows: int = 3
    cols: int = 4
    depth: int = 4
    circuit_seed: int = 0
    theta: float = 0.5 * np.pi
    phi: float = 0.1 * np.pi
    samples: int = 1000
    sample_seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid extents must be positive")
        if self.rows * self.cols > MAX_QUBITS:
            raise ValueError(f"{self.rows}x{self.cols} grid exceeds the {MAX_QUBITS}-qubit state-vector cap")
        if self.depth < 0 or self.depth % 2:
            raise ValueError(f"depth must be even and non-negative, got {self.depth}")

    @property
    def n_qubits(self) -> int:
        return self.rows * self.cols

    def to_dict(self):
        return asdict(self)


@dataclass
class Circuit:
    """``single[t, q]`` indexes the gate set; ``pairs[t]`` is the matching of cycle ``t``."""

    n_qubits: int
    single: np.ndarray
    pairs: list = field(default_factory=list)
    theta: float = 0.5 * np.pi
    phi: float = 0.1 * np.pi


def random_circuit(params: RqcParams) -> Circuit:
    """Each cycle: a random single-qubit gate per qubit (never the previous one), then fSim on one matching."""
    rng = np.random.default_rng(params.circuit_seed)
    n, k = params.n_qubits, len(SINGLE_QUBIT_GATES)
    single = np.empty((params.depth, n), dtype=np.int64)
    for t in range(params.depth):
        if t == 0:
            single[t] = rng.integers(0, k, size=n)
        else:
            # draw among the k-1 gates that differ from the previous one
            step = rng.integers(1, k, size=n)
            single[t] = (single[t - 1] + step) % k
    layers = edge_layers(params.rows, params.cols)
    pairs = [layers[PATTERN[t % len(PATTERN)]] for t in range(params.depth)]
    return Circuit(n, single, pairs, params.theta, params.phi)


def apply_single(state, gate, q, n):
    psi = state.reshape(2 ** q, 2, 2 ** (n - q - 1))
    return np.einsum("ab,ibj->iaj", gate, psi).reshape(-1)


def apply_two(state, gate, q1, q2, n):
    psi = np.moveaxis(state.reshape([2] * n), (q1, q2), (0, 1))
    shape = psi.shape
    psi = (gate @ psi.reshape(4, -1)).reshape(shape)
    return np.moveaxis(psi, (0, 1), (q1, q2)).reshape(-1)


def run_circuit(circuit: Circuit) -> np.ndarray:
    n = circuit.n_qubits
    state = np.zeros(2 ** n, dtype=complex)
    state[0] = 1.0
    two = fsim(circuit.theta, circuit.phi)
    for t in range(len(circuit.single)):
        for q in range(n):
            state = apply_single(state, SINGLE_QUBIT_GATES[circuit.single[t, q]], q, n)
        for a, b in circuit.pairs[t]:
            state = apply_two(state, two, a, b, n)
    return state


def rqc_simulate(params: RqcParams) -> np.ndarray:
    """Final state vector (2^n complex amplitudes) of the seeded random circuit."""
    return run_circuit(random_circuit(params))


def born_probabilities(state, tol=1e-8) -> np.ndarray:
    p = np.abs(np.asarray(state)) ** 2
    total = p.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"state is not normalized: sum |a|^2 = {total}")
    return p / total


def index_to_bits(idx, n) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    return ((idx[..., None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.uint8)


def bits_to_index(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    n = bits.shape[-1]
    return bits @ (1 << np.arange(n - 1, -1, -1))


def rqc_sample_bitstrings(state, samples, seed, grid=None) -> np.ndarray:
    """I.i.d. Born-rule samples as ``uint8 [samples, n]`` (or ``[samples, rows, cols]``)."""
    p = born_probabilities(state)
    n = int(np.log2(len(p)))
    rng = np.random.default_rng(seed)
    bits = index_to_bits(rng.choice(len(p), size=samples, p=p), n)
    return bits.reshape(samples, *grid) if grid is not None else bits


def rqc_snapshots(params: RqcParams):
    """Return ``(snapshots [samples, rows, cols], state)`` for one circuit instance."""
    state = rqc_simulate(params)
    snaps = rqc_sample_bitstrings(state, params.samples, params.sample_seed, (params.rows, params.cols))
    return snaps, state
