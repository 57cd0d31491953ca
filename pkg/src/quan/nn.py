"""Parameter containers shared by the QuAN model and the baselines."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, Tensor, activation, matmul, transpose


class Module:
    """Holds Parameters (as attributes or lists of Modules) and ndarray buffers."""

    def __init__(self):
        self.training = False
        self._buffers: list[str] = []

    def register_buffer(self, name, value):
        setattr(self, name, np.asarray(value))
        self._buffers.append(name)

    def children(self):
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    yield f"{key}.{i}", m

    def named_parameters(self, prefix="") -> dict[str, Parameter]:
        out = {}
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                out[prefix + key] = value
        for key, child in self.children():
            out.update(child.named_parameters(f"{prefix}{key}."))
        return out

    def named_buffers(self, prefix="") -> dict[str, np.ndarray]:
        out = {prefix + name: getattr(self, name) for name in self._buffers}
        for key, child in self.children():
            out.update(child.named_buffers(f"{prefix}{key}."))
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters() if p.trainable))

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"param/{k}": p.data for k, p in self.named_parameters().items()}
        state.update({f"buffer/{k}": b for k, b in self.named_buffers().items()})
        return state

    def load_state_dict(self, state):
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = {f"param/{k}" for k in params} | {f"buffer/{k}" for k in buffers}
        missing = expected - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)}")
        for k, p in params.items():
            value = np.asarray(state[f"param/{k}"])
            if value.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {value.shape} vs {p.data.shape}")
            p.data = value.astype(p.dtype, copy=True)
            p.zero_grad()
        for k, b in buffers.items():
            b[...] = state[f"buffer/{k}"]


def uniform_fan_in(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def new_weight(rng, shape, dtype, name=None):
    """Weight matrix [out, in] with the default uniform(+-1/sqrt(fan_in)) init."""
    fan_in = int(np.prod(shape[1:]))
    return Parameter(uniform_fan_in(rng, shape, fan_in, dtype), name=name)


def linear(x, weight, bias=None):
    """x @ weight.T (+ bias); weight is stored as [out, in]."""
    out = matmul(x, transpose(weight))
    return out if bias is None else out + bias


class Linear(Module):
    """Single-layer perceptron: activation(x W^T + b)."""

    def __init__(self, d_in, d_out, act="identity", *, rng, dtype=np.float64):
        super().__init__()
        self.weight = new_weight(rng, (d_out, d_in), dtype)
        self.bias = Parameter(np.zeros(d_out, dtype=dtype))
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        return activation(self.act)(linear(x, self.weight, self.bias))
