"""Self-describing weight checkpoints (``.npz`` with a JSON header entry)."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BaselineConfig, build_baseline
from .model import ModelConfig, QuAN

FORMAT = "quan-checkpoint/1"


def build_model(variant: str, config: dict, seed=0):
    if variant == "quan":
        return QuAN(ModelConfig(**config), seed)
    return build_baseline(BaselineConfig(**config), seed)


def dumps(model, **extra) -> bytes:
    meta = {
        "format": FORMAT,
        "version": __version__,
        "variant": model.variant,
        "precision": model.config.precision,
        "config": model.config.to_dict(),
        "n_parameters": model.n_parameters(),
        **extra,
    }
    arrays = dict(model.state_dict())
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def save(path, model, **extra):
    """Write weights, buffers, config echo and ``extra`` metadata to ``path``."""
    Path(path).write_bytes(dumps(model, **extra))


def read_meta(path) -> dict:
    with np.load(path) as z:
        return json.loads(z["__meta__"].tobytes())


def load(path):
    """Rebuild the model stored at ``path``; returns ``(model, meta)``."""
    with np.load(path) as z:
        meta = json.loads(z["__meta__"].tobytes())
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: not a checkpoint of format {FORMAT}")
        model = build_model(meta["variant"], meta["config"])
        model.load_state_dict({k: z[k] for k in z.files if k != "__meta__"})
    return model, meta
