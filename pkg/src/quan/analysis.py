"""Evaluation procedures: XEB, confidence and accuracy, pooling-attention groups, sample complexity."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .datagen.rqc import bits_to_index, born_probabilities
from .datagen.toric import loop_values
from .tensor import no_grad

# ---------------------------------------------------------------------------
# cross-entropy benchmark


def xeb_exact(state) -> float:
    """``2^n sum_b p(b)^2 - 1`` for a normalized state vector."""
    p = born_probabilities(state)
    return float(len(p) * np.sum(p * p) - 1.0)


def xeb_estimate(bitstrings, ideal) -> tuple[float, float]:
    """Plug-in ``2^n mean(p(B_i)) - 1`` and the standard error of the mean.

    ``ideal`` is either the ideal probability vector (or state vector, if
    complex) or a callable mapping basis indices to probabilities.
    """
    bits = np.asarray(bitstrings)
    if len(bits) == 0:
        raise ValueError("xeb_estimate needs at least one sample")
    bits = bits.reshape(len(bits), -1)
    n = bits.shape[1]
    idx = bits_to_index(bits)
    if callable(ideal):
        p = np.asarray(ideal(idx), dtype=np.float64)
    else:
        ideal = np.asarray(ideal)
        probs = born_probabilities(ideal) if np.iscomplexobj(ideal) else ideal
        p = probs[idx]
    w = 2.0 ** n * p
    se = float(w.std(ddof=1) / np.sqrt(len(w))) if len(w) > 1 else 0.0
    return float(w.mean() - 1.0), se


@dataclass
class XebReport:
    exact: list
    estimate: list
    stderr: list
    mean_exact: float
    sem_exact: float
    mean_estimate: float
    sem_estimate: float


def xeb_report(states, samples) -> XebReport:
    """Per-instance exact and estimated XEB and their means over instances."""
    exact = [xeb_exact(s) for s in states]
    est = [xeb_estimate(b, s) for s, b in zip(states, samples)]
    e = np.array([v for v, _ in est])

    def sem(x):
        return float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0

    return XebReport(exact, e.tolist(), [s for _, s in est], float(np.mean(exact)), sem(exact),
                     float(e.mean()), sem(e))


# ---------------------------------------------------------------------------
# confidence and accuracy


def _scores(model, sets):
    if callable(getattr(model, "predict", None)):
        return np.asarray(model.predict(sets), dtype=np.float64)
    return np.asarray([float(np.asarray(model(s))) for s in sets], dtype=np.float64)


def average_confidence(model, sets) -> tuple[float, float]:
    """Mean evaluation-mode confidence over sets with its standard error."""
    if len(sets) == 0:
        raise ValueError("average_confidence needs at least one set")
    y = _scores(model, sets)
    se = float(y.std(ddof=1) / np.sqrt(len(y))) if len(y) > 1 else 0.0
    return float(y.mean()), se


def ensemble_confidence(models, sets) -> tuple[float, float]:
    """Mean of per-model average confidences and the standard error across models."""
    means = np.array([average_confidence(m, sets)[0] for m in models])
    se = float(means.std(ddof=1) / np.sqrt(len(means))) if len(means) > 1 else 0.0
    return float(means.mean()), se


def accuracy(model, sets, labels, threshold=0.5) -> float:
    y = _scores(model, sets)
    labels = np.asarray(labels)
    if len(y) == 0:
        return float("nan")
    return float(np.mean((y > threshold) == (labels == 1)))


def crossing(x, y, level=0.5) -> float:
    """First ``x`` where ``y`` crosses ``level`` (linear interpolation); NaN if never."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float) - level
    for i in range(len(x) - 1):
        if y[i] == 0:
            return float(x[i])
        if y[i] * y[i + 1] < 0:
            return float(x[i] + (x[i + 1] - x[i]) * y[i] / (y[i] - y[i + 1]))
    return float(x[-1]) if y[-1] == 0 else float("nan")


def crossover_width(x, y, upper=0.8, lower=0.2) -> float:
    """Distance in ``x`` between the ``upper`` and ``lower`` confidence crossings."""
    return abs(crossing(x, y, lower) - crossing(x, y, upper))


# ---------------------------------------------------------------------------
# pooling attention


@dataclass
class AttentionReport:
    scores: list
    high: list
    low: list
    perimeters: list
    high_mean: list
    high_sem: list
    low_mean: list
    low_sem: list

    def at_perimeter(self, perimeter):
        i = self.perimeters.index(perimeter)
        return self.high_mean[i], self.high_sem[i], self.low_mean[i], self.low_sem[i]


def group_size(n, quantile, minimum=10):
    size = max(int(np.ceil(quantile * n)), minimum)
    if 2 * size > n or n < 2 / quantile:
        raise ValueError(f"a set of {n} snapshots is too small for disjoint {quantile:.0%} groups of {size}")
    return size


def pooling_scores(model, X, head=None) -> np.ndarray:
    """Pooling scores per snapshot in input order, ``[n_sets, N]``.

    Scores are averaged over heads unless ``head`` picks one; either way
    each row sums to one.
    """
    X = np.asarray(X)
    single = X.ndim == 3
    if single:
        X = X[None]
    with no_grad():
        _, details = model.forward(X, train=False, return_details=True)
    if model.config.__class__.__name__ == "ModelConfig" and model.config.n_layers:
        n_out = details.scores.shape[-1]
        if n_out != X.shape[1]:
            raise ValueError("pooling scores do not map to individual snapshots when the encoder shrinks the set")
    s = details.scores.mean(axis=-2) if head is None else details.scores[..., head, :]
    out = np.empty_like(s)
    np.put_along_axis(out, details.order, s, axis=1)
    return out[0] if single else out


def _loop_stats(windows, sizes):
    means, sems = [], []
    for L in sizes:
        per_snapshot = loop_values(windows, L).mean(axis=1)
        means.append(float(per_snapshot.mean()))
        sems.append(float(per_snapshot.std(ddof=1) / np.sqrt(len(per_snapshot))) if len(per_snapshot) > 1 else 0.0)
    return means, sems


def pooling_attention_report(model, sets, quantile=0.15, minimum=10, sizes=None, head=None) -> AttentionReport:
    """Split each set into its top and bottom pooling-score groups and compare loop expectations.

    ``sets`` is one set ``[N, w, w]`` or many ``[S, N, w, w]``; groups are
    pooled over sets. Loop expectations use every ``L x L`` square inside a
    window, perimeter ``4L``; standard errors treat snapshots as units.
    """
    X = np.asarray(sets)
    if X.ndim == 3:
        X = X[None]
    n = X.shape[1]
    k = group_size(n, quantile, minimum)
    scores = pooling_scores(model, X, head)
    order = np.argsort(scores, axis=1, kind="stable")
    low_idx, high_idx = order[:, :k], order[:, -k:]
    take = lambda idx: np.take_along_axis(X, idx[:, :, None, None], axis=1).reshape(-1, *X.shape[-2:])
    sizes = list(range(1, min(X.shape[-2:]) + 1)) if sizes is None else list(sizes)
    hm, hs = _loop_stats(take(high_idx), sizes)
    lm, ls = _loop_stats(take(low_idx), sizes)
    return AttentionReport(scores.tolist(), high_idx.tolist(), low_idx.tolist(), [4 * L for L in sizes],
                           hm, hs, lm, ls)


# ---------------------------------------------------------------------------
# sample complexity


def one_sided_ttest(scores, mu0=0.5) -> tuple[float, float]:
    """Student t statistic and p-value for the alternative ``mean > mu0``.

    Zero spread gives ``(+inf, 0)`` above ``mu0`` and ``(-inf or nan, 1)`` otherwise.
    """
    x = np.asarray(scores, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("the t-test needs at least two scores")
    mean, sd = x.mean(), x.std(ddof=1)
    if sd == 0:
        if mean > mu0:
            return float("inf"), 0.0
        return (float("-inf") if mean < mu0 else float("nan")), 1.0
    res = stats.ttest_1samp(x, mu0, alternative="greater")
    return float(res.statistic), float(res.pvalue)


def minimal_set_count(scores, confidence=0.95, mu0=0.5):
    """Scan D downward from ``len(scores)``; return the smallest D before the first failure.

    ``scores`` are already in the nested order (the first D form the
    D-subset). Returns None when the test fails at the full count.
    """
    alpha = 1.0 - confidence
    d_star = None
    for D in range(len(scores), 1, -1):
        if one_sided_ttest(scores[:D], mu0)[1] < alpha:
            d_star = D
        else:
            break
    return d_star


@dataclass
class SampleComplexityResult:
    param: float
    d_star: list
    set_size: int
    n_uc: int
    defined: bool
    mean: float
    sem: float
    assignment_seed: int = 0
    extra: dict = field(default_factory=dict)


def ensemble_scores(models, sets) -> np.ndarray:
    """``[n_models, n_sets]`` evaluation-mode confidences."""
    return np.stack([_scores(m, sets) for m in models])


def sample_complexity_ttest(models, sets, confidence=0.95, repetitions=10, seed=0, n_uc=36,
                            param=float("nan"), score_table=None) -> SampleComplexityResult:
    """D* from nested random subsets, each set scored by a uniformly chosen ensemble member.

    The point is "defined" only if every repetition rejects at the full
    set count; reported values are ``D* * N * n_uc``.
    """
    sets = np.asarray(sets)
    if len(sets) < 2:
        raise ValueError("sample complexity needs at least two sets")
    table = ensemble_scores(models, sets) if score_table is None else np.asarray(score_table)
    rng = np.random.default_rng(seed)
    n_sets, N = len(sets), sets.shape[1]
    d_stars = []
    for _ in range(repetitions):
        order = rng.permutation(n_sets)
        pick = rng.integers(0, len(table), size=n_sets)
        d_stars.append(minimal_set_count(table[pick, order], confidence))
    defined = all(d is not None for d in d_stars)
    if defined:
        vals = np.array(d_stars, dtype=float) * N * n_uc
        mean = float(vals.mean())
        sem = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    else:
        mean = sem = float("nan")
    return SampleComplexityResult(param, d_stars, N, n_uc, defined, mean, sem, seed)


def spearman(x, y) -> float:
    return float(stats.spearmanr(x, y).statistic)


# ---------------------------------------------------------------------------
# report files


def _fmt(value):
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def report_name(stem, ext="csv", **params) -> str:
    """``stem_key1value1_key2value2.ext`` with keys in the given order."""
    tags = "_".join(f"{k}{_fmt(v)}" for k, v in params.items())
    return f"{stem}_{tags}.{ext}" if tags else f"{stem}.{ext}"


def write_csv(path, rows: list[dict]):
    rows = list(rows)
    fields = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def _jsonable(obj):
    """Plain JSON types; non-finite floats become null so the file stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if obj is None or isinstance(obj, (str, int, bool)):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, payload):
    if hasattr(payload, "__dataclass_fields__"):
        payload = asdict(payload)
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False) + "\n")
