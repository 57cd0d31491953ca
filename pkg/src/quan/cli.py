"""Command-line entry points: ``generate``, ``train``, ``eval``, ``report``.

Every command reads one YAML (or JSON) config, lets flags override it and
writes ``manifest.json`` next to its outputs. A manifest can be passed back
as ``--config`` to repeat the run.
"""

from __future__ import annotations

import argparse
import copy
import csv
import glob
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__, analysis, checkpoint
from .baselines import BaselineConfig, build_baseline
from .datagen import io as snapio
from .datagen.parity import parity_task_sample
from .datagen.rqc import RqcParams, rqc_simulate, rqc_snapshots
from .datagen.sets import Dataset, StateSamples, partition_into_sets
from .datagen.toric import ToricCodeParams, toric_windows
from .model import ConfigError, ModelConfig, QuAN
from .training import TrainConfig, fit, validation_seed

log = logging.getLogger("quan")

MANIFEST_KEY = "manifest_version"


class UserError(Exception):
    """Bad config, missing input or mismatched files (exit code 2)."""


# ---------------------------------------------------------------------------
# config handling


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise UserError(f"config file not found: {p}")
    try:
        cfg = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise UserError(f"cannot parse {p}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UserError(f"{p}: top level must be a mapping")
    if MANIFEST_KEY in cfg:
        cfg = cfg["config"]
    return cfg


def resolve(args) -> dict:
    cfg = load_config(args.config) if args.config else {}
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if args.threads is not None:
        cfg["threads"] = args.threads
    if args.precision is not None:
        cfg.setdefault("model", {})["precision"] = args.precision
    cfg.setdefault("seed", 0)
    cfg.setdefault("out", "out")
    cfg.setdefault("threads", 1)
    return cfg


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command, cfg, outputs):
    manifest = {
        MANIFEST_KEY: 1,
        "command": command,
        "version": __version__,
        "threads": cfg["threads"],
        "config": cfg,
        "outputs": {Path(o).name: _sha256(o) for o in outputs},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _block(cfg, name):
    block = cfg.get(name)
    if not isinstance(block, dict):
        raise UserError(f"config needs a '{name}' block")
    return block


def _build(factory, kwargs, what):
    try:
        return factory(**kwargs)
    except TypeError as exc:
        raise UserError(f"invalid {what} block: {exc}") from None
    except (ValueError, ConfigError) as exc:
        raise UserError(f"invalid {what} block: {exc}") from None


def _seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# generate


def cmd_generate(cfg) -> list[Path]:
    gen = _block(cfg, "generate")
    kind = gen.get("kind")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if kind == "toric":
        ps = gen.get("p_flip", [0.0])
        ps = ps if isinstance(ps, list) else [ps]
        torus = gen.get("torus", [12, 12])
        for p, s in zip(ps, _seeds(cfg["seed"], len(ps))):
            params = _build(ToricCodeParams, dict(L_v=torus[0], L_h=torus[1], p_flip=p,
                                                  window=gen.get("window", [6, 6]),
                                                  samples=gen.get("samples", 1000), seed=s), "toric")
            path = out / analysis.report_name("toric", "qsnp", gx=0, pflip=p)
            snapio.write_snapshots(path, toric_windows(params),
                                   {"generator": "toric", "params": params.to_dict(), "gx": 0.0, "pflip": p})
            files.append(path)
    elif kind == "rqc":
        depths = gen.get("depth", [4])
        depths = depths if isinstance(depths, list) else [depths]
        instances = int(gen.get("instances", 1))
        seeds = iter(_seeds(cfg["seed"], 2 * len(depths) * instances))
        for d in depths:
            for c in range(instances):
                params = _build(RqcParams, dict(rows=gen.get("rows", 3), cols=gen.get("cols", 4), depth=d,
                                                circuit_seed=next(seeds), sample_seed=next(seeds),
                                                theta=float(gen.get("theta", 0.5 * np.pi)),
                                                phi=float(gen.get("phi", 0.1 * np.pi)),
                                                samples=gen.get("samples", 1000)), "rqc")
                snaps, _ = rqc_snapshots(params)
                path = out / analysis.report_name("rqc", "qsnp", depth=d, circuit=c)
                snapio.write_snapshots(path, snaps, {"generator": "rqc", "params": params.to_dict(),
                                                     "depth": d, "circuit": c})
                files.append(path)
    elif kind == "parity":
        n, k = int(gen.get("n_bits", 6)), int(gen.get("k", 3))
        grid = gen.get("grid", [1, n])
        if grid[0] * grid[1] != n:
            raise UserError(f"grid {grid} does not hold n_bits={n}")
        classes = gen.get("classes", ["A", "B"])
        for cls, s in zip(classes, _seeds(cfg["seed"], len(classes))):
            try:
                bits = parity_task_sample(n, k, cls, int(gen.get("samples", 1000)), s)
            except ValueError as exc:
                raise UserError(f"invalid parity block: {exc}") from None
            path = out / analysis.report_name("parity", "qsnp", n=n, k=k, cls=cls)
            snapio.write_snapshots(path, bits.reshape(-1, *grid),
                                   {"generator": "parity", "n_bits": n, "k": k, "class": cls, "seed": s})
            files.append(path)
    else:
        raise UserError(f"generate.kind must be toric, rqc or parity, got {kind!r}")
    return files


# ---------------------------------------------------------------------------
# train


def _expand(entries, what):
    """Entries are ``{path: glob, label: int}``; returns ``[(path, label, params)]``."""
    if not isinstance(entries, list) or not entries:
        raise UserError(f"data.{what} must be a non-empty list")
    found = []
    for e in entries:
        pattern = str(e["path"])
        paths = sorted(glob.glob(pattern))
        if not paths:
            raise UserError(f"no dataset file matches {pattern}")
        found += [(Path(p), e.get("label"), e.get("params", {})) for p in paths]
    return found


def _read(path):
    try:
        return snapio.read_snapshots(path)
    except (OSError, ValueError) as exc:
        raise UserError(f"cannot read snapshots from {path}: {exc}") from None


def load_dataset(data_cfg) -> Dataset:
    states = []
    for split in ("train", "validation", "test"):
        if split not in data_cfg:
            continue
        for path, label, params in _expand(data_cfg[split], split):
            snaps, meta = _read(path)
            states.append(StateSamples(snaps, label, split, {"path": str(path), **meta, **params,
                                                             "instance": str(path)}))
    if not states:
        raise UserError("data block lists no files")
    try:
        return Dataset(states, int(data_cfg.get("set_size", 64)))
    except ValueError as exc:
        raise UserError(str(exc)) from None


def build_model(model_cfg, seed):
    m = dict(model_cfg)
    variant = m.pop("variant", "quan")
    if variant == "quan":
        return QuAN(_build(ModelConfig, m, "model"), seed)
    return build_baseline(_build(BaselineConfig, {"variant": variant, **m}, "model"), seed)


def cmd_train(cfg) -> list[Path]:
    data_cfg = _block(cfg, "data")
    model_cfg = dict(_block(cfg, "model"))
    dataset = load_dataset(data_cfg)
    model_cfg.setdefault("grid", list(dataset.grid))
    model_cfg.setdefault("set_size", dataset.set_size)
    if tuple(model_cfg["grid"]) != dataset.grid:
        raise UserError(f"grid: model expects {model_cfg['grid']} but the data has {list(dataset.grid)}")
    if int(model_cfg["set_size"]) != dataset.set_size:
        raise UserError(f"set_size: model expects {model_cfg['set_size']} but data.set_size is {dataset.set_size}")
    model = build_model(model_cfg, cfg["seed"])
    tcfg = _build(TrainConfig, {**cfg.get("train", {}), "seed": cfg["seed"]}, "train")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = fit(dataset, model, tcfg, metrics_path=out / "metrics.csv",
                     on_epoch=lambda r: log.info("epoch %d loss %.4f val_acc %.4f", r.epoch, r.train_loss,
                                                 r.val_accuracy))
    except ValueError as exc:
        raise UserError(str(exc)) from None
    ck = result.checkpoint
    checkpoint.save(out / "checkpoint.npz", model, epoch=ck.epoch, val_accuracy=ck.val_accuracy,
                    val_loss=ck.val_loss, train_config=tcfg.to_dict(), history=ck.history)
    return [out / "checkpoint.npz", out / "metrics.csv"]


# ---------------------------------------------------------------------------
# eval


def _check_compat(meta, model_cfg):
    for key, value in (model_cfg or {}).items():
        if key == "variant":
            if value != meta["variant"]:
                raise UserError(f"variant: config says {value!r}, checkpoint holds {meta['variant']!r}")
            continue
        if key not in meta["config"]:
            raise UserError(f"{key}: not a field of the checkpoint's {meta['variant']} config")
        stored = meta["config"][key]
        if (list(value) if isinstance(value, (list, tuple)) else value) != stored:
            raise UserError(f"{key}: config says {value!r}, checkpoint holds {stored!r}")


def _eval_points(eval_cfg):
    entries = eval_cfg.get("data")
    points = []
    for path, label, params in _expand(entries, "eval.data"):
        snaps, meta = _read(path)
        points.append({"path": path, "label": label, "snaps": snaps, "meta": meta, "params": params})
    return points


def _point_tags(pt):
    meta = pt["meta"]
    tags = {k: meta[k] for k in ("gx", "pflip", "depth", "circuit") if k in meta}
    tags.update(pt["params"])
    return tags


def cmd_eval(cfg) -> list[Path]:
    ev = _block(cfg, "eval")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    analyses = ev.get("analyses", ["confidence"])
    points = _eval_points(ev)
    files = []
    model = meta = None
    if any(a != "xeb" for a in analyses):
        ck = ev.get("checkpoint")
        if not ck or not Path(ck).exists():
            raise UserError(f"checkpoint not found: {ck}")
        model, meta = checkpoint.load(ck)
        _check_compat(meta, cfg.get("model"))
        grid = tuple(meta["config"]["grid"])
        for pt in points:
            if tuple(pt["snaps"].shape[1:]) != grid:
                raise UserError(f"grid: {pt['path']} holds {list(pt['snaps'].shape[1:])} snapshots, "
                                f"checkpoint expects {list(grid)}")
    N = int(ev.get("set_size", meta["config"]["set_size"] if meta else 1))
    seed = cfg["seed"]
    # same stream as the validation split in training, so eval on the
    # validation files with the training seed sees identical sets
    sets_of = {}
    for i, (pt, ss) in enumerate(zip(points, validation_seed(seed).spawn(len(points)))):
        if len(pt["snaps"]) < N:
            raise UserError(f"{pt['path']} holds fewer than set_size={N} snapshots")
        sets_of[i] = partition_into_sets(pt["snaps"], N, ss)

    def write_rows(stem, rows):
        path = out / analysis.report_name(stem, "csv", N=N)
        analysis.write_csv(path, rows)
        files.append(path)

    summary = {"checkpoint": ev.get("checkpoint"), "set_size": N, "seed": seed}
    if "confidence" in analyses or "accuracy" in analyses:
        rows = []
        labeled_y, labeled_t = [], []
        for i, pt in enumerate(points):
            y = model.predict(sets_of[i])
            m = float(y.mean())
            se = float(y.std(ddof=1) / np.sqrt(len(y))) if len(y) > 1 else 0.0
            row = {"file": pt["path"].name, **_point_tags(pt), "n_sets": len(y), "mean_confidence": m,
                   "stderr": se}
            if pt["label"] is not None:
                acc = float(np.mean((y > 0.5) == (int(pt["label"]) == 1)))
                row.update(label=pt["label"], accuracy=acc)
                labeled_y.append(y)
                labeled_t.append(np.full(len(y), int(pt["label"])))
            rows.append(row)
        write_rows("confidence", rows)
        if labeled_y:
            y, t = np.concatenate(labeled_y), np.concatenate(labeled_t)
            summary["accuracy"] = float(np.mean((y > 0.5) == (t == 1)))
    if "xeb" in analyses:
        rows = []
        for pt in points:
            params = pt["meta"].get("params")
            if pt["meta"].get("generator") != "rqc" or params is None:
                raise UserError(f"{pt['path']}: XEB needs rqc files with circuit parameters")
            state = rqc_simulate(RqcParams(**params))
            est, se = analysis.xeb_estimate(pt["snaps"], state)
            rows.append({"file": pt["path"].name, "depth": params["depth"], "circuit": pt["meta"].get("circuit"),
                         "xeb_exact": analysis.xeb_exact(state), "xeb_estimate": est, "stderr": se})
        write_rows("xeb", rows)
    if "attention" in analyses:
        rows = []
        for i, pt in enumerate(points):
            rep = analysis.pooling_attention_report(model, sets_of[i], ev.get("quantile", 0.15))
            for j, per in enumerate(rep.perimeters):
                rows.append({"file": pt["path"].name, **_point_tags(pt), "perimeter": per,
                             "high_mean": rep.high_mean[j], "high_stderr": rep.high_sem[j],
                             "low_mean": rep.low_mean[j], "low_stderr": rep.low_sem[j]})
        write_rows("attention", rows)
    if "sample_complexity" in analyses:
        rows = []
        n_uc = int(np.prod(meta["config"]["grid"]))
        for i, pt in enumerate(points):
            res = analysis.sample_complexity_ttest([model], sets_of[i], repetitions=int(ev.get("repetitions", 10)),
                                                   seed=seed, n_uc=n_uc)
            rows.append({"file": pt["path"].name, **_point_tags(pt), "defined": res.defined,
                         "mean_samples": res.mean, "stderr": res.sem,
                         "d_star": " ".join("nan" if d is None else str(d) for d in res.d_star)})
        write_rows("sample_complexity", rows)
    path = out / "summary.json"
    analysis.write_json(path, summary)
    files.append(path)
    return files


# ---------------------------------------------------------------------------
# report


def cmd_report(cfg) -> list[Path]:
    """Crossover summary of a confidence CSV along one parameter column."""
    rep = _block(cfg, "report")
    src = Path(rep.get("confidence", ""))
    if not src.exists():
        raise UserError(f"confidence table not found: {src}")
    column = rep.get("x", "pflip")
    with open(src) as fh:
        rows = list(csv.DictReader(fh))
    if not rows or column not in rows[0]:
        raise UserError(f"{src} has no column {column!r}")
    rows.sort(key=lambda r: float(r[column]))
    x = [float(r[column]) for r in rows]
    y = [float(r["mean_confidence"]) for r in rows]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    analysis.write_json(path, {"source": str(src), "x": column, "crossover": analysis.crossing(x, y, 0.5),
                               "width_80_20": analysis.crossover_width(x, y), "points": len(x)})
    return [path]


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}


def make_parser():
    parser = argparse.ArgumentParser(prog="quan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--precision", choices=("f32", "f64"))
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        with threadpool_limits(limits=int(cfg["threads"])):
            outputs = COMMANDS[args.command](cfg)
        write_manifest(Path(cfg["out"]), args.command, cfg, outputs)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
