"""``mhparse`` command line: synth, train, infer, eval, stats, render."""
from __future__ import annotations

import argparse
import dataclasses
import json
import multiprocessing
import sys
from pathlib import Path

import numpy as np

from . import graphgan, metrics, parsernet
from .config import ConfigError, PipelineConfig, load_config
from .graphgan import GanConfig, TrainingError
from .instance import InstanceParsing, from_scene, prediction_from_dict, save_prediction
from .parsernet import ModelConfig
from .pipeline import ORACLES, dump_affinity, infer_scene
from .scene import (CATEGORIES, SceneError, SceneFormatError, _loads, generate_scene,
                    load_scene, save_scene, scene_from_dict)

SPLITS = (("train", 3000), ("val", 1000), ("test", 980))
MANIFEST = "manifest.json"


class CliError(Exception):
    pass


# ------------------------------------------------------------------ helpers

def _map(fn, items, jobs: int):
    """Ordered map over a process pool; ``jobs <= 1`` runs inline."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with multiprocessing.get_context("spawn").Pool(min(jobs, len(items))) as pool:
        return pool.map(fn, items, chunksize=1)


def _scene_seed(seed: int, split: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, split, index]).generate_state(1)[0])


def scene_files(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"{d}: no such directory")
    return sorted(p for p in d.glob("*.json") if p.name != MANIFEST)


def _split_dir(data_dir, split: str) -> Path:
    d = Path(data_dir)
    if not d.is_dir():
        raise CliError(f"{d}: no such directory")
    return d / split if (d / split).is_dir() else d


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def split_sizes(scale: float) -> dict:
    if not scale > 0:
        raise CliError(f"--scale must be > 0, got {scale}")
    return {name: max(1, int(round(base * scale))) for name, base in SPLITS}


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _jobs(args, cfg) -> int:
    jobs = args.jobs if getattr(args, "jobs", None) is not None else cfg.run.jobs
    if jobs < 1:
        raise CliError("--jobs must be >= 1")
    return jobs


# ------------------------------------------------------------------ synth

def _synth_one(task):
    scene_cfg, seed, path = task
    scene = generate_scene(scene_cfg, seed=seed)
    scene.meta["seed"] = seed
    save_scene(scene, path)
    return [m for m in scene.person_masks], scene.person_count


def cmd_synth(args) -> int:
    cfg = _config(args)
    scale = cfg.run.scale if args.scale is None else args.scale
    sizes = split_sizes(scale)
    out = Path(args.out_dir)
    manifest = {"format": "mhparse-manifest", "version": 1, "seed": cfg.seed, "scale": scale,
                "scene_config": dataclasses.asdict(cfg.scene), "splits": {}}
    for k, (name, _) in enumerate(SPLITS):
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        tasks = [(cfg.scene, _scene_seed(cfg.seed, k, i), d / f"scene_{i:05d}.json") for i in range(sizes[name])]
        results = _map(_synth_one, tasks, _jobs(args, cfg))
        masks = [r[0] for r in results]
        counts = [r[1] for r in results]
        manifest["splits"][name] = {
            "count": sizes[name],
            "persons": int(sum(counts)),
            "mean_persons": float(np.mean(counts)),
            "closeness": metrics.mean_average_iou(masks),
            "files": [t[2].name for t in tasks],
        }
    _write_json(out / MANIFEST, manifest)
    print(" ".join(f"{n}={manifest['splits'][n]['count']}" for n, _ in SPLITS), f"-> {out}")
    return 0


# ------------------------------------------------------------------ train

def _prepare(task):
    path, model_cfg, target = task
    return graphgan.prepare_sample(load_scene(path), model_cfg, target)


def save_model(path, state, cfg: PipelineConfig):
    tensors = {f"gen/{k}": v for k, v in state.gen.items()}
    tensors.update({f"disc/{k}": v for k, v in state.disc.items()})
    meta = {"model": dataclasses.asdict(cfg.model), "gan": dataclasses.asdict(cfg.gan), "step": state.step}
    parsernet.save_checkpoint(path, tensors, meta)


def load_model(path):
    if not Path(path).is_file():
        raise CliError(f"{path}: checkpoint not found")
    try:
        tensors, meta = parsernet.load_checkpoint(path)
    except (ValueError, KeyError) as exc:
        raise CliError(f"{path}: unreadable checkpoint ({exc})") from None
    gen = {k[4:]: v for k, v in tensors.items() if k.startswith("gen/")}
    disc = {k[5:]: v for k, v in tensors.items() if k.startswith("disc/")}
    model_cfg = ModelConfig(**meta.get("model", {}))
    gan = meta.get("gan")
    gan_cfg = GanConfig(**gan) if gan else GanConfig()
    return gen, disc, model_cfg, gan_cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    files = scene_files(_split_dir(args.data_dir, "train"))
    if not files:
        raise CliError(f"{args.data_dir}: no scene files")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = cfg.run.steps if args.steps is None else args.steps
    samples = _map(_prepare, [(p, cfg.model, cfg.clustering.superpixel_size) for p in files], _jobs(args, cfg))
    log = out / "train_log.csv"
    if log.exists():
        log.unlink()
    state = graphgan.new_state(cfg.gan, cfg.model)
    every = args.save_every or 0

    def on_step(rec):
        if every and state.step % every == 0 and state.step < steps:
            save_model(out / f"checkpoint_{state.step:06d}.json", state, cfg)

    graphgan.train(samples, steps, cfg.gan, cfg.model, state, log, on_step)
    save_model(out / "checkpoint.json", state, cfg)
    last = state.history[-1] if state.history else {}
    print(f"trained {steps} steps on {len(samples)} scenes; "
          f"seg={last.get('seg_loss', float('nan')):.4f} l2={last.get('l2_loss', float('nan')):.4f} -> {out}")
    return 0


# ------------------------------------------------------------------ infer

def _infer_one(task):
    path, gen, model_cfg, cfg, oracle, refine, out_dir, dump = task
    scene = load_scene(path)
    res = infer_scene(gen, scene, model_cfg, cfg.clustering, cfg.crf if refine else None, oracle, cfg.gan.theta)
    res.parsing.meta["gt_persons"] = scene.person_count
    save_prediction(res.parsing, Path(out_dir) / path.name)
    if dump:
        dump_affinity(Path(out_dir) / f"{path.stem}.affinity.csv", res.affinity)
    return res.parsing.count


def cmd_infer(args) -> int:
    cfg = _config(args)
    gen, _, model_cfg, gan_cfg = load_model(args.checkpoint)
    cfg = dataclasses.replace(cfg, gan=dataclasses.replace(cfg.gan, theta=gan_cfg.theta))
    files = scene_files(_split_dir(args.data_dir, args.split))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    refine = cfg.refine.enabled if args.refine is None else args.refine
    tasks = [(p, gen, model_cfg, cfg, args.oracle, refine, out, args.dump_affinity) for p in files]
    counts = _map(_infer_one, tasks, _jobs(args, cfg))
    print(f"wrote {len(files)} predictions ({sum(counts)} persons) -> {out}")
    return 0


# ------------------------------------------------------------------ eval

def _parse_thresholds(text):
    try:
        vals = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise CliError(f"bad --thresholds {text!r}") from None
    if not vals or any(not 0.0 < v < 1.0 for v in vals):
        raise CliError("thresholds must lie in (0, 1)")
    return vals


def _eval_one(task):
    gt_path, pred_path = task
    scene = load_scene(gt_path)
    if pred_path is None:
        pred = InstanceParsing(np.zeros(scene.shape, np.int64), np.zeros(scene.shape, np.int64), [])
    else:
        pred = load_annotation(pred_path)
        if pred.instance_ids.shape != scene.shape:
            raise CliError(f"{pred_path}: size {pred.instance_ids.shape} differs from {gt_path}")
    item = metrics.SceneEval(metrics.person_parts(pred.person_masks(), pred.categories), pred.confidences,
                             metrics.person_parts(scene.person_masks, scene.part_labels))
    return item, scene.person_masks, pred.meta.get("requested_k")


def cmd_eval(args) -> int:
    cfg = _config(args)
    thresholds = cfg.metrics.thresholds if args.thresholds is None else _parse_thresholds(args.thresholds)
    gt_files = scene_files(args.gt_dir)
    pred_dir = Path(args.pred_dir)
    if not pred_dir.is_dir():
        raise CliError(f"{pred_dir}: no such directory")
    tasks = [(g, pred_dir / g.name if (pred_dir / g.name).is_file() else None) for g in gt_files]
    results = _map(_eval_one, tasks, _jobs(args, cfg))
    items = [r[0] for r in results]
    report = metrics.evaluate(items, [g.name for g in gt_files], thresholds, cfg.metrics.pcp_threshold,
                              gt_masks=[r[1] for r in results])
    for row, (_, _, k) in zip(report.per_scene, results):
        row["requested_k"] = k
        row["count_error"] = None if k is None else int(k) - row["persons"]
    doc = report.to_dict()
    doc["predictions_found"] = sum(t[1] is not None for t in tasks)
    if args.out:
        _write_json(args.out, doc)
    sys.stdout.write(report.table())
    return 0


# ------------------------------------------------------------------ stats

def dataset_stats(scenes) -> dict:
    hist = np.zeros(len(CATEGORIES), dtype=np.int64)
    persons = []
    for s in scenes:
        hist += np.bincount(s.part_labels.ravel(), minlength=len(CATEGORIES))
        persons.append(s.person_count)
    fg = hist[1:].sum()
    return {
        "scenes": len(scenes),
        "closeness": metrics.mean_average_iou(scenes),
        "persons_per_scene": float(np.mean(persons)) if persons else 0.0,
        "person_count_histogram": {str(k): int(v) for k, v in zip(*np.unique(persons, return_counts=True))},
        "category_pixels": {name: int(n) for name, n in zip(CATEGORIES, hist)},
        "category_share": {name: (float(n / fg) if fg else 0.0) for name, n in zip(CATEGORIES[1:], hist[1:])},
    }


def cmd_stats(args) -> int:
    files = scene_files(_split_dir(args.data_dir, args.split))
    stats = dataset_stats([load_scene(p) for p in files])
    if args.out:
        _write_json(args.out, stats)
    print(f"scenes={stats['scenes']} persons/scene={stats['persons_per_scene']:.2f} "
          f"closeness={100 * stats['closeness']:.2f}%")
    width = max(len(c) for c in CATEGORIES)
    for name, share in stats["category_share"].items():
        print(f"  {name:<{width}} {100 * share:6.2f}%")
    return 0


# ------------------------------------------------------------------ render

def _palette():
    """Fixed colours: index 0 is black, the rest are spread hues at full value."""
    cols = [(0, 0, 0)]
    for i in range(1, 64):
        h = (i * 0.618033988749895) % 1.0
        s = 0.55 + 0.45 * ((i * 7) % 3) / 2
        k = np.array([5.0, 3.0, 1.0])
        rgb = 1.0 - s * np.clip(np.minimum((k + h * 6) % 6, 4 - (k + h * 6) % 6), 0, 1)
        cols.append(tuple(int(round(255 * v)) for v in rgb))
    return np.array(cols, dtype=np.uint8)


PALETTE = _palette()


def write_ppm(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def render_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    return PALETTE[labels % len(PALETTE)]


def load_annotation(path) -> InstanceParsing:
    """Scene or prediction file as an InstanceParsing."""
    try:
        with open(path) as fh:
            doc = _loads(fh.read(), path)
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror}") from None
    kind = doc.get("format") if isinstance(doc, dict) else None
    if kind == "mhparse-scene":
        return from_scene(scene_from_dict(doc, path))
    if kind == "mhparse-prediction":
        return prediction_from_dict(doc, path)
    raise SceneFormatError("not a scene or prediction file", path=path)


def cmd_render(args) -> int:
    ann = load_annotation(args.input)
    labels = ann.instance_ids if args.mode == "instances" else ann.categories
    write_ppm(args.out, render_labels(labels))
    return 0


# ------------------------------------------------------------------ main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mhparse", description="Multi-person parsing toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, jobs=True):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--seed", type=int, help="overrides config and MHPARSE_SEED")
        if jobs:
            sp.add_argument("--jobs", type=int, help="worker processes")

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    common(s)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--scale", type=float, help="fraction of the 3000/1000/980 split sizes")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train the parsing network with the graph GAN")
    common(s)
    s.add_argument("--data-dir", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--save-every", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="write instance parsing predictions")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data-dir", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--oracle", choices=ORACLES, default="none")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--refine", dest="refine", action="store_true", default=None)
    g.add_argument("--no-refine", dest="refine", action="store_false")
    s.add_argument("--dump-affinity", action="store_true")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="score predictions against annotations")
    common(s)
    s.add_argument("--pred-dir", required=True)
    s.add_argument("--gt-dir", required=True)
    s.add_argument("--thresholds")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", help="dataset statistics")
    common(s, jobs=False)
    s.add_argument("--data-dir", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("render", help="draw a scene or prediction as a PPM image")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("instances", "parts"), default="instances")
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, SceneError, TrainingError, OSError) as exc:
        msg = str(exc)
        if isinstance(exc, OSError) and exc.filename:
            msg = f"{exc.filename}: {exc.strerror}"
        print(f"mhparse: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
