"""Experiment orchestration: dataset generation, training, evaluation, sweeps.

RNG streams are derived from fixed tags so every artifact is a pure
function of (config, seed):

    dataset sample i of split s   SeededRng(seed, (1 | 2 | 3, i))
    network init / training       SeededRng(seed, (10 | 12,)) / (11 | 13,)
    triplet pairing               SeededRng(eval_seed, (20,))
    edits for triplet i           SeededRng(eval_seed, (21, i))

All methods of one triplet start from the same stream (common random
numbers). Workers only ever see whole triplets, so serial and parallel
evaluation produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .denoiser import AnalyticDenoiser, AnalyticPaletteDenoiser
from .editing import EditConfig, run_edit
from .errors import ConfigError
from .io import Split, file_inventory, read_split, write_pgm, write_split
from .metrics import (combined_score, dice, extract_features, frechet_distance, healthy_mask,
                      indirect_effect_error, masked_mae, projection_matrix, segment_lesion)
from .morphology import dilate
from .phantom import generate, stratify
from .rng import SeededRng
from .tiny import TinyDenoiser, init_weights, load_weights, save_weights, train

log = logging.getLogger(__name__)

TRAIN, TEST, HEALTHY = "train", "test", "healthy"
_SPLIT_TAGS = {TRAIN: 1, TEST: 2, HEALTHY: 3}
MANIFEST = "manifest.json"


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# ---------------------------------------------------------------- dataset

def generate_split(cfg: ExperimentConfig, split: str, n: int, seed: int):
    with_lesion = split != HEALTHY
    tag = _SPLIT_TAGS[split]
    return [generate(cfg.phantom, with_lesion, SeededRng(seed, (tag, i))) for i in range(n)]


def cmd_generate_dataset(cfg: ExperimentConfig, out, seed: int | None = None) -> Path:
    seed = cfg["seed"] if seed is None else seed
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = {TRAIN: cfg["dataset.n_train"], TEST: cfg["dataset.n_test"], HEALTHY: cfg["dataset.n_healthy"]}
    report = [f"# stratification by lesion area rank (25/50/25), seed={seed}"]
    for split, n in sizes.items():
        samples = generate_split(cfg, split, n, seed)
        write_split(out / split, samples, cfg.phantom.size)
        if split != HEALTHY and samples:
            s = stratify(samples)
            report.append(f"{split}: n={n} small={len(s['small'])} medium={len(s['medium'])} "
                          f"large={len(s['large'])} small_max_area={s['small_max_area']} "
                          f"large_min_area={s['large_min_area']}")
        log.info("wrote %d %s samples", n, split)
    (out / "stratification.txt").write_text("\n".join(report) + "\n")
    (out / "config.txt").write_text(cfg.to_text())
    return out


def load_dataset(directory) -> dict[str, Split]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} does not exist")
    return {s: read_split(d / s) for s in (TRAIN, TEST, HEALTHY)}


def _dataset(cfg: ExperimentConfig, dataset_dir=None):
    d = dataset_dir or cfg["dataset_dir"]
    if not d:
        raise ConfigError("no dataset_dir configured")
    return load_dataset(d)


# ---------------------------------------------------------------- training

def palette_channels(split: Split, k: int):
    """((1 - m) * x0, m) with m = dilate(p, k) for every sample."""
    m = np.stack([dilate(p, k) for p in split.pathology]).astype(float)
    return (split.images * (1.0 - m), m)


def cmd_train(cfg: ExperimentConfig, out, seed: int | None = None, dataset_dir=None) -> dict:
    seed = cfg["seed"] if seed is None else seed
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data = _dataset(cfg, dataset_dir)[TRAIN]
    if len(data) == 0:
        raise ConfigError("training split is empty")
    variants = [("denoiser", 3, 10, ())]
    if cfg["train.palette"]:
        k = cfg.edits["palette"].k if cfg["palette.mask"] == "dilated" else 1
        variants.append(("palette", 5, 12, palette_channels(data, k)))
    results = {}
    for name, channels, tag, extra in variants:
        t0 = time.perf_counter()
        w0 = init_weights(channels, cfg.schedule.T, SeededRng(seed, (tag,)),
                          hidden=cfg["train.hidden"], emb_dim=cfg["train.emb_dim"])
        w, losses = train(w0, data.images, data.brain, data.pathology, cfg.schedule, cfg.optimizer,
                          SeededRng(seed, (tag + 1,)), extra=extra)
        save_weights(w, out / f"{name}.cfd")
        write_csv(out / f"{name}_loss.csv", ["epoch", "loss"], [(i + 1, l) for i, l in enumerate(losses)])
        results[name] = {"weights": w, "losses": losses, "seconds": time.perf_counter() - t0}
        log.info("trained %s: %d epochs, final loss %s", name, len(losses), losses[-1] if losses else None)
    return results


# ---------------------------------------------------------------- evaluation

def make_denoisers(cfg: ExperimentConfig):
    def build(spec, channels, analytic_cls):
        if spec == "analytic":
            return analytic_cls(cfg.phantom, cfg.schedule)
        path = spec.split(":", 1)[1]
        w = load_weights(path, in_channels=channels)
        if w.T != cfg.schedule.T:
            raise ConfigError(f"weights {path} were trained with T={w.T}, config has T={cfg.schedule.T}")
        return TinyDenoiser(w)

    den = build(cfg["denoiser"], 3, AnalyticDenoiser)
    pal = None
    if "palette" in cfg.methods or cfg["palette_denoiser"] == "analytic":
        pal = build(cfg["palette_denoiser"], 5, AnalyticPaletteDenoiser)
    return den, pal


@dataclass
class Triplet:
    index: int
    prior: int  # index into the healthy split
    mask: int  # index into the test split


def pair_triplets(n_eval: int, n_test: int, n_healthy: int, rng: SeededRng) -> list[Triplet]:
    """Random (prior, pathology) pairing; priors drawn without replacement.

    Pathology masks cycle through fresh permutations of the test split when
    more triplets than test masks are requested.
    """
    if n_eval == 0:
        return []
    if n_test == 0:
        raise ConfigError("test split is empty; no pathology masks to pair")
    if n_eval > n_healthy:
        raise ConfigError(f"eval.size={n_eval} exceeds the {n_healthy} healthy priors (pairing is without replacement)")
    priors = rng.permutation(n_healthy)[:n_eval]
    masks = np.concatenate([rng.permutation(n_test) for _ in range(-(-n_eval // n_test))])[:n_eval]
    return [Triplet(i, int(a), int(b)) for i, (a, b) in enumerate(zip(priors, masks))]


_WORKER_STATE = {}


def _init_worker(state):
    _WORKER_STATE.clear()
    _WORKER_STATE.update(state)


def _edit_triplet(job):
    """Run every method on one triplet and score it. Returns (records, counterfactuals)."""
    eval_seed, trip, x0, b, p, prior_vent = job
    st = _WORKER_STATE
    cfg, methods = st["cfg"], st["methods"]
    params = cfg.phantom
    records, images = [], []
    healthy = healthy_mask(b, p, prior_vent, params)
    for label, ec in methods:
        rng = SeededRng(eval_seed, (21, trip.index))
        res = run_edit(ec, x0, b, p, st["denoiser"], st["palette"], cfg.schedule, rng)
        cf = res.counterfactual
        seg = segment_lesion(cf, params, brain=b)
        records.append({
            "method": label, "seed": eval_seed, "triplet": trip.index, "prior": trip.prior, "mask": trip.mask,
            "k": ec.k, "U": ec.U, "encoding_ratio": ec.encoding_ratio,
            "dice": dice(seg, p),
            "indirect_error": indirect_effect_error(cf, b, p, params),
            "healthy_mae": masked_mae(cf, x0, healthy),
            "lesion_area": int(p.sum()),
        })
        images.append(cf)
    return records, images


def run_triplets(cfg: ExperimentConfig, data: dict[str, Split], methods: list[tuple[str, EditConfig]],
                 eval_seed: int, denoisers, workers: int = 1):
    """Evaluate ``methods`` on the triplets of one seed.

    Returns (per-triplet records, {label: list of counterfactuals}) in
    triplet order regardless of ``workers``.
    """
    test, healthy = data[TEST], data[HEALTHY]
    trips = pair_triplets(cfg["eval.size"], len(test), len(healthy), SeededRng(eval_seed, (20,)))
    jobs = []
    for tr in trips:
        b = healthy.brain[tr.prior]
        p = test.pathology[tr.mask] & b
        jobs.append((eval_seed, tr, healthy.images[tr.prior], b, p, healthy.ventricles[tr.prior]))
    state = {"cfg": cfg, "methods": methods, "denoiser": denoisers[0], "palette": denoisers[1]}
    if workers > 1 and len(jobs) > 1:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_init_worker, initargs=(state,)) as ex:
            results = list(ex.map(_edit_triplet, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        _init_worker(state)
        results = [_edit_triplet(j) for j in jobs]
    records = [r for recs, _ in results for r in recs]
    images = {label: [imgs[j] for _, imgs in results] for j, (label, _) in enumerate(methods)}
    return records, images, trips


def aggregate(records, images, reference_features, projection) -> list[dict]:
    """One row per (method label, seed): mean per-triplet metrics plus set-level Frechet distance."""
    rows = []
    keys = []
    for r in records:
        key = (r["method"], r["seed"])
        if key not in keys:
            keys.append(key)
    for label, seed in keys:
        rs = [r for r in records if r["method"] == label and r["seed"] == seed]
        fs = extract_features(images[(label, seed)], 0, projection=projection)
        fd = frechet_distance(fs, reference_features)
        d = float(np.mean([r["dice"] for r in rs]))
        rows.append({
            "method": label, "seed": seed, "k": rs[0]["k"], "U": rs[0]["U"],
            "encoding_ratio": rs[0]["encoding_ratio"],
            "dice": d, "frechet": fd,
            "indirect_error": float(np.mean([r["indirect_error"] for r in rs])),
            "healthy_mae": float(np.mean([r["healthy_mae"] for r in rs])),
            "combined": combined_score(d, fd),
            "n": len(rs),
        })
    return rows


def summarize(rows) -> list[dict]:
    """Mean and standard deviation over seeds, per method label."""
    out = []
    labels = []
    for r in rows:
        if r["method"] not in labels:
            labels.append(r["method"])
    for label in labels:
        rs = [r for r in rows if r["method"] == label]
        row = {"method": label, "seeds": len(rs)}
        for m in ("combined", "frechet", "dice", "indirect_error", "healthy_mae"):
            vals = np.array([r[m] for r in rs])
            row[m] = float(vals.mean())
            row[m + "_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(row)
    return out


PER_SAMPLE_COLUMNS = ["method", "seed", "triplet", "prior", "mask", "k", "U", "encoding_ratio",
                      "dice", "indirect_error", "healthy_mae", "lesion_area"]
METRIC_COLUMNS = ["method", "seed", "k", "U", "dice", "frechet", "indirect_error", "healthy_mae", "combined"]
SUMMARY_COLUMNS = ["method", "seeds", "combined", "combined_std", "frechet", "frechet_std", "dice", "dice_std",
                   "indirect_error", "indirect_error_std", "healthy_mae", "healthy_mae_std"]


def _write_gallery(out: Path, label, seed, trips, x0s, cfs, n):
    for tr, x0, cf in list(zip(trips, x0s, cfs))[:n]:
        stem = out / f"{label}_s{seed}_t{tr.index:03d}"
        write_pgm(f"{stem}_prior.pgm", x0)
        write_pgm(f"{stem}_counterfactual.pgm", cf)
        write_pgm(f"{stem}_diff_pos.pgm", np.clip(cf - x0, 0.0, 1.0))
        write_pgm(f"{stem}_diff_neg.pgm", np.clip(x0 - cf, 0.0, 1.0))


def _evaluate(cfg: ExperimentConfig, out: Path, methods, seeds, data, workers, gallery: int):
    denoisers = make_denoisers(cfg)
    shape = data[TEST].images.shape[1:]
    projection = projection_matrix(cfg["eval.projection_seed"], int(np.prod(shape)))
    np.save(out / "projection.npy", np.asarray(projection), allow_pickle=False)
    ref = extract_features(list(data[TEST].images), 0, projection=projection) if len(data[TEST]) else None
    all_records, images, wall = [], {}, {}
    for seed in seeds:
        t0 = time.perf_counter()
        records, imgs, trips = run_triplets(cfg, data, methods, seed, denoisers, workers)
        wall[f"seed_{seed}"] = time.perf_counter() - t0
        all_records += records
        for label, cfs in imgs.items():
            images[(label, seed)] = cfs
            if gallery and cfs:
                gdir = out / "gallery"
                gdir.mkdir(exist_ok=True)
                x0s = [data[HEALTHY].images[tr.prior] for tr in trips]
                _write_gallery(gdir, label, seed, trips, x0s, cfs, gallery)
    rows = aggregate(all_records, images, ref, projection) if all_records else []
    return all_records, rows, wall


def write_manifest(out: Path, cfg: ExperimentConfig, command: str, seeds, metric_rows, wall, extra=None) -> dict:
    """Write manifest.json. ``fingerprint`` covers everything except timings and worker count."""
    files = file_inventory(out, exclude=(MANIFEST,))
    core = {
        "artifact_version": __version__,
        "command": command,
        "config_hash": cfg.hash,
        "config": cfg.to_text(),
        "seeds": list(seeds),
        "rng_streams": {"pairing": "SeededRng(seed, (20,))", "triplet": "SeededRng(seed, (21, i))"},
        "pairing": "priors without replacement; masks cycle through permutations",
        "metrics": metric_rows,
        "files": files,
    }
    blob = json.dumps(core, sort_keys=True, default=float).encode()
    manifest = dict(core, fingerprint=hashlib.sha256(blob).hexdigest(), wall_seconds=wall, **(extra or {}))
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    return manifest


def cmd_evaluate(cfg: ExperimentConfig, out, seed: int | None = None, dataset_dir=None,
                 workers: int | None = None) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = (seed,) if seed is not None else cfg.seeds
    workers = cfg.workers() if workers is None else workers
    t0 = time.perf_counter()
    data = _dataset(cfg, dataset_dir)
    methods = [(m, cfg.edits[m]) for m in cfg.methods]
    records, rows, wall = _evaluate(cfg, out, methods, seeds, data, workers, cfg["eval.gallery"])
    write_csv(out / "per_sample.csv", PER_SAMPLE_COLUMNS, [[r[c] for c in PER_SAMPLE_COLUMNS] for r in records])
    write_csv(out / "metrics.csv", METRIC_COLUMNS, [[r[c] for c in METRIC_COLUMNS] for r in rows])
    summary = summarize(rows)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, [[r[c] for c in SUMMARY_COLUMNS] for r in summary])
    wall["total"] = time.perf_counter() - t0
    manifest = write_manifest(out, cfg, "evaluate", seeds, rows, wall, {"workers": workers})
    return {"records": records, "rows": rows, "summary": summary, "manifest": manifest}


SWEEP_AXES = {"k": "mededit", "U": "mededit", "encoding_ratio": "sdedit"}


def sweep_methods(cfg: ExperimentConfig, axis: str, grid=None):
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
    grid = tuple(cfg[f"sweep.{axis}"] if grid is None else grid)
    base = cfg.edits[SWEEP_AXES[axis]]
    out = []
    for v in grid:
        kw = {f.name: getattr(base, f.name) for f in base.__dataclass_fields__.values()}
        kw[axis] = v
        out.append((f"{base.method}[{axis}={v}]", EditConfig(**kw)))
    return out


def cmd_sweep(cfg: ExperimentConfig, axis: str, out, seed: int | None = None, dataset_dir=None,
              workers: int | None = None, grid=None) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = (seed,) if seed is not None else cfg.seeds
    workers = cfg.workers() if workers is None else workers
    methods = sweep_methods(cfg, axis, grid)
    data = _dataset(cfg, dataset_dir)
    t0 = time.perf_counter()
    records, rows, wall = _evaluate(cfg, out, methods, seeds, data, workers, gallery=0)
    values = {label: getattr(ec, axis) for label, ec in methods}
    header = ["axis", "value", "method", "seed", "dice", "frechet", "indirect_error", "healthy_mae", "combined"]
    sweep_rows = [[axis, values[r["method"]], SWEEP_AXES[axis], r["seed"], r["dice"], r["frechet"],
                   r["indirect_error"], r["healthy_mae"], r["combined"]] for r in rows]
    write_csv(out / "sweep.csv", header, sweep_rows)
    wall["total"] = time.perf_counter() - t0
    manifest = write_manifest(out, cfg, f"sweep:{axis}", seeds, rows, wall, {"workers": workers})
    return {"records": records, "rows": rows, "values": values, "manifest": manifest}
