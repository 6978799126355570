"""Batch command-line frontend for dataset-scale runs.

Subcommands: ``stack`` (6-channel preprocessing), ``targets`` (offset-map
generation), ``postproc`` (prediction maps to labeled instances), ``eval``
(panoptic-quality report), ``augment`` (seeded dataset augmentation) and
``loss-check`` (gradient self-test).  Exit codes: 0 success, 1 runtime
failure, 2 usage error.  Progress and errors go to stderr; stdout carries
only machine-parseable report lines.
"""

from __future__ import annotations

import argparse
import functools
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import hover, losses, metrics
from .augment import Sample, apply as apply_augment, sample_params
from .config import CliConfig, load_config
from .hover import PostprocParams, PredictionMaps, make_targets, postprocess
from .npyio import read_npy_file, write_npy_file
from .preprocess import StackConfig, preprocess_tile
from .types import ClassMap, HoVerMaps, InstanceMap, MultiChannelImage, N_CLASSES


def _pmap(fn, items, workers: int):
    """Order-preserving map, optionally over worker processes."""
    if workers <= 1:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def _stack_one(cfg: StackConfig, image: np.ndarray) -> np.ndarray:
    return preprocess_tile(MultiChannelImage(image), cfg).data


def _targets_one(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hv, npb = make_targets(InstanceMap(labels))
    return np.stack((hv.h, hv.v), axis=-1).astype(np.float32), npb


def _postproc_one(params: PostprocParams, item) -> np.ndarray:
    np_prob, hv, tp = item
    maps = PredictionMaps(np_prob, HoVerMaps(hv[:, :, 0], hv[:, :, 1]), tp)
    inst, classes = postprocess(maps, params)
    lab = inst.labels
    cls_plane = np.zeros(lab.shape, dtype=np.int64)
    for iid, c in enumerate(classes, start=1):
        cls_plane[lab == iid] = c
    return np.stack((lab, cls_plane), axis=-1).astype(np.int32)


def _eval_one(iou_threshold: float, item) -> metrics.PQStats:
    pred, gt = item
    return metrics.accumulate_pq(
        gt[:, :, 0], gt[:, :, 1], pred[:, :, 0], pred[:, :, 1],
        metrics.PQStats.zero(), iou_threshold,
    )


def _augment_one(args) -> tuple[np.ndarray, np.ndarray]:
    cfg, seed, index, image, labels = args
    sample = Sample(
        MultiChannelImage(image), InstanceMap(labels[:, :, 0]), ClassMap(labels[:, :, 1])
    )
    out = apply_augment(sample_params(cfg, seed, index), sample)
    lab = np.stack((out.instances.labels, out.classes.classes.astype(np.int64)), axis=-1)
    return out.image.data, lab.astype(np.int32)


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_labels4(path) -> np.ndarray:
    arr = read_npy_file(path)
    if arr.ndim != 4 or arr.shape[3] != 2:
        raise ValueError(f"expected (N, H, W, 2) labels in {path}, got {arr.shape}")
    return arr.astype(np.int64)


def cmd_stack(ns, cfg: CliConfig) -> int:
    images = read_npy_file(ns.images)
    if images.ndim != 4 or images.shape[3] != 3 or images.dtype != np.uint8:
        raise ValueError(f"expected (N, H, W, 3) u8 images, got {images.shape} {images.dtype}")
    fn = functools.partial(_stack_one, cfg.stack)
    out = np.stack(_pmap(fn, list(images), ns.workers))
    write_npy_file(ns.out, out)
    _progress(f"stack: wrote {out.shape} to {ns.out}")
    return 0


def cmd_targets(ns, cfg: CliConfig) -> int:
    labels = _load_labels4(ns.labels)
    results = _pmap(_targets_one, list(labels[:, :, :, 0]), ns.workers)
    hv = np.stack([r[0] for r in results])
    npb = np.stack([r[1] for r in results])
    os.makedirs(ns.out, exist_ok=True)
    hv_path = os.path.join(ns.out, "hv.npy")
    np_path = os.path.join(ns.out, "np.npy")
    write_npy_file(hv_path, hv)
    write_npy_file(np_path, npb)
    _progress(f"targets: wrote {hv.shape} to {hv_path} and {npb.shape} to {np_path}")
    return 0


def cmd_postproc(ns, cfg: CliConfig) -> int:
    np_prob = read_npy_file(ns.np_prob).astype(np.float64)
    hv = read_npy_file(ns.hv).astype(np.float64)
    if np_prob.ndim != 3:
        raise ValueError(f"expected (N, H, W) probabilities, got {np_prob.shape}")
    if hv.ndim != 4 or hv.shape[3] != 2:
        raise ValueError(f"expected (N, H, W, 2) hv maps, got {hv.shape}")
    tp = None
    if ns.tp is not None:
        tp = read_npy_file(ns.tp).astype(np.float64)
        if tp.ndim != 4 or tp.shape[3] != N_CLASSES + 1:
            raise ValueError(f"expected (N, H, W, {N_CLASSES + 1}) class maps, got {tp.shape}")
    items = [
        (np_prob[i], hv[i], None if tp is None else tp[i]) for i in range(np_prob.shape[0])
    ]
    fn = functools.partial(_postproc_one, cfg.postproc)
    out = np.stack(_pmap(fn, items, ns.workers))
    write_npy_file(ns.out, out)
    _progress(f"postproc: wrote {out.shape} to {ns.out}")
    return 0


def cmd_eval(ns, cfg: CliConfig) -> int:
    pred = _load_labels4(ns.pred)
    gt = _load_labels4(ns.gt)
    if pred.shape != gt.shape:
        raise ValueError("sample count mismatch" if pred.shape[0] != gt.shape[0] else "shape mismatch")
    items = list(zip(pred, gt))
    fn = functools.partial(_eval_one, cfg.iou_threshold)
    per_image = _pmap(fn, items, ns.workers)
    pooled = functools.reduce(metrics.merge_stats, per_image, metrics.PQStats.zero())
    rep = metrics.report(per_image, pooled)
    text = "".join(f"{name}\t{value:.5f}\n" for name, value in rep.lines())
    sys.stdout.write(text)
    if ns.out:
        with open(ns.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _progress(f"eval: wrote report to {ns.out}")
    return 0


def cmd_augment(ns, cfg: CliConfig) -> int:
    images = read_npy_file(ns.images)
    labels = _load_labels4(ns.labels)
    if images.shape[0] != labels.shape[0]:
        raise ValueError("sample count mismatch")
    items = [
        (cfg.augment, ns.seed, i, images[i], labels[i]) for i in range(images.shape[0])
    ]
    results = _pmap(_augment_one, items, ns.workers)
    out_images = np.stack([r[0] for r in results])
    out_labels = np.stack([r[1] for r in results])
    os.makedirs(ns.out, exist_ok=True)
    img_path = os.path.join(ns.out, "images.npy")
    lab_path = os.path.join(ns.out, "labels.npy")
    write_npy_file(img_path, out_images)
    write_npy_file(lab_path, out_labels)
    _progress(f"augment: wrote {out_images.shape} to {img_path} and {out_labels.shape} to {lab_path}")
    return 0


def _fd_check(build, n_probes: int, rng: np.random.Generator) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    f, x0 = build(rng)
    _, grad = f(x0)
    worst = 0.0
    h = 1e-6
    flat = x0.ravel()
    idx = rng.choice(flat.size, size=min(n_probes, flat.size), replace=False)
    for i in idx:
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        fp, _ = f(xp.reshape(x0.shape))
        fm, _ = f(xm.reshape(x0.shape))
        fd = (fp - fm) / (2 * h)
        g = grad.ravel()[i]
        denom = max(abs(fd), abs(g), 1e-8)
        worst = max(worst, abs(fd - g) / denom)
    return worst


def cmd_loss_check(ns, cfg: CliConfig) -> int:
    """Quick gradient self-test of every loss kernel; nonzero exit on failure."""
    rng = np.random.default_rng(ns.seed)

    def make_input(r, n=12, c=7):
        return losses.LossInput(r.normal(size=(n, c)), r.integers(0, c, size=n))

    def build_simple(loss_fn):
        def build(r):
            inp = make_input(r)
            tgt = inp.targets

            def f(z):
                res = loss_fn(losses.LossInput(z, tgt))
                return res.value, res.grad_logits

            return f, np.asarray(inp.logits)

        return build

    def build_hv(r):
        hgt = wid = 6
        tgt = r.uniform(-1, 1, size=(hgt, wid, 2))
        mask = r.uniform(size=(hgt, wid)) < 0.5
        x0 = r.uniform(-1, 1, size=(hgt, wid, 2))

        def f(x):
            res = losses.hv_loss(x, tgt, mask)
            return res.value, np.stack((res.grad_h, res.grad_v), axis=-1)

        return f, x0

    checks = [
        ("dice", build_simple(lambda i: losses.dice_loss(i))),
        ("asym-focal", build_simple(lambda i: losses.asym_focal_loss(i))),
        ("asym-focal-tversky", build_simple(lambda i: losses.asym_focal_tversky_loss(i))),
        ("ufl", build_simple(lambda i: losses.unified_focal_loss(i))),
        ("hv", build_hv),
    ]
    failed = False
    for name, build in checks:
        worst = max(_fd_check(build, 8, rng) for _ in range(5))
        ok = worst < 1e-5
        print(f"{name}\t{'ok' if ok else 'FAIL'}\t{worst:.3e}")
        failed |= not ok
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nucseg", description="Nuclei segmentation pipeline batch tools"
    )
    parser.add_argument("--config", metavar="PATH", help="key=value config file")
    parser.add_argument("--seed", type=int, default=0, metavar="U64", help="base RNG seed")
    parser.add_argument("--workers", type=int, default=1, metavar="N", help="parallel workers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stack", help="CLAHE + multi-color-space channel stacking")
    p.add_argument("images", help="(N,H,W,3) u8 images NPY")
    p.add_argument("--out", required=True, help="output NPY path")
    p.set_defaults(fn=cmd_stack)

    p = sub.add_parser("targets", help="offset target maps from instance labels")
    p.add_argument("labels", help="(N,H,W,2) labels NPY")
    p.add_argument("--out", required=True, help="output directory (hv.npy, np.npy)")
    p.set_defaults(fn=cmd_targets)

    p = sub.add_parser("postproc", help="prediction maps to labeled instances")
    p.add_argument("np_prob", help="(N,H,W) nucleus probability NPY")
    p.add_argument("hv", help="(N,H,W,2) offset maps NPY")
    p.add_argument("--tp", help="(N,H,W,7) class probability NPY")
    p.add_argument("--out", required=True, help="output (N,H,W,2) labels NPY path")
    p.set_defaults(fn=cmd_postproc)

    p = sub.add_parser("eval", help="panoptic-quality report")
    p.add_argument("pred", help="predicted (N,H,W,2) labels NPY")
    p.add_argument("gt", help="ground-truth (N,H,W,2) labels NPY")
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("augment", help="seeded dataset augmentation")
    p.add_argument("images", help="(N,H,W,3) u8 images NPY")
    p.add_argument("labels", help="(N,H,W,2) labels NPY")
    p.add_argument("--out", required=True, help="output directory (images.npy, labels.npy)")
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("loss-check", help="loss gradient self-test")
    p.set_defaults(fn=cmd_loss_check)
    return parser


def run(argv: list[str]) -> int:
    """Parse and execute; returns the process exit code."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        cfg = load_config(ns.config) if ns.config else CliConfig()
        return ns.fn(ns, cfg)
    except (ValueError, OSError) as exc:
        print(f"nucseg {ns.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
