"""Dataset loading, the training loop, checkpoints, and mask inference."""

import csv
import glob
import os
import time

import numpy as np

from . import kernels as K
from .decoder import GLCONet, OUTPUT_LEVELS
from .errors import DataError
from .imageio import quantize, read_pnm, write_pnm
from .metrics import s_measure
from .objective import Adam, total_loss, step_decay
from .serialize import load_archive, save_archive
from .tensor import finite_policy, no_grad

LOG_HEADER = (["epoch", "lr", "total"] + [f"bce{i}" for i in OUTPUT_LEVELS]
              + [f"iou{i}" for i in OUTPUT_LEVELS])


def normalize_image(rgb, dtype=np.float64):
    """uint8 (H, W, 3) -> (3, H, W) scaled to roughly [-1, 1]."""
    x = np.asarray(rgb, dtype=np.float64).transpose(2, 0, 1) / 255.0
    return ((x - 0.5) / 0.5).astype(dtype)


def _resize_to(arr, size):
    return arr if arr.shape[-2:] == (size, size) else K.resize_array(arr, (size, size))


def load_dataset(data_dir, size, dtype=np.float64):
    """Read every ``img_*.ppm`` / ``gt_*.pgm`` pair, resized to ``size``.

    Returns images (n, 3, size, size) and binary masks (n, 1, size, size).
    """
    if size % 32:
        raise DataError(f"input_size {size} must be divisible by 32")
    imgs = sorted(glob.glob(os.path.join(data_dir, "img_*.ppm")))
    if not imgs:
        raise DataError(f"no img_*.ppm files in {data_dir}")
    xs, gs = [], []
    for path in imgs:
        gt_path = os.path.join(data_dir, "gt_" + os.path.basename(path)[4:-4] + ".pgm")
        if not os.path.exists(gt_path):
            raise DataError(f"mask missing for {path} (expected {gt_path})")
        rgb = read_pnm(path)
        gt = read_pnm(gt_path)
        if rgb.ndim != 3 or gt.ndim != 2 or rgb.shape[:2] != gt.shape:
            raise DataError(f"{path} and {gt_path} have incompatible shapes")
        xs.append(_resize_to(normalize_image(rgb), size))
        gs.append(_resize_to(gt.astype(np.float64) / gt.max(initial=1), size)[None] >= 0.5)
    return np.stack(xs).astype(dtype), np.stack(gs).astype(dtype)


def build_model(cfg):
    return GLCONet(cfg.model_config(), seed=cfg.seed)


def checkpoint_arrays(net, optim=None, epoch=0, step=0):
    arrays = dict(net.state_dict())
    if optim is not None:
        arrays.update(optim.state_arrays())
    arrays["meta.epoch"] = np.array(float(epoch))
    arrays["meta.step"] = np.array(float(step))
    return arrays


def split_checkpoint(arrays):
    params = {k: v for k, v in arrays.items() if not k.startswith(("optim.", "meta."))}
    optim = {k: v for k, v in arrays.items() if k.startswith("optim.")}
    meta = {k[5:]: int(v) for k, v in arrays.items() if k.startswith("meta.")}
    return params, optim, meta


def load_weights(net, path):
    """Load a checkpoint into ``net`` after validating every name and shape."""
    try:
        arrays = load_archive(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    params, optim, meta = split_checkpoint(arrays)
    net.load_state_dict(params)
    return optim, meta


def _batches(order, size):
    return [order[i:i + size] for i in range(0, len(order), size)]


def _augment(x, g, rng):
    flip = rng.random(len(x)) < 0.5
    if flip.any():
        x, g = x.copy(), g.copy()
        x[flip] = x[flip][..., ::-1]
        g[flip] = g[flip][..., ::-1]
    return x, g


def train(cfg, images=None, masks=None, log=print):
    """Run the Adam loop; returns ``(net, history)``.

    ``history`` holds one dict per epoch with the logged losses; steps whose
    loss came out non-finite are counted under ``skipped`` and not applied.
    Checkpoints (weights, optimiser moments, epoch) go to ``cfg.out_dir``:
    ``last.tnar`` after every epoch, ``final.tnar`` at the end.
    """
    if images is None:
        images, masks = load_dataset(cfg.data_dir, cfg.input_size, cfg.dtype)
    n = len(images)
    net = build_model(cfg)
    params = net.parameters()
    optim = Adam(params, lr=cfg.lr)
    start_epoch, step = 0, 0
    if cfg.resume:
        arrays, meta = load_weights(net, cfg.resume)
        optim.load_state_arrays(arrays)
        start_epoch, step = meta.get("epoch", 0), meta.get("step", 0)
    os.makedirs(cfg.out_dir, exist_ok=True)
    log_path = os.path.join(cfg.out_dir, "train_log.csv")
    if not cfg.resume or not os.path.exists(log_path):
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_HEADER)
    history = []
    for epoch in range(start_epoch, cfg.epochs):
        if cfg.max_steps and step >= cfg.max_steps:
            break
        optim.lr = step_decay(epoch, cfg.lr, cfg.decay_factor, cfg.decay_every)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        rows, skipped = [], 0
        t0 = time.perf_counter()
        for b, idx in enumerate(_batches(order, cfg.batch)):
            x, g = images[idx], masks[idx]
            if cfg.hflip:
                x, g = _augment(x, g, np.random.default_rng([cfg.seed, epoch, b]))
            # non-finite values are reported, not raised, while training
            with finite_policy("warn"), np.errstate(all="ignore"):
                report = total_loss(net(x), g)
                for p in params:
                    p.grad = None
                report.total.backward()
            step += 1
            finite = np.isfinite(report.total.data) and all(
                p.grad is None or np.isfinite(p.grad).all() for p in params)
            if finite:
                optim.step()
                rows.append(report.as_row())
            else:
                skipped += 1
                if log is not None:
                    log(f"step {step}: non-finite loss or gradient, update skipped")
            if cfg.max_steps and step >= cfg.max_steps:
                break
        mean = np.mean(rows, axis=0) if rows else np.full(1 + 2 * len(OUTPUT_LEVELS), np.nan)
        entry = {"epoch": epoch + 1, "lr": optim.lr, "total": mean[0], "steps": step,
                 "skipped": skipped, "seconds": time.perf_counter() - t0}
        for k, i in enumerate(OUTPUT_LEVELS):
            entry[f"bce{i}"] = mean[1 + k]
            entry[f"iou{i}"] = mean[1 + len(OUTPUT_LEVELS) + k]
        history.append(entry)
        with open(log_path, "a", newline="") as fh:
            csv.writer(fh).writerow([epoch + 1] + [repr(float(entry[h])) for h in LOG_HEADER[1:]])
        arrays = checkpoint_arrays(net, optim, epoch + 1, step)
        save_archive(os.path.join(cfg.out_dir, "last.tnar"), arrays)
        if cfg.keep_epoch_checkpoints:
            save_archive(os.path.join(cfg.out_dir, f"epoch_{epoch + 1:04d}.tnar"), arrays)
        if log is not None:
            log(f"epoch {epoch + 1:4d}  lr {optim.lr:.2e}  loss {entry['total']:.4f}  "
                f"({entry['seconds']:.1f}s)")
    save_archive(os.path.join(cfg.out_dir, "final.tnar"),
                 checkpoint_arrays(net, optim, history[-1]["epoch"] if history else start_epoch, step))
    return net, history


def predict_batches(net, images, batch=8):
    return np.concatenate([net.predict(images[i:i + batch]) for i in range(0, len(images), batch)])


def mean_s_measure(net, images, masks, batch=8):
    """Average S-measure of the network's predictions against ``masks``."""
    preds = predict_batches(net, images, batch)
    return float(np.mean([s_measure(p, m[0]) for p, m in zip(preds, masks)]))


def infer_file(net, image_path, out_path, size, dump_levels=False):
    """Write sigmoid(up(D2)) for one PPM image as an 8-bit PGM at the image's own extent."""
    rgb = read_pnm(image_path)
    if rgb.ndim != 3:
        raise DataError(f"{image_path}: expected an RGB (P6) image")
    dtype = net.cfg.dtype
    x = _resize_to(normalize_image(rgb), size)[None].astype(dtype)
    with no_grad():
        out = net(x)
        prob = K.sigmoid(K.upsample_bilinear(out[2], rgb.shape[:2])).data[0, 0]
    write_pnm(out_path, quantize(prob))
    written = [out_path]
    if dump_levels:
        stem = os.path.splitext(out_path)[0]
        for i in OUTPUT_LEVELS:
            path = f"{stem}_d{i}.pgm"
            write_pnm(path, quantize(K.sigmoid(out[i]).data[0, 0]))
            written.append(path)
    return written

