"""Command-line entry point: ``glco synth|train|eval|infer|gradcheck|bench``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric-contract failure (non-finite values, failed gradient check).
"""

import argparse
import os
import sys
import time

from . import config as C
from .errors import CheckpointError, ConfigError, ContractError, DataError, DimensionError, NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

COMMANDS = ("synth", "train", "eval", "infer", "gradcheck", "bench")

DESCRIPTION = f"""\
Camouflaged-object segmentation toolkit.

Defaults reproduce the published training setup (channels 128, input 384,
batch 36, 180 epochs). --desk switches to the desk-scale preset
({", ".join(f"{k}={v}" for k, v in C.DESK_PRESET.items())}), which is
NOT the published configuration but trains on one CPU core in minutes.
"""


def build_parser():
    p = argparse.ArgumentParser(prog="glco", description=DESCRIPTION,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value file (# starts a comment)")
    p.add_argument("--seed", type=int, help="override the seed key")
    p.add_argument("--out", help="override out_dir")
    p.add_argument("--desk", action="store_true", help="apply the desk-scale preset before the config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    return p


def resolve_config(args):
    cfg = C.desk() if args.desk else C.DEFAULTS
    if args.config:
        cfg = C.load(args.config, cfg)
    pairs = []
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    if args.seed is not None:
        pairs.append(("seed", str(args.seed)))
    if args.out is not None:
        # synth produces a dataset, so --out names the data directory there
        pairs.append(("data_dir" if args.command == "synth" else "out_dir", args.out))
    return C.parse_pairs(pairs, cfg)


def _threads():
    value = os.environ.get("GLCO_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"GLCO_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError("GLCO_THREADS must be >= 1")
    return n


def cmd_synth(cfg, out):
    from .synth import generate

    files = generate(cfg.synth_spec(), cfg.data_dir, workers=_threads() or 1)
    out(f"wrote {len(files)} files to {cfg.data_dir}")


def cmd_train(cfg, out):
    from .train import mean_s_measure, load_dataset, train

    images, masks = load_dataset(cfg.data_dir, cfg.input_size, cfg.dtype)
    net, history = train(cfg, images, masks, log=out)
    s = mean_s_measure(net, images, masks)
    out(f"final loss {history[-1]['total']:.4f}  train S_m {s:.4f}" if history else "no steps run")
    out(f"checkpoint {os.path.join(cfg.out_dir, 'final.tnar')}")


def cmd_eval(cfg, out):
    from .metrics import METRIC_NAMES, evaluate_directory

    if not cfg.pred_dir or not cfg.gt_dir:
        raise ConfigError("eval needs pred_dir and gt_dir")
    rows, means, _ = evaluate_directory(cfg.pred_dir, cfg.gt_dir, cfg.out_dir)
    out(f"{len(rows)} images  " + "  ".join(f"{k} {means[k]:.4f}" for k in METRIC_NAMES))
    out(f"reports in {cfg.out_dir}")


def cmd_infer(cfg, out):
    from .train import build_model, infer_file, load_weights

    if not cfg.checkpoint or not cfg.image:
        raise ConfigError("infer needs checkpoint and image")
    net = build_model(cfg)
    load_weights(net, cfg.checkpoint)
    stem = os.path.splitext(os.path.basename(cfg.image))[0]
    target = os.path.join(cfg.out_dir, stem + "_mask.pgm")
    for path in infer_file(net, cfg.image, target, cfg.input_size, cfg.dump_levels):
        out(f"wrote {path}")


def cmd_gradcheck(cfg, out):
    from .battery import THRESHOLD, run_battery

    results = run_battery(seed=cfg.seed, log=out)
    worst = max(r.max_error for r in results)
    out(f"worst {worst:.3e} over {len(results)} components (threshold {THRESHOLD:g})")
    if worst >= THRESHOLD:
        raise ContractError("gradient check failed")


def cmd_bench(cfg, out):
    import numpy as np

    from .objective import total_loss
    from .train import build_model

    rng = np.random.default_rng(cfg.seed)
    n = cfg.input_size
    x = rng.normal(size=(cfg.batch, 3, n, n)).astype(cfg.dtype)
    g = np.zeros((cfg.batch, 1, n, n), dtype=cfg.dtype)
    g[..., n // 4:3 * n // 4, n // 4:3 * n // 4] = 1
    net = build_model(cfg)
    out(f"parameters {net.num_parameters()}  batch {cfg.batch}  input {n}x{n}  float{cfg.precision}")
    for i in range(cfg.bench_steps):
        t0 = time.perf_counter()
        loss = total_loss(net(x), g).total
        t1 = time.perf_counter()
        loss.backward()
        t2 = time.perf_counter()
        out(f"step {i + 1}: forward {t1 - t0:.3f}s  backward {t2 - t1:.3f}s")


HANDLERS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    def out(msg):
        print(msg, flush=True)

    try:
        cfg = resolve_config(args)
        threads = _threads()
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                HANDLERS[args.command](cfg, out)
        else:
            HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"glco: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"glco: {exc}", file=sys.stderr)
        for line in exc.mismatches:
            print(f"  {line}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, DimensionError) as exc:
        print(f"glco: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, ContractError) as exc:
        print(f"glco: numeric contract failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
