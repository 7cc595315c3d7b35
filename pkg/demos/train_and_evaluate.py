"""End-to-end at desk scale: synthesise data, train, predict masks, evaluate.

Uses the library API; the same flow through the CLI is

    glco synth --desk --out data --set synth_count=8
    glco train --desk --out run --set data_dir=data --set max_steps=150
    glco infer --desk --out preds --set checkpoint=run/final.tnar --set image=data/img_0000.ppm
    glco eval  --out report --set pred_dir=preds --set gt_dir=masks

Run: python demos/train_and_evaluate.py [workdir]   (about two minutes on one core)
"""

import os
import sys
import tempfile

import numpy as np

from glco import config as C
from glco.imageio import quantize, write_pnm
from glco.metrics import METRIC_NAMES, evaluate_directory
from glco.synth import generate
from glco.train import load_dataset, predict_batches, train

work = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="glco-demo-")
cfg = C.desk().with_values(synth_count=8, batch=8, max_steps=150, epochs=1000, hflip=False,
                           data_dir=os.path.join(work, "data"), out_dir=os.path.join(work, "run"))
print("desk preset (not the published configuration):", C.DESK_PRESET)

generate(cfg.synth_spec(), cfg.data_dir)
images, masks = load_dataset(cfg.data_dir, cfg.input_size, cfg.dtype)
net, history = train(cfg, images, masks, log=lambda m: None)
for h in history[::max(1, len(history) // 6)] + [history[-1]]:
    print(f"epoch {h['epoch']:3d}  step {h['steps']:3d}  total loss {h['total']:.4f}")

pred_dir, gt_dir = os.path.join(work, "preds"), os.path.join(work, "masks")
for i, (p, g) in enumerate(zip(predict_batches(net, images), masks)):
    write_pnm(os.path.join(pred_dir, f"{i}.pgm"), quantize(p))
    write_pnm(os.path.join(gt_dir, f"{i}.pgm"), (g[0] * 255).astype(np.uint8))
rows, means, _ = evaluate_directory(pred_dir, gt_dir, os.path.join(work, "report"))
print("training-set means: " + "  ".join(f"{k} {means[k]:.4f}" for k in METRIC_NAMES))
print(f"artifacts in {work}")
