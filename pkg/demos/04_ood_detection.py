"""Out-of-distribution detection with the five PAIR metrics.

Reuses the model trained by 03_mnist_pair.py (runs/mnist-demo/model) and
scores MNIST test digits against synthetic typed letters.

    python demos/04_ood_detection.py
"""

import numpy as np

from pair import experiments as ex
from pair.datasets import MissingDataError, mnist_paths
from pair.metrics import LATENT_METRICS, METRIC_NAMES

cfg = ex.load_config("preset:mnist_desk")
try:
    mnist_paths()
except MissingDataError:
    cfg["data"]["data_dir"] = "data/mnist"
cfg["model_dir"] = "runs/mnist-demo/model"

res = ex.run_ood_experiment(cfg, out="runs/ood-demo")
print(f"{'metric':>14} {'median in':>10} {'median out':>11} {'AUROC':>7} {'null':>6}")
for row in res["auroc"]:
    k = row["metric"]
    med_in = np.nanmedian(res["metrics"]["in"][k])
    med_out = np.nanmedian(res["metrics"]["out"][k])
    print(f"{k:>14} {med_in:10.4f} {med_out:11.4f} {row['auroc']:7.3f} {row['null_auroc']:6.3f}")
for f in res["flags"]:
    print(f"{f['set']:>3}: {100 * f['flagged_fraction']:.1f}% flagged "
          f"(a latent metric above the {cfg['ood']['threshold']:.0f}th training percentile)")
print("latent metrics:", ", ".join(LATENT_METRICS), "of", len(METRIC_NAMES))
