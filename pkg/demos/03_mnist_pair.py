"""Convolutional PAIR for MNIST deblurring, and the end-to-end comparison.

Needs MNIST IDX files in $PAIR_DATA_DIR. Without them, the script writes the
5,000-image subset bundled with mlxtend to ./data/mnist first.

    python demos/03_mnist_pair.py [--e2e]
"""

import os
import sys
import time

from pair import experiments as ex
from pair.datasets import MissingDataError, mnist_paths, write_mnist_subset

cfg = ex.load_config("preset:mnist_desk")
try:
    mnist_paths()
except MissingDataError:
    cfg["data"]["data_dir"] = str(write_mnist_subset("data/mnist"))
    print(f"using the mlxtend MNIST subset in {cfg['data']['data_dir']}")

data = ex.prepare_mnist(cfg)
print(f"train {data.X_train.shape[1]} / test {data.X_test.shape[1]} images, "
      f"blur {cfg['blur']['ksize']}x{cfg['blur']['ksize']} sigma {cfg['blur']['sigma']}")

t0 = time.perf_counter()
res = ex.run_mnist_pipeline(cfg, out="runs/mnist-demo", data=data)
print(f"trained both autoencoders in {time.perf_counter() - t0:.0f}s")
print(f"autoencoder loss x: {res['loss_x'][0]:.4f} -> {res['loss_x'][-1]:.4f}, "
      f"b: {res['loss_b'][0]:.4f} -> {res['loss_b'][-1]:.4f}")
print(f"mean relative error of d_x(M_dag e_b(b)) on the test set: {res['mean_error']:.4f}")

if "--e2e" in sys.argv:
    rows = ex.run_e2e_comparison(cfg, out="runs/mnist-demo", data=data, model=res["model"])
    print(f"{'J':>6} {'PAIR':>8} {'end-to-end':>11}")
    for r in rows:
        print(f"{r['J']:>6} {r['pair_error']:8.4f} {r['e2e_error']:11.4f}")
print("model saved to", os.path.join("runs/mnist-demo", "model"))
