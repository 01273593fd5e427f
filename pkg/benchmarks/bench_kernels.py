"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each row times one kernel (or one end-to-end operation with the backend
swapped in) and checks that both backends return identical results.
"""
import argparse
import contextlib
import timeit

import numpy as np

from sgmnet import _pykernels, kernels
from sgmnet.data import SynthConfig, synth_dataset
from sgmnet.losses import LossWeights
from sgmnet.metrics import conn_metric
from sgmnet.model import ModelConfig, build_params
from sgmnet.nn import SgdConfig
from sgmnet.train import make_batch, train_step

try:
    from sgmnet import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


@contextlib.contextmanager
def backend(impl):
    saved = kernels._impl
    kernels._impl = impl
    try:
        yield
    finally:
        kernels._impl = saved


def cases():
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((4, 32, 34, 34)).astype(np.float32)
    cols = kernels.im2col(xp, 3, 3, 1, 32, 32)
    mask = (rng.uniform(size=(256, 256)) < 0.55).astype(np.uint8)
    pred, gt = rng.uniform(size=(2, 64, 64))
    samples = synth_dataset(SynthConfig(seed=0, count=4, size=64))
    batch = make_batch(samples, dtype=np.float32)
    cfg = ModelConfig()

    def step():
        params = build_params(cfg, seed=0, dtype=np.float32)
        train_step(params, batch, cfg, SgdConfig(), LossWeights(), 0)
        return params["fusion.out.weight"].data

    return [
        ("im2col 4x32x34x34 k3", lambda: kernels.im2col(xp, 3, 3, 1, 32, 32)),
        ("col2im 4x288x1024", lambda: kernels.col2im(cols, 32, 34, 34, 3, 3, 1, 32, 32)),
        ("largest_component 256^2", lambda: kernels.largest_component(mask)),
        ("conn_metric 64^2", lambda: np.float64(conn_metric(pred, gt))),
        ("train_step batch 4 64^2", step),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    print(f"{'case':<28}{'cython ms':>12}{'python ms':>12}{'speedup':>10}  same")
    for name, fn in cases():
        results, times = [], []
        for impl in (_ckernels, _pykernels):
            with backend(impl):
                results.append(fn())
                times.append(min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3)
        same = np.array_equal(results[0], results[1])
        print(f"{name:<28}{times[0]:>12.2f}{times[1]:>12.2f}{times[1] / times[0]:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
