"""The compiled kernels and their numpy fallbacks must agree bit for bit."""

import subprocess
import sys

import numpy as np
import pytest

from hetcd import _pykernels, kernels

try:
    from hetcd import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


@needs_ext
@pytest.mark.parametrize("seed", range(10))
def test_knn_backends_agree(seed):
    rng = np.random.default_rng(seed)
    train = rng.integers(0, 5, size=(int(rng.integers(1, 300)), 3)).astype(float)
    queries = rng.integers(0, 5, size=(50, 3)).astype(float)
    k = int(rng.integers(1, train.shape[0] + 1))
    ci, cd = _ckernels.knn(train, queries, k)
    pi, pd = _pykernels.knn(train, queries, k)
    np.testing.assert_array_equal(ci, pi)
    assert cd.tobytes() == pd.tobytes()


@needs_ext
@pytest.mark.parametrize("seed", range(5))
def test_median_backends_agree(seed):
    rng = np.random.default_rng(seed)
    img = rng.normal(size=(int(rng.integers(1, 20)), int(rng.integers(1, 20))))
    assert _ckernels.median3(img).tobytes() == _pykernels.median3(img).tobytes()


@needs_ext
def test_forest_backends_agree(rng):
    from hetcd.regress.rf import RfHyper, rf_fit
    from conftest import random_set
    t = random_set(rng, 80, 3, 2)
    m = rf_fit(t, RfHyper(trees=16, min_leaf=2), seed=0)
    xs = rng.normal(size=(100, 3))
    args = (m.feature, m.threshold, m.left, m.right, m.value, m.roots, xs)
    assert _ckernels.forest_predict(*args).tobytes() == _pykernels.forest_predict(*args).tobytes()


def test_median_examples():
    np.testing.assert_array_equal(kernels.median3(np.full((4, 3), 2.5)), 2.5)
    spike = np.zeros((5, 5))
    spike[2, 2] = 9.0
    np.testing.assert_array_equal(kernels.median3(spike), 0.0)
    assert kernels.median3(np.arange(1.0, 10.0).reshape(3, 3))[1, 1] == 5.0


def test_median_even_window_takes_lower_middle():
    # corner window holds {1, 2, 3, 4}
    assert kernels.median3(np.array([[1.0, 2.0], [3.0, 4.0]]))[0, 0] == 2.0


def test_pure_python_switch():
    code = "import hetcd.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"HCD_PURE_PYTHON": "1", "PATH": ""},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
def test_pipeline_identical_across_backends():
    code = (
        "import hashlib;from hetcd.synth import SynthConfig, generate;from hetcd.raster import sample_mask;"
        "from hetcd.pipeline import run_pipeline;from hetcd.regress import RegressorSpec;"
        "p=generate(SynthConfig(height=32,width=32,seed=1));m=sample_mask(p.unchanged_mask,0.05,1);"
        "print(*[hashlib.sha256(run_pipeline(p.x,p.y,m,RegressorSpec(k,h)).score.tobytes()).hexdigest()"
        " for k,h in (('rf',{'trees':16}),('hpt',{'neighbours':8}))])"
    )
    import os
    outs = []
    for flag in ("0", "1"):
        env = {**os.environ, "HCD_PURE_PYTHON": flag}
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                   text=True, check=True).stdout)
    assert outs[0] == outs[1]
