import numpy as np
import pytest

from hetcd.synth import SynthConfig, generate, write_pair
from hetcd.raster import read_mask, read_raster


@pytest.mark.parametrize("style", ["optical", "sar_like"])
def test_deterministic(style):
    a = generate(SynthConfig(sensor_b_style=style, seed=4))
    b = generate(SynthConfig(sensor_b_style=style, seed=4))
    assert a.x == b.x and a.y == b.y
    np.testing.assert_array_equal(a.change_mask, b.change_mask)


@pytest.mark.parametrize("fraction", [0.02, 0.05, 0.1, 0.3])
def test_change_fraction(fraction):
    for seed in range(5):
        pair = generate(SynthConfig(change_fraction=fraction, seed=seed))
        assert pair.change_mask.mean() == pytest.approx(fraction, rel=0.2)


def test_channel_counts():
    pair = generate(SynthConfig())
    assert (pair.x.channels, pair.y.channels) == (7, 3)
    pair = generate(SynthConfig(channels_a=4, channels_b=10))
    assert (pair.x.channels, pair.y.channels) == (4, 10)


def test_unchanged_mask_keeps_distance_from_change():
    pair = generate(SynthConfig(seed=2))
    assert not (pair.unchanged_mask & pair.change_mask).any()
    rows, cols = np.nonzero(pair.change_mask)
    guard = pair.unchanged_mask[max(rows.min() - 2, 0):rows.max() + 3, max(cols.min() - 2, 0):cols.max() + 3]
    assert not guard.any()


def test_sar_like_is_positive():
    assert generate(SynthConfig(sensor_b_style="sar_like")).y.data.min() > 0


@pytest.mark.parametrize("bad", [dict(height=8), dict(change_fraction=0.0), dict(sensor_b_style="lidar"),
                                 dict(channels_b=0), dict(noise_sigma=-1.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_write_pair(tmp_path):
    pair = generate(SynthConfig(height=16, width=16))
    files = write_pair(pair, tmp_path)
    assert all(f.exists() for f in files)
    assert read_raster(tmp_path / "x.hcdr").shape == (16, 16, 7)
    np.testing.assert_array_equal(read_mask(tmp_path / "change_mask.hcdr"), pair.change_mask)
