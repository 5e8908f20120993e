import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphmoe.synth import AnomalySpec, GenConfig, GenConfigError, default_config, generate


def test_no_anomalies_means_no_labels():
    s = generate(GenConfig(K=3, length=100, seed=1))
    assert s.labels.sum() == 0
    assert s.values.shape == (3, 100)


def test_same_seed_is_bitwise_identical():
    a = generate(default_config(seed=4))
    b = generate(default_config(seed=4))
    assert a.values.tobytes() == b.values.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)


def test_different_seed_differs():
    assert not np.array_equal(generate(default_config(seed=1)).values, generate(default_config(seed=2)).values)


def test_spike_shows_up_against_clean_regeneration():
    noise = 0.1
    spike = AnomalySpec("spike", 100, 1, 8 * noise, (0,))
    cfg = GenConfig(K=2, length=300, seed=7, noise_std=noise, anomalies=[spike])
    clean = generate(dataclasses.replace(cfg, anomalies=[]))
    dirty = generate(cfg)
    assert abs(dirty.values[0, 100] - clean.values[0, 100]) >= 6 * noise
    # nothing else moves
    diff = np.abs(dirty.values - clean.values)
    diff[0, 100] = 0.0
    assert diff.max() == 0.0
    assert dirty.labels.sum() == 1 and dirty.labels[100] == 1


def test_identity_coupling_zero_noise_is_pure_sinusoid():
    base = [(1 / 30, 1.3, 0.2), (1 / 45, 0.7, 1.0)]
    s = generate(GenConfig(K=2, length=500, seed=0, base=base, noise_std=0.0))
    t = np.arange(500)
    for k, (f, a, ph) in enumerate(base):
        assert np.max(np.abs(s.values[k] - a * np.sin(2 * np.pi * f * t + ph))) < 1e-12


def test_conflicting_overlap_rejected():
    anomalies = [AnomalySpec("spike", 10, 5, 1.0, (0,)), AnomalySpec("level-shift", 12, 5, 1.0, (0, 1))]
    with pytest.raises(GenConfigError, match="overlaps"):
        generate(GenConfig(K=2, length=50, anomalies=anomalies))


def test_same_kind_overlap_or_other_entity_allowed():
    anomalies = [AnomalySpec("spike", 10, 5, 1.0, (0,)), AnomalySpec("level-shift", 12, 5, 1.0, (1,))]
    s = generate(GenConfig(K=2, length=50, anomalies=anomalies))
    assert s.labels.sum() == 7  # union of [10, 15) and [12, 17)


def test_invalid_specs():
    with pytest.raises(GenConfigError):
        AnomalySpec("drift", 0, 1, 1.0, (0,))
    with pytest.raises(GenConfigError):
        AnomalySpec("spike", 0, 0, 1.0, (0,))
    with pytest.raises(GenConfigError):
        AnomalySpec("spike", 0, 1, float("inf"), (0,))
    with pytest.raises(GenConfigError):
        GenConfig(K=2, length=10, anomalies=[AnomalySpec("spike", 8, 5, 1.0, (0,))])
    with pytest.raises(GenConfigError):
        GenConfig(K=2, length=10, anomalies=[AnomalySpec("spike", 0, 1, 1.0, (2,))])
    with pytest.raises(GenConfigError):
        GenConfig(K=2, length=10, coupling=np.full((2, 2), np.nan))


def test_correlation_break_replaces_signal():
    cfg = GenConfig(K=2, length=200, seed=3, coupling=[[1.0, 0.5], [0.5, 1.0]],
                    anomalies=[AnomalySpec("correlation-break", 50, 40, 1.0, (1,))])
    dirty = generate(cfg)
    clean = generate(dataclasses.replace(cfg, anomalies=[]))
    assert not np.allclose(dirty.values[1, 50:90], clean.values[1, 50:90])
    np.testing.assert_array_equal(dirty.values[0], clean.values[0])


def test_default_config_covers_four_percent():
    s = generate(default_config(seed=0))
    assert s.values.shape == (5, 4000)
    assert s.labels.mean() == 0.04


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_label_fraction_is_sum_of_disjoint_lengths(seed):
    cfg = default_config(seed=seed, length=2000)
    s = generate(cfg)
    assert s.labels.sum() == sum(a.length for a in cfg.anomalies)
