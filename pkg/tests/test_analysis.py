import logging

import numpy as np
import pytest

from momentpic.analysis import (
    AnalysisError,
    anisotropy_index,
    analyze_series,
    compute_metrics,
    default_penalty,
    detect_change_points,
    differential_entropy,
    envelope_geometry,
    group_records,
    kl_divergence,
    metric_names,
    metrics_rows,
    normalize_pdf,
    pdf_moments,
)
from momentpic.compress import (
    GaussianMixture,
    HistogramGeometry,
    VelocityHistogram,
    reconstruct_pdf,
)
from tests.factories import GmmRecordFactory

WIDE = HistogramGeometry((64, 64, 64), (-6.0,) * 3, (6.0,) * 3)


def _gaussian(mean=(0.0, 0.0, 0.0), covariance=None) -> GaussianMixture:
    return GaussianMixture(
        weights=[1.0],
        means=[mean],
        covariances=[np.eye(3) if covariance is None else covariance],
    )


def _density(mixture, geometry=WIDE) -> VelocityHistogram:
    return normalize_pdf(reconstruct_pdf(mixture, geometry))


def test_normalised_density_integrates_to_one():
    density = _density(_gaussian())
    assert density.total_weight * WIDE.bin_volume == pytest.approx(1.0)
    with pytest.raises(AnalysisError):
        normalize_pdf(VelocityHistogram(np.zeros((2, 2, 2)), WIDE))


def test_entropy_of_unit_gaussian():
    entropy = differential_entropy(_density(_gaussian()))
    assert entropy == pytest.approx(1.5 * np.log(2 * np.pi * np.e), abs=0.02)


def test_moments_of_gaussian():
    covariance = np.diag([1.5, 1.0, 0.5])
    metrics = pdf_moments(_density(_gaussian((0.5, 0.0, -0.5), covariance)))
    assert np.allclose(metrics.mean, [0.5, 0.0, -0.5], atol=1e-3)
    assert np.allclose(metrics.covariance, covariance, atol=0.01)
    assert np.allclose(metrics.skewness, 0.0, atol=0.01)
    assert np.allclose(metrics.kurtosis, 0.0, atol=0.02)


@pytest.mark.parametrize(
    "covariance, expected",
    [
        (np.diag([4.0, 1.0, 1.0]), 4.0),
        (np.eye(3), 1.0),
        (np.diag([2.0, 2.0, 0.5]), 4.0),
    ],
)
def test_anisotropy(covariance, expected):
    assert anisotropy_index(covariance) == pytest.approx(expected)


def test_anisotropy_of_degenerate_covariance():
    assert np.isfinite(anisotropy_index(np.diag([1.0, 1.0, 0.0])))


def test_kl_divergence():
    p = _density(_gaussian())
    q = _density(_gaussian((1.0, 0.0, 0.0)))
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence(p, q) == pytest.approx(0.5, abs=0.01)

    coarse = _density(_gaussian(), HistogramGeometry((8, 8, 8), (-6.0,) * 3, (6.0,) * 3))
    with pytest.raises(AnalysisError):
        kl_divergence(p, coarse)


def test_compute_metrics():
    p = _density(_gaussian(covariance=np.diag([2.0, 1.0, 1.0])))
    metrics = compute_metrics(p)
    assert metrics.kl_from_previous is None
    assert metrics.anisotropy == pytest.approx(2.0, rel=0.01)
    assert compute_metrics(p, previous=p).kl_from_previous == 0.0


def _optimal_cost(values: np.ndarray, penalty: float) -> float:
    """Unpruned optimal partitioning"""
    n = len(values)

    def cost(a, b):
        segment = values[a:b]
        return float(np.sum((segment - segment.mean()) ** 2))

    best = [-penalty] + [np.inf] * n
    for end in range(1, n + 1):
        best[end] = min(best[start] + cost(start, end) + penalty for start in range(end))
    return best[n]


def test_change_points_match_exhaustive_search():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        levels = rng.choice([0.0, 1.0, 3.0], size=4)
        values = np.repeat(levels, rng.integers(2, 8, size=4))
        values = values + 0.5 * rng.normal(size=len(values))
        penalty = float(rng.uniform(0.5, 5.0))
        result = detect_change_points(values, penalty)
        total = sum(result.segment_costs) + penalty * len(result.indices)
        assert total == pytest.approx(_optimal_cost(values, penalty), rel=1e-9, abs=1e-9), seed
        assert result.indices == sorted(set(result.indices))


def test_single_step():
    result = detect_change_points([0.0] * 10 + [5.0] * 10)
    assert result.indices == [10]
    assert result.segment_costs == [0.0, 0.0]
    assert result.penalty == pytest.approx(default_penalty(np.array([0.0] * 10 + [5.0] * 10)))


def test_two_steps_recovered_exactly():
    series = [0.0] * 10 + [5.0] * 10 + [1.0] * 10
    result = detect_change_points(series)
    assert result.indices == [10, 20]
    assert result.segment_costs == pytest.approx([0.0, 0.0, 0.0], abs=1e-12)
    # total cost of the unsegmented series is 140, cheaper than any split
    assert detect_change_points(series, penalty=100.0).indices == []


def test_no_change_points():
    assert detect_change_points([2.0] * 8).indices == []
    result = detect_change_points([0.0, 0.0, 9.0, 9.0, 0.0], penalty=np.inf)
    assert result.indices == []
    assert len(result.segment_costs) == 1


@pytest.mark.parametrize("series", [[1.0, 2.0, 3.0], [1.0, np.nan, 2.0, 3.0]])
def test_change_point_errors(series):
    with pytest.raises(AnalysisError):
        detect_change_points(series)


def test_envelope_geometry():
    geometry = envelope_geometry([GmmRecordFactory(mixture=_gaussian())], bins=10)
    assert geometry.low == (-5.0, -5.0, -5.0)
    assert geometry.high == (5.0, 5.0, 5.0)
    assert geometry.bins == (10, 10, 10)


def _heating_records():
    """Isotropic for five cycles, then stretched along x"""
    return [
        GmmRecordFactory(
            species=1,
            region=0,
            cycle=cycle,
            mixture=_gaussian(
                covariance=np.eye(3) if cycle < 50 else np.diag([4.0, 1.0, 1.0])
            ),
        )
        for cycle in range(90, -1, -10)
    ]


def test_analyze_series_finds_heating():
    series = analyze_series(_heating_records(), bins=32)
    assert series.cycles == list(range(0, 100, 10))
    assert series.metrics[0].kl_from_previous is None
    assert series.metrics[5].kl_from_previous > 0.1
    assert series.change_points["anisotropy"].indices == [5]
    assert series.change_points["entropy"].indices == [5]


def test_analyze_series_kl_metric():
    series = analyze_series(_heating_records(), bins=16, change_point_metrics=("kl_prev",))
    assert list(series.change_points) == ["kl_prev"]


def test_analyze_series_errors(caplog):
    with pytest.raises(AnalysisError):
        analyze_series([])
    with pytest.raises(AnalysisError):
        analyze_series(_heating_records(), bins=8, change_point_metrics=("colour",))

    caplog.set_level(logging.INFO)
    short = analyze_series(_heating_records()[:3], bins=8)
    assert short.change_points == {}
    assert "skipping change points" in caplog.text


def test_group_records():
    records = [
        GmmRecordFactory(species=1, region=0),
        GmmRecordFactory(species=0, region=2),
        GmmRecordFactory(species=1, region=0),
    ]
    groups = group_records(records)
    assert list(groups) == [(0, 2), (1, 0)]
    assert len(groups[(1, 0)]) == 2


def test_metrics_rows():
    series = analyze_series(_heating_records()[:3], bins=8)
    rows = metrics_rows(series)
    assert len(metric_names()) == 18
    assert len(rows) == 3
    assert list(rows[0]) == ["cycle", "species", "region"] + metric_names()
    assert rows[0]["kl_prev"] == ""
    assert float(rows[1]["kl_prev"]) >= 0.0
    assert rows[2]["cycle"] == 90
