"""Statistics of reconstructed velocity distributions and change points in
their time series
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import ruptures as rpt
from scipy.special import entr, rel_entr

from momentpic.compress import (
    GmmRecord,
    HistogramGeometry,
    VelocityHistogram,
    reconstruct_pdf,
)
from momentpic.exceptions import MomentPICException

logger = logging.getLogger(__name__)

KL_FLOOR = 1e-300
ANISOTROPY_FLOOR = 1e-300
ENVELOPE_SIGMAS = 5.0
AXES = "xyz"
COVARIANCE_COLUMNS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass
class DistributionMetrics:
    mean: np.ndarray
    covariance: np.ndarray
    skewness: np.ndarray
    kurtosis: np.ndarray
    anisotropy: float = 1.0
    entropy: float = 0.0
    kl_from_previous: Optional[float] = None


@dataclass
class ChangePointResult:
    """Segment start indices (0 excluded), cost of every segment and the
    penalty per change point that was used
    """

    indices: List[int]
    segment_costs: List[float]
    penalty: float


@dataclass
class SeriesMetrics:
    """Metrics of all records of one (species, region), ordered by cycle"""

    species: int
    region: int
    cycles: List[int]
    metrics: List[DistributionMetrics]
    geometry: HistogramGeometry
    change_points: Dict[str, ChangePointResult] = field(default_factory=dict)


def normalize_pdf(hist: VelocityHistogram) -> VelocityHistogram:
    """Density whose sum times the bin volume is 1

    Raises
    ------
    AnalysisError
        If the histogram holds no weight
    """
    total = hist.total_weight
    if not total > 0:
        raise AnalysisError("Cannot normalise a histogram with zero total weight")
    return VelocityHistogram(
        counts=hist.counts / (total * hist.geometry.bin_volume),
        geometry=hist.geometry,
        clipped_weight=hist.clipped_weight,
    )


def _quadrature_weights(p: VelocityHistogram) -> np.ndarray:
    return (p.counts * p.geometry.bin_volume).reshape(-1)


def pdf_moments(p: VelocityHistogram) -> DistributionMetrics:
    """Mean, covariance, per-axis skewness and excess kurtosis of a density"""
    weights = _quadrature_weights(p)
    centres = p.geometry.centers().reshape(-1, 3)
    mean = weights @ centres
    centred = centres - mean
    covariance = np.einsum("k,ki,kj->ij", weights, centred, centred)
    variance = np.diag(covariance)
    third = weights @ centred ** 3
    fourth = weights @ centred ** 4
    with np.errstate(divide="ignore", invalid="ignore"):
        skewness = np.where(variance > 0, third / variance ** 1.5, 0.0)
        kurtosis = np.where(variance > 0, fourth / variance ** 2 - 3.0, 0.0)
    return DistributionMetrics(
        mean=mean, covariance=covariance, skewness=skewness, kurtosis=kurtosis
    )


def anisotropy_index(covariance: np.ndarray) -> float:
    """Largest over smallest covariance eigenvalue, at least 1"""
    eigenvalues = np.linalg.eigvalsh(np.asarray(covariance, dtype=float))
    ratio = eigenvalues[-1] / max(eigenvalues[0], ANISOTROPY_FLOOR)
    return float(max(ratio, 1.0))


def differential_entropy(p: VelocityHistogram) -> float:
    """-sum p log p dV in nats, 0 log 0 = 0"""
    return float(np.sum(entr(p.counts)) * p.geometry.bin_volume)


def kl_divergence(p: VelocityHistogram, q: VelocityHistogram) -> float:
    """sum p log(p / q) dV, q floored where it vanishes

    Raises
    ------
    AnalysisError
        If the geometries differ
    """
    if p.geometry != q.geometry or p.counts.shape != q.counts.shape:
        raise AnalysisError(f"Geometries differ: {p.geometry} vs {q.geometry}")
    divergence = np.sum(rel_entr(p.counts, np.maximum(q.counts, KL_FLOOR)))
    return float(max(divergence * p.geometry.bin_volume, 0.0))


def compute_metrics(
    p: VelocityHistogram, previous: Optional[VelocityHistogram] = None
) -> DistributionMetrics:
    """All descriptors of a normalised density"""
    metrics = pdf_moments(p)
    metrics.anisotropy = anisotropy_index(metrics.covariance)
    metrics.entropy = differential_entropy(p)
    if previous is not None:
        metrics.kl_from_previous = kl_divergence(p, previous)
    return metrics


def default_penalty(series: np.ndarray) -> float:
    """3 sigma^2 ln n, sigma^2 estimated from first differences so that level
    shifts do not inflate it
    """
    series = np.asarray(series, dtype=float)
    variance = float(np.var(np.diff(series))) / 2
    if not variance > 0:
        variance = float(np.var(series))
    if not variance > 0:
        variance = 1.0
    return 3.0 * variance * np.log(len(series))


def _segment_cost_function(series: np.ndarray):
    sums = np.concatenate([[0.0], np.cumsum(series)])
    squares = np.concatenate([[0.0], np.cumsum(series * series)])

    def cost(start, end):
        """L2 cost of series[start:end], start may be an array"""
        length = end - np.asarray(start)
        total = sums[end] - sums[start]
        value = squares[end] - squares[start] - total * total / length
        return np.maximum(value, 0.0)

    return cost


def detect_change_points(
    series: Sequence[float], penalty: Optional[float] = None
) -> ChangePointResult:
    """Exact penalised segmentation with piecewise constant L2 cost, found by
    ruptures' PELT search

    Parameters
    ----------
    series: Sequence[float]
        at least 4 values
    penalty: float, optional
        cost per change point. Defaults to default_penalty(series). An
        infinite penalty gives no change points

    Raises
    ------
    AnalysisError
        For fewer than 4 values or non-finite values

    Returns
    -------
    ChangePointResult
    """
    values = np.asarray(series, dtype=float)
    n = len(values)
    if n < 4:
        raise AnalysisError(f"Need at least 4 values for change points, got {n}")
    if not np.all(np.isfinite(values)):
        raise AnalysisError("Series holds non-finite values")
    if penalty is None:
        penalty = default_penalty(values)
    cost = _segment_cost_function(values)
    if not np.isfinite(penalty):
        return ChangePointResult(indices=[], segment_costs=[float(cost(0, n))], penalty=penalty)

    search = rpt.Pelt(model="l2", min_size=1, jump=1).fit(values.reshape(-1, 1))
    ends = search.predict(pen=float(penalty))
    # the last segment end is always n
    indices = [int(end) for end in ends[:-1]]
    bounds = [0] + indices + [n]
    return ChangePointResult(
        indices=indices,
        segment_costs=[float(cost(a, b)) for a, b in zip(bounds[:-1], bounds[1:])],
        penalty=float(penalty),
    )


def envelope_geometry(records: Sequence[GmmRecord], bins: int) -> HistogramGeometry:
    """Grid covering 5 sigma around every component of every record"""
    means = np.concatenate([r.mixture.means for r in records])
    spreads = np.concatenate(
        [
            np.sqrt(np.diagonal(r.mixture.covariances, axis1=1, axis2=2))
            for r in records
        ]
    )
    low = np.min(means - ENVELOPE_SIGMAS * spreads, axis=0)
    high = np.max(means + ENVELOPE_SIGMAS * spreads, axis=0)
    return HistogramGeometry((bins,) * 3, tuple(low), tuple(high))


def analyze_series(
    records: Sequence[GmmRecord],
    bins: int = 32,
    penalty: Optional[float] = None,
    change_point_metrics: Sequence[str] = ("anisotropy", "entropy"),
) -> SeriesMetrics:
    """Metrics of every record of one (species, region), on one shared grid,
    plus change points of the requested metrics when there are enough records
    """
    if not records:
        raise AnalysisError("No records to analyse")
    ordered = sorted(records, key=lambda r: r.cycle)
    geometry = envelope_geometry(ordered, bins)
    metrics = []
    previous = None
    for record in ordered:
        density = normalize_pdf(reconstruct_pdf(record.mixture, geometry))
        metrics.append(compute_metrics(density, previous))
        previous = density

    result = SeriesMetrics(
        species=ordered[0].species,
        region=ordered[0].region,
        cycles=[r.cycle for r in ordered],
        metrics=metrics,
        geometry=geometry,
    )
    if len(ordered) >= 4:
        columns = metric_columns(result)
        for name in change_point_metrics:
            if name not in columns:
                raise AnalysisError(f"Unknown metric '{name}'")
            series = columns[name]
            if name == "kl_prev":
                series = series[1:]
                if len(series) < 4:
                    continue
            result.change_points[name] = detect_change_points(series, penalty)
    else:
        logger.info(
            f"Species {result.species} region {result.region}: only "
            f"{len(ordered)} records, skipping change points"
        )
    return result


def group_records(records: Sequence[GmmRecord]) -> Dict[Tuple[int, int], List[GmmRecord]]:
    groups = defaultdict(list)
    for record in records:
        groups[(record.species, record.region)].append(record)
    return dict(sorted(groups.items()))


def metric_columns(series: SeriesMetrics) -> Dict[str, List[float]]:
    """Every metric of a series as a named column, in metrics CSV order"""
    columns: Dict[str, List[float]] = {}
    for axis, name in enumerate(AXES):
        columns[f"mean_{name}"] = [float(m.mean[axis]) for m in series.metrics]
    for i, j in COVARIANCE_COLUMNS:
        columns[f"var_{AXES[i]}{AXES[j]}"] = [
            float(m.covariance[i, j]) for m in series.metrics
        ]
    for axis, name in enumerate(AXES):
        columns[f"skew_{name}"] = [float(m.skewness[axis]) for m in series.metrics]
    for axis, name in enumerate(AXES):
        columns[f"kurt_{name}"] = [float(m.kurtosis[axis]) for m in series.metrics]
    columns["anisotropy"] = [m.anisotropy for m in series.metrics]
    columns["entropy"] = [m.entropy for m in series.metrics]
    columns["kl_prev"] = [
        m.kl_from_previous if m.kl_from_previous is not None else float("nan")
        for m in series.metrics
    ]
    return columns


def metric_names() -> List[str]:
    return (
        [f"mean_{a}" for a in AXES]
        + [f"var_{AXES[i]}{AXES[j]}" for i, j in COVARIANCE_COLUMNS]
        + [f"skew_{a}" for a in AXES]
        + [f"kurt_{a}" for a in AXES]
        + ["anisotropy", "entropy", "kl_prev"]
    )


def metrics_rows(series: SeriesMetrics) -> List[dict]:
    """Rows for the metrics CSV, kl_prev empty for the first record"""
    columns = metric_columns(series)
    rows = []
    for k, cycle in enumerate(series.cycles):
        row = {"cycle": cycle, "species": series.species, "region": series.region}
        for name in metric_names():
            value = columns[name][k]
            row[name] = "" if name == "kl_prev" and k == 0 else repr(value)
        rows.append(row)
    return rows


class AnalysisError(MomentPICException):
    pass
