"""Compressing velocity distributions into Gaussian mixtures

Particles of a region are binned on a regular 3D velocity grid. A Gaussian
mixture is fitted to the occupied bin centres by weighted EM, and mixtures
are stored in a compact binary archive.

Notes
-----
Archive layout, little-endian::

    "GMMA"  u32 version  u32 record count
    per record: u32 species, u32 region, u32 cycle, u32 M,
                M x (f64 alpha, 3 x f64 mean, 6 x f64 covariance upper triangle)
"""
import logging
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, rel_entr
from scipy.stats import multivariate_normal

from momentpic.core import CompressParams, ParticleSet, RangeMode, SimState
from momentpic.exceptions import MomentPICException

logger = logging.getLogger(__name__)

ARCHIVE_MAGIC = b"GMMA"
ARCHIVE_VERSION = 1
ARCHIVE_HEADER = struct.Struct("<4sII")
RECORD_HEADER = struct.Struct("<IIII")
VALUES_PER_COMPONENT = 10
UPPER_TRIANGLE = np.triu_indices(3)
PARTICLE_BYTES = 6 * 8  # three position and three velocity float64 values
DATA_RANGE_PADDING = 0.05


@dataclass(frozen=True)
class HistogramGeometry:
    """Regular velocity grid: bins per axis and the range they cover"""

    bins: Tuple[int, int, int]
    low: Tuple[float, float, float]
    high: Tuple[float, float, float]

    @property
    def widths(self) -> np.ndarray:
        return (np.array(self.high) - np.array(self.low)) / np.array(self.bins)

    @property
    def bin_volume(self) -> float:
        return float(np.prod(self.widths))

    def edges(self) -> List[np.ndarray]:
        return [
            np.linspace(lo, hi, n + 1)
            for lo, hi, n in zip(self.low, self.high, self.bins)
        ]

    def axis_centers(self) -> List[np.ndarray]:
        return [
            lo + (np.arange(n) + 0.5) * w
            for lo, n, w in zip(self.low, self.bins, self.widths)
        ]

    def centers(self) -> np.ndarray:
        """(b0, b1, b2, 3) bin centre velocities"""
        return np.stack(np.meshgrid(*self.axis_centers(), indexing="ij"), axis=-1)


@dataclass
class VelocityHistogram:
    """Weighted counts on a velocity grid

    clipped_weight is the weight of particles outside the range, which were
    counted in the nearest edge bin
    """

    counts: np.ndarray
    geometry: HistogramGeometry
    clipped_weight: float = 0.0

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.counts))

    def check_same_geometry(self, other: "VelocityHistogram"):
        if self.geometry != other.geometry or self.counts.shape != other.counts.shape:
            raise CompressionError(
                f"Histogram geometries differ: {self.geometry} vs {other.geometry}"
            )

    def mean(self) -> np.ndarray:
        weights = self.counts / self.total_weight
        return np.einsum("ijk,ijkl->l", weights, self.geometry.centers())

    def covariance(self) -> np.ndarray:
        weights = (self.counts / self.total_weight).reshape(-1)
        centred = self.geometry.centers().reshape(-1, 3) - self.mean()
        return np.einsum("k,ki,kj->ij", weights, centred, centred)


@dataclass
class GaussianMixture:
    """sum_i alpha_i N(mu_i, Sigma_i)"""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.means = np.asarray(self.means, dtype=float).reshape(-1, 3)
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(-1, 3, 3)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def __eq__(self, other):
        if not isinstance(other, GaussianMixture):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.covariances, other.covariances)
        )

    def pack(self) -> np.ndarray:
        """(M, 10) rows of alpha, mean, covariance upper triangle"""
        upper = self.covariances[:, UPPER_TRIANGLE[0], UPPER_TRIANGLE[1]]
        return np.column_stack([self.weights, self.means, upper])

    @classmethod
    def unpack(cls, values: np.ndarray) -> "GaussianMixture":
        values = np.asarray(values, dtype=float).reshape(-1, VALUES_PER_COMPONENT)
        covariances = np.zeros((len(values), 3, 3))
        covariances[:, UPPER_TRIANGLE[0], UPPER_TRIANGLE[1]] = values[:, 4:]
        covariances[:, UPPER_TRIANGLE[1], UPPER_TRIANGLE[0]] = values[:, 4:]
        return cls(weights=values[:, 0], means=values[:, 1:4], covariances=covariances)


@dataclass
class GmmRecord:
    """One archived mixture and where it came from"""

    species: int
    region: int
    cycle: int
    mixture: GaussianMixture


@dataclass
class EMResult:
    mixture: GaussianMixture
    objective_history: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def histogram_geometry(
    velocities: np.ndarray,
    bins: int,
    range_mode: RangeMode = RangeMode.DATA,
    v_max: float = 1.0,
) -> HistogramGeometry:
    """Fixed: [-v_max, v_max] per axis. Data: min to max, padded by 5% of the
    span on both sides
    """
    if range_mode == RangeMode.FIXED:
        return HistogramGeometry((bins,) * 3, (-v_max,) * 3, (v_max,) * 3)
    low = velocities.min(axis=0)
    high = velocities.max(axis=0)
    span = high - low
    scale = np.maximum(np.abs(low), np.abs(high))
    padding = np.where(
        span > 0, DATA_RANGE_PADDING * span,
        np.where(scale > 0, DATA_RANGE_PADDING * scale, DATA_RANGE_PADDING),
    )
    return HistogramGeometry(
        (bins,) * 3, tuple(low - padding), tuple(high + padding)
    )


def bin_velocities(
    particles: ParticleSet,
    bins: int = 32,
    range_mode: RangeMode = RangeMode.DATA,
    v_max: float = 1.0,
    geometry: Optional[HistogramGeometry] = None,
) -> VelocityHistogram:
    """Weighted 3D velocity histogram of particles

    Raises
    ------
    CompressionError
        When there are no particles
    """
    if len(particles) == 0:
        raise CompressionError("Cannot bin zero particles")
    velocities = particles.velocities
    if geometry is None:
        geometry = histogram_geometry(velocities, bins, range_mode, v_max)
    low, high = np.array(geometry.low), np.array(geometry.high)
    outside = np.any((velocities < low) | (velocities > high), axis=1)
    clipped = np.clip(velocities, low, np.nextafter(high, low))
    counts, _ = np.histogramdd(clipped, bins=geometry.edges(), weights=particles.weights)
    if np.any(outside):
        logger.debug(f"{int(outside.sum())} particles clipped into edge bins")
    return VelocityHistogram(
        counts=counts,
        geometry=geometry,
        clipped_weight=float(np.sum(particles.weights[outside])),
    )


def _log_densities(points: np.ndarray, mixture: GaussianMixture) -> np.ndarray:
    """(K, M) log alpha_i + log N(x_k | mu_i, Sigma_i)"""
    columns = []
    for alpha, mean, cov in zip(mixture.weights, mixture.means, mixture.covariances):
        log_pdf = np.atleast_1d(multivariate_normal.logpdf(points, mean=mean, cov=cov))
        with np.errstate(divide="ignore"):
            columns.append(np.log(alpha) + log_pdf)
    return np.stack(columns, axis=1)


def _seed_means(
    points: np.ndarray, weights: np.ndarray, n_components: int, seed: int
) -> np.ndarray:
    """Farthest point seeding, first seed drawn with probability weights"""
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = [int(rng.choice(len(points), p=weights))]
    distance = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < n_components:
        following = int(np.argmax(distance))
        chosen.append(following)
        distance = np.minimum(distance, np.sum((points - points[following]) ** 2, axis=1))
    return points[chosen].copy()


def covariance_floor(geometry: HistogramGeometry) -> np.ndarray:
    """Diagonal regularisation 1e-6 (range / bins)^2 per axis"""
    return np.diag(1e-6 * geometry.widths ** 2)


def run_em(
    hist: VelocityHistogram,
    n_components: int,
    seed: int = 0,
    tolerance: float = 1e-6,
    max_iterations: int = 200,
) -> EMResult:
    """Weighted EM on the occupied bin centres

    The objective is the weighted log-likelihood minus 1/2 sum_i tr(F Sigma_i^-1)
    with F the covariance floor. Its maximiser in the M-step is
    Sigma_i = S_i + F / N_i, so every Sigma_i has eigenvalues of at least the
    floor and the objective never decreases.

    Raises
    ------
    CompressionError
        For an empty histogram, more components than occupied bins or a
        non-finite objective
    """
    if not hist.total_weight > 0:
        raise CompressionError("Cannot fit an empty histogram")
    if n_components < 1:
        raise CompressionError("Need at least one mixture component")
    occupied = hist.counts > 0
    points = hist.geometry.centers()[occupied]
    weights = hist.counts[occupied] / hist.total_weight
    if n_components > len(points):
        raise CompressionError(
            f"{n_components} components requested but only {len(points)} occupied bins"
        )
    floor = covariance_floor(hist.geometry)

    def objective(log_norm, mixture):
        penalty = 0.5 * sum(
            np.trace(np.linalg.solve(cov, floor)) for cov in mixture.covariances
        )
        return float(np.dot(weights, log_norm) - penalty)

    overall_mean = weights @ points
    centred = points - overall_mean
    overall_cov = np.einsum("k,ki,kj->ij", weights, centred, centred) + floor
    mixture = GaussianMixture(
        weights=np.full(n_components, 1.0 / n_components),
        means=_seed_means(points, weights, n_components, seed),
        covariances=np.repeat(overall_cov[None], n_components, axis=0),
    )

    log_joint = _log_densities(points, mixture)
    log_norm = logsumexp(log_joint, axis=1)
    current = objective(log_norm, mixture)
    result = EMResult(mixture=mixture, objective_history=[current])
    for _ in range(max_iterations):
        responsibilities = np.exp(log_joint - log_norm[:, None])
        weighted = responsibilities * weights[:, None]  # (K, M)
        mass = np.maximum(weighted.sum(axis=0), np.finfo(float).tiny)
        means = (weighted.T @ points) / mass[:, None]
        covariances = np.empty((n_components, 3, 3))
        for i in range(n_components):
            diff = points - means[i]
            scatter = np.einsum("k,ki,kj->ij", weighted[:, i], diff, diff) / mass[i]
            covariance = scatter + floor / mass[i]
            covariances[i] = 0.5 * (covariance + covariance.T)
        alphas = weighted.sum(axis=0)
        mixture = GaussianMixture(
            weights=alphas / alphas.sum(), means=means, covariances=covariances
        )

        log_joint = _log_densities(points, mixture)
        log_norm = logsumexp(log_joint, axis=1)
        updated = objective(log_norm, mixture)
        if not np.isfinite(updated):
            raise CompressionError("Non-finite likelihood during EM")
        result.objective_history.append(updated)
        result.iterations += 1
        result.mixture = mixture
        change = abs(updated - current)
        current = updated
        if change <= tolerance * max(abs(updated), np.finfo(float).tiny):
            result.converged = True
            break
    return result


def fit_gmm(
    hist: VelocityHistogram,
    n_components: int = 8,
    seed: int = 0,
    tolerance: float = 1e-6,
    max_iterations: int = 200,
) -> GaussianMixture:
    """Fit a Gaussian mixture to a velocity histogram. See run_em"""
    return run_em(hist, n_components, seed, tolerance, max_iterations).mixture


def evaluate_mixture(mixture: GaussianMixture, v) -> np.ndarray:
    """Mixture density at velocities v of shape (..., 3)"""
    v = np.asarray(v, dtype=float)
    points = v.reshape(-1, 3)
    density = np.exp(logsumexp(_log_densities(points, mixture), axis=1))
    return density.reshape(v.shape[:-1]) if v.ndim > 1 else density[0]


def reconstruct_pdf(
    mixture: GaussianMixture, geometry: HistogramGeometry
) -> VelocityHistogram:
    """Mixture density at bin centres, normalised to unit total"""
    density = evaluate_mixture(mixture, geometry.centers())
    total = float(np.sum(density))
    if total > 0:
        density = density / total
    return VelocityHistogram(counts=density, geometry=geometry)


def js_divergence(p: VelocityHistogram, q: VelocityHistogram) -> float:
    """Jensen-Shannon divergence in nats between normalised histograms"""
    p.check_same_geometry(q)
    p_prob = p.counts / p.total_weight
    q_prob = q.counts / q.total_weight
    middle = 0.5 * (p_prob + q_prob)
    return float(
        0.5 * np.sum(rel_entr(p_prob, middle)) + 0.5 * np.sum(rel_entr(q_prob, middle))
    )


def archive_bytes(n_components: int) -> int:
    """Size of an archive holding a single record of n_components"""
    return (
        ARCHIVE_HEADER.size
        + RECORD_HEADER.size
        + n_components * VALUES_PER_COMPONENT * 8
    )


def compression_ratio(n_particles: int, mixture: GaussianMixture) -> float:
    """Raw particle bytes over archive bytes for one region

    Raises
    ------
    CompressionError
        For fewer than one particle
    """
    if n_particles < 1:
        raise CompressionError("Need at least one particle")
    return n_particles * PARTICLE_BYTES / archive_bytes(mixture.n_components)


def write_archive(records: Sequence[GmmRecord], sink: BinaryIO):
    sink.write(ARCHIVE_HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, len(records)))
    for record in records:
        sink.write(
            RECORD_HEADER.pack(
                record.species, record.region, record.cycle,
                record.mixture.n_components,
            )
        )
        sink.write(record.mixture.pack().astype("<f8").tobytes())


def _read_exactly(source: BinaryIO, size: int, what: str) -> bytes:
    data = source.read(size)
    if len(data) != size:
        raise ArchiveFormatError(
            f"Archive truncated while reading {what}: wanted {size} bytes, "
            f"got {len(data)}"
        )
    return data


def read_archive(source: BinaryIO) -> List[GmmRecord]:
    """
    Raises
    ------
    ArchiveFormatError
        For a bad magic, an unknown version or a truncated archive
    """
    magic, version, count = ARCHIVE_HEADER.unpack(
        _read_exactly(source, ARCHIVE_HEADER.size, "archive header")
    )
    if magic != ARCHIVE_MAGIC:
        raise ArchiveFormatError(f"Not a mixture archive, magic is {magic!r}")
    if version != ARCHIVE_VERSION:
        raise ArchiveFormatError(
            f"Unsupported archive version {version}, expected {ARCHIVE_VERSION}"
        )
    records = []
    for index in range(count):
        species, region, cycle, n_components = RECORD_HEADER.unpack(
            _read_exactly(source, RECORD_HEADER.size, f"record {index} header")
        )
        size = n_components * VALUES_PER_COMPONENT * 8
        values = np.frombuffer(
            _read_exactly(source, size, f"record {index} parameters"), dtype="<f8"
        )
        records.append(
            GmmRecord(
                species=species, region=region, cycle=cycle,
                mixture=GaussianMixture.unpack(values.astype(float)),
            )
        )
    return records


def region_block_ids(
    positions: np.ndarray, lengths, blocks: Tuple[int, int, int]
) -> np.ndarray:
    """Flat C-order index of the region block holding each position"""
    blocks_array = np.array(blocks)
    index = np.floor(positions / np.array(lengths) * blocks_array).astype(int)
    index = np.clip(index, 0, blocks_array - 1)
    return np.ravel_multi_index((index[:, 0], index[:, 1], index[:, 2]), blocks)


def compress_particles(
    particles: ParticleSet,
    params: CompressParams,
    species: int,
    region: int,
    cycle: int,
) -> Optional[GmmRecord]:
    """Bin and fit one region. Returns None for an empty region.

    The component count is lowered to the number of occupied bins when
    there are fewer
    """
    if len(particles) == 0:
        return None
    hist = bin_velocities(particles, params.bins, params.range_mode, params.v_max)
    occupied = int(np.count_nonzero(hist.counts))
    n_components = min(params.components, occupied)
    if n_components < params.components:
        logger.debug(
            f"Species {species} region {region}: only {occupied} occupied bins, "
            f"fitting {n_components} components"
        )
    mixture = fit_gmm(hist, n_components, seed=params.seed)
    return GmmRecord(species=species, region=region, cycle=cycle, mixture=mixture)


def compress_state(
    state: SimState, params: CompressParams, cycle: Optional[int] = None
) -> List[GmmRecord]:
    """One record per non-empty (species, region) of the current state,
    stamped with cycle, which defaults to state.cycle.
    Does not touch the state, fits use their own seeded generators
    """
    cycle = state.cycle if cycle is None else cycle
    records = []
    for s, particles in enumerate(state.species):
        if len(particles) == 0:
            continue
        ids = region_block_ids(
            particles.positions, state.config.domain_lengths, params.regions
        )
        for region in range(int(np.prod(params.regions))):
            record = compress_particles(
                particles.select(ids == region), params, s, region, cycle
            )
            if record is not None:
                records.append(record)
    return records


class CompressionError(MomentPICException):
    pass


class ArchiveFormatError(CompressionError):
    pass
