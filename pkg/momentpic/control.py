"""Keeping the number of particles per region near a target by splitting and
coalescing

Notes
-----
Per region the count is compared with the target N_p. Above N_p (1 + theta)
particles close in phase space are merged pairwise down to N_p; below
N_p (1 - theta) the heaviest particles are split until N_p is reached.
Charge sum(w q) and momentum sum(w q v) are conserved by both operations,
kinetic energy by splitting and never increased by merging.
"""
import heapq
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform

from momentpic.core import (
    ControlParams,
    ParticleSet,
    RegionGranularity,
    SimState,
    SpeciesParams,
)
from momentpic.exceptions import MomentPICException
from momentpic.grid import Mesh

logger = logging.getLogger(__name__)

SPLIT_OFFSET = 0.25  # in units of the cell size


class ControlAction(Enum):
    NONE = "none"
    SPLIT = "split"
    COALESCE = "coalesce"


@dataclass(frozen=True)
class ControlPolicy:
    """When and how to restore particle counts

    Parameters
    ----------
    theta: float
        Relative deviation from the target that triggers an action, in (0, 1)
    target: int or Tuple[int, ...]
        Target count per region, or one target per species
    velocity_bins: int
        Bins per velocity axis used to find merge partners
    granularity: RegionGranularity
        Whether counts are taken over the whole domain or per cell
    """

    theta: float
    target: Union[int, Tuple[int, ...]]
    velocity_bins: int = 4
    granularity: RegionGranularity = RegionGranularity.WHOLE_DOMAIN

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ControlError(f"theta must be in (0, 1), found {self.theta}")
        targets = self.target if isinstance(self.target, tuple) else (self.target,)
        if any(t < 2 for t in targets):
            raise ControlError(f"target must be at least 2, found {self.target}")
        if self.velocity_bins < 1:
            raise ControlError("velocity_bins must be at least 1")

    @classmethod
    def from_params(
        cls, params: ControlParams, initial_targets: Tuple[int, ...]
    ) -> "ControlPolicy":
        """Policy for a run. A configured target overrides the initial counts"""
        return cls(
            theta=params.theta,
            target=params.target if params.target is not None else initial_targets,
            velocity_bins=params.velocity_bins,
            granularity=params.count_region,
        )

    def target_for(self, species_index: int) -> int:
        if isinstance(self.target, tuple):
            return self.target[species_index]
        return self.target


@dataclass
class ControlReport:
    """What control did to one region of one species"""

    species: int
    region: int
    action: ControlAction
    before: int
    after: int
    charge_delta: float = 0.0
    momentum_delta: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    energy_delta: float = 0.0
    partial: bool = False


def decide_action(count: int, target: int, theta: float) -> ControlAction:
    if count > target * (1 + theta):
        return ControlAction.COALESCE
    if count < target * (1 - theta):
        return ControlAction.SPLIT
    return ControlAction.NONE


def cell_indices(positions: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Flat C-order index of the cell holding each position"""
    cells = np.array(mesh.cells)
    index = np.clip(np.floor(positions / mesh.spacing).astype(int), 0, cells - 1)
    return np.ravel_multi_index((index[:, 0], index[:, 1], index[:, 2]), mesh.cells)


def region_ids(
    particles: ParticleSet, mesh: Mesh, granularity: RegionGranularity
) -> np.ndarray:
    if granularity == RegionGranularity.WHOLE_DOMAIN:
        return np.zeros(len(particles), dtype=int)
    return cell_indices(particles.positions, mesh)


def n_regions(mesh: Mesh, granularity: RegionGranularity) -> int:
    if granularity == RegionGranularity.WHOLE_DOMAIN:
        return 1
    return int(np.prod(mesh.cells))


def region_bounds(
    region: int, mesh: Mesh, granularity: RegionGranularity
) -> Tuple[np.ndarray, np.ndarray]:
    if granularity == RegionGranularity.WHOLE_DOMAIN:
        return np.zeros(3), np.array(mesh.lengths)
    low = np.array(np.unravel_index(region, mesh.cells)) * mesh.spacing
    return low, low + mesh.spacing


def census(state: SimState, policy: ControlPolicy) -> List[Dict[int, int]]:
    """Particle count per region, one dict per species"""
    result = []
    total = n_regions(state.mesh, policy.granularity)
    for particles in state.species:
        counts = np.bincount(
            region_ids(particles, state.mesh, policy.granularity), minlength=total
        )
        result.append({region: int(n) for region, n in enumerate(counts)})
    return result


def split_particles(
    particles: ParticleSet,
    deficit: int,
    rng: np.random.Generator,
    mesh: Mesh,
    bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> ParticleSet:
    """Split the heaviest particle into two of half weight, deficit times

    Daughters keep the velocity and sit at +- a quarter cell along a random
    axis, clamped inside bounds (default the whole domain).

    Raises
    ------
    ControlError
        When asked to split particles of an empty region
    """
    if deficit <= 0:
        return particles.copy()
    if len(particles) == 0:
        raise ControlError(f"Cannot split {deficit} particles from an empty region")
    low, high = bounds if bounds is not None else (np.zeros(3), np.array(mesh.lengths))
    upper = np.nextafter(high, low)

    n = len(particles)
    positions = np.empty((n + deficit, 3))
    velocities = np.empty((n + deficit, 3))
    weights = np.empty(n + deficit)
    positions[:n] = particles.positions
    velocities[:n] = particles.velocities
    weights[:n] = particles.weights

    heap = [(-weights[i], i) for i in range(n)]
    heapq.heapify(heap)
    for new in range(n, n + deficit):
        _, parent = heapq.heappop(heap)
        axis = min(int(rng.random() * 3), 2)
        offset = np.zeros(3)
        offset[axis] = SPLIT_OFFSET * mesh.spacing[axis]
        centre = positions[parent].copy()
        positions[parent] = np.clip(centre - offset, low, upper)
        positions[new] = np.clip(centre + offset, low, upper)
        velocities[new] = velocities[parent]
        weights[parent] = weights[parent] / 2
        weights[new] = weights[parent]
        heapq.heappush(heap, (-weights[parent], parent))
        heapq.heappush(heap, (-weights[new], new))
    return ParticleSet(positions, velocities, weights)


def _velocity_bins(velocities: np.ndarray, bins: int) -> np.ndarray:
    low = velocities.min(axis=0)
    span = velocities.max(axis=0) - low
    scaled = np.divide(
        velocities - low, span, out=np.zeros_like(velocities), where=span > 0
    )
    index = np.clip((scaled * bins).astype(int), 0, bins - 1)
    return np.ravel_multi_index((index[:, 0], index[:, 1], index[:, 2]), (bins,) * 3)


def _nearest_pairs(velocities: np.ndarray, limit: int) -> List[Tuple[int, int]]:
    """Disjoint pairs, nearest in velocity first, at most limit of them"""
    distances = squareform(pdist(velocities))
    first, second = np.triu_indices(len(velocities), k=1)
    order = np.lexsort((second, first, distances[first, second]))
    used = np.zeros(len(velocities), dtype=bool)
    pairs = []
    for k in order:
        i, j = first[k], second[k]
        if used[i] or used[j]:
            continue
        used[i] = used[j] = True
        pairs.append((int(i), int(j)))
        if len(pairs) == limit:
            break
    return pairs


def coalesce_particles(
    particles: ParticleSet, excess: int, policy: ControlPolicy, mesh: Mesh
) -> Tuple[ParticleSet, int]:
    """Merge pairs of particles close in phase space until excess particles
    are gone

    Particles are grouped by cell and velocity bin. Starting with the
    fullest groups, nearest velocity pairs merge into one particle with
    w = w1 + w2 and weighted mean position and velocity. Passes repeat until
    the excess is removed or no group has two members left.

    Returns
    -------
    Tuple[ParticleSet, int]
        merged particles and the number actually removed, which is less than
        excess when too few pairs were available
    """
    if excess <= 0 or len(particles) < 2:
        return particles.copy(), 0

    positions = particles.positions.copy()
    velocities = particles.velocities.copy()
    weights = particles.weights.copy()
    alive = np.ones(len(particles), dtype=bool)

    cells = cell_indices(positions, mesh)
    # pairs stay within one cell; velocity bins are dropped when they leave
    # no partners
    groupings = [
        cells * policy.velocity_bins ** 3
        + _velocity_bins(velocities, policy.velocity_bins),
        cells,
    ]

    removed = 0
    for keys in groupings:
        groups = [np.flatnonzero((keys == key) & alive) for key in np.unique(keys)]
        while removed < excess:
            merged_this_pass = 0
            groups.sort(key=lambda members: (-len(members), tuple(members[:1])))
            for g, members in enumerate(groups):
                if removed >= excess:
                    break
                if len(members) < 2:
                    continue
                pairs = _nearest_pairs(velocities[members], excess - removed)
                for a, b in pairs:
                    i, j = members[a], members[b]
                    total = weights[i] + weights[j]
                    positions[i] = (
                        weights[i] * positions[i] + weights[j] * positions[j]
                    ) / total
                    velocities[i] = (
                        weights[i] * velocities[i] + weights[j] * velocities[j]
                    ) / total
                    weights[i] = total
                    alive[j] = False
                removed += len(pairs)
                merged_this_pass += len(pairs)
                groups[g] = members[alive[members]]
            if merged_this_pass == 0:
                break
        if removed >= excess:
            break

    survivors = np.flatnonzero(alive)
    return ParticleSet(positions[survivors], velocities[survivors], weights[survivors]), removed


def _control_region(
    particles: ParticleSet,
    species_index: int,
    species: SpeciesParams,
    region: int,
    target: int,
    policy: ControlPolicy,
    state: SimState,
) -> Tuple[ParticleSet, ControlReport]:
    count = len(particles)
    action = decide_action(count, target, policy.theta)
    partial = False
    if action == ControlAction.SPLIT:
        result = split_particles(
            particles, target - count, state.rng, state.mesh,
            region_bounds(region, state.mesh, policy.granularity),
        )
    else:
        result, removed = coalesce_particles(particles, count - target, policy, state.mesh)
        partial = removed < count - target
        if partial:
            logger.warning(
                f"Species {species_index} region {region}: could only merge "
                f"{removed} of {count - target} particles"
            )

    c = state.config.c
    report = ControlReport(
        species=species_index,
        region=region,
        action=action,
        before=count,
        after=len(result),
        charge_delta=result.total_charge(species) - particles.total_charge(species),
        momentum_delta=tuple(
            result.charge_momentum(species) - particles.charge_momentum(species)
        ),
        energy_delta=result.kinetic_energy(species, c) - particles.kinetic_energy(species, c),
        partial=partial,
    )
    return result, report


def control_pass(
    state: SimState, policy: ControlPolicy
) -> Tuple[SimState, List[ControlReport]]:
    """Split or coalesce every region outside the band N_p (1 +- theta)

    Regions inside the band are left alone. Particles of untouched regions
    keep their order, the particles of acted-on regions are appended.

    Returns
    -------
    Tuple[SimState, List[ControlReport]]
        the state, updated in place, and one report per region acted on
    """
    reports = []
    for s, (particles, species) in enumerate(
        zip(state.species, state.config.species_params)
    ):
        target = policy.target_for(s)
        ids = region_ids(particles, state.mesh, policy.granularity)
        counts = np.bincount(ids, minlength=n_regions(state.mesh, policy.granularity))
        # empty regions have nothing to split
        acting = [
            region for region, count in enumerate(counts)
            if count > 0
            and decide_action(int(count), target, policy.theta) != ControlAction.NONE
        ]
        if not acting:
            continue

        untouched = ~np.isin(ids, acting)
        result = particles.select(untouched)
        for region in acting:
            updated, report = _control_region(
                particles.select(ids == region), s, species, region, target,
                policy, state,
            )
            result = result.concatenate(updated)
            reports.append(report)
            logger.info(
                f"Species {s} region {region}: {report.action.value} "
                f"{report.before} -> {report.after}"
            )
        state.species[s] = result
    return state, reports


def initial_targets(state: SimState, granularity: RegionGranularity) -> Tuple[int, ...]:
    """Per species target: the initial count per region, averaged over regions"""
    regions = n_regions(state.mesh, granularity)
    return tuple(max(len(p) // regions, 2) for p in state.species)


def summarize(reports: Sequence[ControlReport]) -> str:
    if not reports:
        return "no control actions"
    return ", ".join(
        f"species {r.species} region {r.region} {r.action.value} {r.before}->{r.after}"
        for r in reports
    )


class ControlError(MomentPICException):
    pass
