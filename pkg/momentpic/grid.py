"""Collocated node mesh, ghosted field storage, finite differences and
trilinear interpolation stencils.

Notes
-----
A mesh has n nodes per axis and n - 1 cells of spacing L / (n - 1). Arrays
come in two shapes:

* unique: one entry per independent node. On a periodic axis node n - 1 is
  the image of node 0 and is not stored, so there are n - 1 unique nodes. On
  an open axis all n nodes are unique.
* full: n + 2 entries per axis. Index i + 1 holds node i, indices 0 and n + 1
  are ghost nodes. Fields on a FieldGrid are stored full.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from momentpic.core import BoundaryMode
from momentpic.exceptions import MomentPICException

logger = logging.getLogger(__name__)

# corner offsets of a cell, x varying fastest
CORNERS = np.array(
    [(i, j, k) for k, j, i in itertools.product((0, 1), repeat=3)], dtype=int
)


class Mesh:
    """Geometry of the node mesh

    Parameters
    ----------
    dims: Tuple[int, int, int]
        Number of nodes per axis, including both boundary nodes
    lengths: Tuple[float, float, float]
        Domain length per axis
    mode: BoundaryMode
        Periodic wraps all axes, OpenInflow treats all faces as open
    """

    def __init__(self, dims, lengths, mode: BoundaryMode = BoundaryMode.PERIODIC):
        self.dims = tuple(int(n) for n in dims)
        self.lengths = tuple(float(x) for x in lengths)
        self.mode = mode
        self.spacing = np.array(
            [length / (n - 1) for n, length in zip(self.dims, self.lengths)]
        )

    def __str__(self):
        return f"Mesh {self.dims} nodes over {self.lengths}, {self.mode.value}"

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.lengths == other.lengths
            and self.mode == other.mode
        )

    @property
    def periodic(self) -> bool:
        return self.mode == BoundaryMode.PERIODIC

    @property
    def cells(self) -> Tuple[int, int, int]:
        return tuple(n - 1 for n in self.dims)

    @property
    def unique_dims(self) -> Tuple[int, int, int]:
        if self.periodic:
            return self.cells
        return self.dims

    @property
    def full_dims(self) -> Tuple[int, int, int]:
        return tuple(n + 2 for n in self.dims)

    @property
    def n_unique(self) -> int:
        return int(np.prod(self.unique_dims))

    @property
    def node_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def cell_volume(self) -> float:
        return self.node_volume

    def node_coordinates(self, axis: int) -> np.ndarray:
        """Coordinates of the unique nodes along axis"""
        return np.arange(self.unique_dims[axis]) * self.spacing[axis]

    def node_positions(self) -> np.ndarray:
        """(P0, P1, P2, 3) coordinates of all unique nodes"""
        axes = np.meshgrid(*(self.node_coordinates(a) for a in range(3)), indexing="ij")
        return np.stack(axes, axis=-1)

    def full_node_positions(self) -> np.ndarray:
        """(n0+2, n1+2, n2+2, 3) coordinates including ghost nodes"""
        coords = [
            (np.arange(self.dims[a] + 2) - 1) * self.spacing[a] for a in range(3)
        ]
        return np.stack(np.meshgrid(*coords, indexing="ij"), axis=-1)

    def zeros(self, *components) -> np.ndarray:
        return np.zeros(self.unique_dims + tuple(components))

    def full_zeros(self, *components) -> np.ndarray:
        return np.zeros(self.full_dims + tuple(components))

    def pad(self, unique: np.ndarray) -> np.ndarray:
        """Full array from a unique one, ghosts filled per boundary mode.

        Periodic axes wrap. Open axes copy the boundary value outward, which
        gives zero normal derivative at the face.
        """
        extra = [(0, 0)] * (unique.ndim - 3)
        if self.periodic:
            return np.pad(unique, [(1, 2)] * 3 + extra, mode="wrap")
        return np.pad(unique, [(1, 1)] * 3 + extra, mode="edge")

    def interior(self, full: np.ndarray) -> np.ndarray:
        """The unique part of a full array, as a copy"""
        p0, p1, p2 = self.unique_dims
        return full[1 : 1 + p0, 1 : 1 + p1, 1 : 1 + p2].copy()

    def flatten(self, unique_vector: np.ndarray) -> np.ndarray:
        return unique_vector.reshape(-1)

    def unflatten(self, flat: np.ndarray) -> np.ndarray:
        return np.asarray(flat).reshape(self.unique_dims + (3,))

    def contains(self, positions: np.ndarray) -> np.ndarray:
        """Mask of positions inside [0, L) on every axis"""
        lengths = np.array(self.lengths)
        return np.all((positions >= 0) & (positions < lengths), axis=-1)


def _shifted(full: np.ndarray, mesh: Mesh, axis: int, offset: int) -> np.ndarray:
    """View of full array aligned with unique nodes, shifted by offset on axis"""
    slices = [slice(1, 1 + p) for p in mesh.unique_dims]
    slices[axis] = slice(1 + offset, 1 + offset + mesh.unique_dims[axis])
    return full[tuple(slices)]


def ddx(full: np.ndarray, mesh: Mesh, axis: int) -> np.ndarray:
    """Second order central first derivative on the unique nodes"""
    return (_shifted(full, mesh, axis, 1) - _shifted(full, mesh, axis, -1)) / (
        2 * mesh.spacing[axis]
    )


def gradient(full_scalar: np.ndarray, mesh: Mesh) -> np.ndarray:
    return np.stack([ddx(full_scalar, mesh, a) for a in range(3)], axis=-1)


def divergence(full_vector: np.ndarray, mesh: Mesh) -> np.ndarray:
    return sum(ddx(full_vector[..., a], mesh, a) for a in range(3))


def curl(full_vector: np.ndarray, mesh: Mesh) -> np.ndarray:
    def d(component, axis):
        return ddx(full_vector[..., component], mesh, axis)

    return np.stack(
        [d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)], axis=-1
    )


def laplacian(full: np.ndarray, mesh: Mesh) -> np.ndarray:
    """7-point Laplacian, applied per component for vector arrays"""
    centre = _shifted(full, mesh, 0, 0)
    result = np.zeros_like(centre)
    for axis in range(3):
        result += (
            _shifted(full, mesh, axis, 1) - 2 * centre + _shifted(full, mesh, axis, -1)
        ) / mesh.spacing[axis] ** 2
    return result


def tensor_divergence(full_tensor: np.ndarray, mesh: Mesh) -> np.ndarray:
    """(div T)_i = d_j T_ij for a (..., 3, 3) tensor array"""
    return np.stack(
        [sum(ddx(full_tensor[..., i, j], mesh, j) for j in range(3)) for i in range(3)],
        axis=-1,
    )


def binomial_smooth(unique: np.ndarray, mesh: Mesh) -> np.ndarray:
    """One pass of the (1, 2, 1) / 4 filter along each axis"""
    result = unique
    for axis in range(3):
        full = mesh.pad(result)
        result = (
            _shifted(full, mesh, axis, -1)
            + 2 * _shifted(full, mesh, axis, 0)
            + _shifted(full, mesh, axis, 1)
        ) / 4
        result = np.array(result)
    return result


@dataclass
class InterpolationStencil:
    """Eight nodes surrounding a position and their trilinear weights"""

    nodes: np.ndarray
    weights: np.ndarray


def _cell_fractions(
    positions: np.ndarray, mesh: Mesh, lowest: int, highest_offset: int
) -> Tuple[np.ndarray, np.ndarray]:
    scaled = positions / mesh.spacing
    base = np.floor(scaled).astype(int)
    highest = np.array(mesh.cells) - 1 + highest_offset
    base = np.clip(base, lowest, highest)
    return base, scaled - base


def _corner_weights(fractions: np.ndarray) -> np.ndarray:
    """(N, 8) trilinear weights for (N, 3) fractional offsets"""
    one = np.stack([1.0 - fractions, fractions], axis=-1)  # (N, 3, 2)
    return (
        one[:, 0, CORNERS[:, 0]] * one[:, 1, CORNERS[:, 1]] * one[:, 2, CORNERS[:, 2]]
    )


def deposit_stencils(positions: np.ndarray, mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Flat unique-node indices and weights, both (N, 8), for depositing

    Raises
    ------
    OutOfDomainError
        If any position is outside [0, L) or not finite
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(positions) and not np.all(np.isfinite(positions)):
        raise OutOfDomainError("Non-finite particle position")
    outside = ~mesh.contains(positions)
    if np.any(outside):
        example = positions[np.argmax(outside)]
        raise OutOfDomainError(
            f"{int(outside.sum())} particles outside the domain, e.g. {example}"
        )
    base, fractions = _cell_fractions(positions, mesh, 0, 0)
    nodes = base[:, None, :] + CORNERS[None, :, :]
    if mesh.periodic:
        nodes = nodes % np.array(mesh.unique_dims)
    flat = np.ravel_multi_index(
        (nodes[..., 0], nodes[..., 1], nodes[..., 2]), mesh.unique_dims
    )
    return flat, _corner_weights(fractions)


def sample_stencils(positions: np.ndarray, mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Flat full-array indices and weights, both (N, 8), for sampling fields.

    Positions up to one spacing outside the domain are allowed, the ghost
    layer supplies the values there.

    Raises
    ------
    OutOfDomainError
        If any position is further out or not finite
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(positions) and not np.all(np.isfinite(positions)):
        raise OutOfDomainError("Non-finite sampling position")
    lower = -mesh.spacing
    upper = np.array(mesh.lengths) + mesh.spacing
    outside = np.any((positions < lower) | (positions > upper), axis=-1)
    if np.any(outside):
        raise OutOfDomainError(
            f"{int(outside.sum())} sampling positions beyond the ghost layer"
        )
    base, fractions = _cell_fractions(positions, mesh, -1, 1)
    nodes = base[:, None, :] + CORNERS[None, :, :] + 1
    flat = np.ravel_multi_index(
        (nodes[..., 0], nodes[..., 1], nodes[..., 2]), mesh.full_dims
    )
    return flat, _corner_weights(fractions)


def deposit_stencil(position, mesh: Mesh) -> InterpolationStencil:
    """Stencil of a single position, nodes as (8, 3) unique-node indices"""
    flat, weights = deposit_stencils(np.asarray(position).reshape(1, 3), mesh)
    nodes = np.stack(np.unravel_index(flat[0], mesh.unique_dims), axis=-1)
    return InterpolationStencil(nodes=nodes, weights=weights[0])


def sample(full: np.ndarray, positions: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Trilinear interpolation of a full array at positions

    Returns
    -------
    np.ndarray
        (N,) for scalar arrays, (N, k) for arrays with k trailing components
    """
    flat, weights = sample_stencils(positions, mesh)
    values = full.reshape((int(np.prod(mesh.full_dims)),) + full.shape[3:])
    gathered = values[flat]  # (N, 8, ...)
    if gathered.ndim == 2:
        return np.sum(gathered * weights, axis=1)
    return np.einsum("pk,pk...->p...", weights, gathered)


class FieldGrid:
    """Electric and magnetic field on the mesh, stored with ghost layer

    Parameters
    ----------
    mesh: Mesh
        geometry
    E: np.ndarray, optional
        full (n0+2, n1+2, n2+2, 3) array. Defaults to zeros
    B: np.ndarray, optional
        full array. Defaults to zeros
    B_boundary: np.ndarray, optional
        For open boundaries: full array whose ghost layer holds the
        externally imposed magnetic field. Ghosts of B are taken from it on
        every sync.
    """

    def __init__(
        self,
        mesh: Mesh,
        E: Optional[np.ndarray] = None,
        B: Optional[np.ndarray] = None,
        B_boundary: Optional[np.ndarray] = None,
    ):
        self.mesh = mesh
        self.E = mesh.full_zeros(3) if E is None else np.array(E, dtype=float)
        self.B = mesh.full_zeros(3) if B is None else np.array(B, dtype=float)
        self.B_boundary = B_boundary
        for name, array in (("E", self.E), ("B", self.B)):
            if array.shape != mesh.full_dims + (3,):
                raise MomentPICException(
                    f"{name} has shape {array.shape}, expected "
                    f"{mesh.full_dims + (3,)}"
                )

    @classmethod
    def from_unique(
        cls, mesh: Mesh, E: np.ndarray, B: np.ndarray, B_boundary=None
    ) -> "FieldGrid":
        grid = cls(mesh, B_boundary=B_boundary)
        grid.set_E(E)
        grid.set_B(B)
        return grid

    def copy(self) -> "FieldGrid":
        return FieldGrid(
            self.mesh,
            self.E.copy(),
            self.B.copy(),
            None if self.B_boundary is None else self.B_boundary.copy(),
        )

    @property
    def E_unique(self) -> np.ndarray:
        return self.mesh.interior(self.E)

    @property
    def B_unique(self) -> np.ndarray:
        return self.mesh.interior(self.B)

    def set_E(self, unique: np.ndarray):
        self.E = self.mesh.pad(unique)

    def set_B(self, unique: np.ndarray):
        self.B = self.mesh.pad(unique)
        if not self.mesh.periodic and self.B_boundary is not None:
            interior = self.mesh.interior(self.B)
            self.B = self.B_boundary.copy()
            p0, p1, p2 = self.mesh.unique_dims
            self.B[1 : 1 + p0, 1 : 1 + p1, 1 : 1 + p2] = interior

    def sync(self):
        """Refill ghost layers from the unique nodes"""
        self.set_E(self.E_unique)
        self.set_B(self.B_unique)

    def field_energy(self) -> float:
        """Sum over nodes of (E^2 + B^2) / 8 pi times node volume"""
        squares = np.sum(self.E_unique ** 2) + np.sum(self.B_unique ** 2)
        return float(squares / (8 * np.pi) * self.mesh.node_volume)


class OutOfDomainError(MomentPICException):
    """A position lies outside the region a stencil can be built for"""

    pass
