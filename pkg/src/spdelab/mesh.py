from __future__ import annotations

import dataclasses
import functools
import json
import logging
import math
import pathlib
import typing as T

import numpy as np

import spdelab.common as common

logger = logging.getLogger(__name__)


WEIGHT_TOLERANCE = 1e-12
INCIRCLE_TOLERANCE = 1e-10
NEAREST_CANDIDATES = 12


class InvalidRegionException(common.SpdeLabConfigException):
    pass


class OutOfDomainException(common.SpdeLabConfigException):
    pass


class MeshFormatException(common.SpdeLabConfigException):
    pass


@dataclasses.dataclass(frozen=True)
class Rectangle:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def extended(self, margin: float) -> Rectangle:
        return Rectangle(
            self.x0 - margin,
            self.y0 - margin,
            self.x1 + margin,
            self.y1 + margin,
        )


class BarycentricLocation(T.NamedTuple):
    triangle_index: int
    weights: np.ndarray


@dataclasses.dataclass(frozen=True, eq=False)
class TriangulatedDomain:
    """
    Planar triangulation carrying piecewise-linear basis functions.

    Triangles are counter-clockwise vertex-index triples.  The instance is
    treated as immutable; derived geometry is cached on first use.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_flags: np.ndarray
    extension_margin: float = 0.0

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @functools.cached_property
    def signed_areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @functools.cached_property
    def edges(self) -> np.ndarray:
        return unique_edges(self.triangles)

    @functools.cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @functools.cached_property
    def _barycentric_inverse(self) -> np.ndarray:
        corners = self.vertices[self.triangles]
        transform = np.stack(
            [corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]],
            axis=2,
        )
        return np.linalg.inv(transform)

    @functools.cached_property
    def _centroid_tree(self):
        from scipy.spatial import cKDTree

        return cKDTree(self.centroids)

    def barycentric(self, triangle_indices: np.ndarray, points: np.ndarray) -> np.ndarray:
        origin = self.vertices[self.triangles[triangle_indices, 0]]
        local = np.einsum(
            "...ij,...j->...i",
            self._barycentric_inverse[triangle_indices],
            points - origin,
        )
        return np.concatenate([1.0 - local.sum(axis=-1, keepdims=True), local], axis=-1)

    def to_dict(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "extension_margin": self.extension_margin,
        }

    @classmethod
    def from_dict(cls, data: dict) -> TriangulatedDomain:
        try:
            vertices = np.asarray(data["vertices"], dtype=float)
            triangles = np.asarray(data["triangles"], dtype=np.int64)
        except (KeyError, TypeError, ValueError) as exc:
            common.error_raise(MeshFormatException, f"Invalid mesh document: {exc}")
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            common.error_raise(MeshFormatException, f"vertices must be N×2, got {vertices.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            common.error_raise(MeshFormatException, f"triangles must be M×3, got {triangles.shape}")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            common.error_raise(MeshFormatException, "triangle references an invalid vertex")
        return from_triangles(
            vertices,
            triangles,
            extension_margin=float(data.get("extension_margin", 0.0)),
        )

    def save(self, filename: str | pathlib.Path) -> None:
        with open(filename, "w") as file:
            json.dump(self.to_dict(), file)

    @classmethod
    def from_file(cls, filename: str | pathlib.Path) -> TriangulatedDomain:
        try:
            with open(filename) as file:
                data = json.load(file)
        except (OSError, json.JSONDecodeError) as exc:
            common.error_raise(MeshFormatException, f"Unable to read mesh {filename}: {exc}")
        return cls.from_dict(data)


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (vertices[triangles[:, i]] for i in range(3))
    return 0.5 * (
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    )


def unique_edges(triangles: np.ndarray) -> np.ndarray:
    edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]],
    )
    return np.unique(np.sort(edges, axis=1), axis=0)


def boundary_vertices(n_vertices: int, triangles: np.ndarray) -> np.ndarray:
    edges = np.sort(
        np.concatenate(
            [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]],
        ),
        axis=1,
    )
    unique, counts = np.unique(edges, axis=0, return_counts=True)
    flags = np.zeros(n_vertices, dtype=bool)
    flags[unique[counts == 1].ravel()] = True
    return flags


def from_triangles(
    vertices: np.ndarray,
    triangles: np.ndarray,
    extension_margin: float = 0.0,
) -> TriangulatedDomain:
    """Orient triangles counter-clockwise and derive boundary flags."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.array(triangles, dtype=np.int64)
    areas = signed_areas(vertices, triangles)
    clockwise = areas < 0
    triangles[clockwise] = triangles[clockwise][:, [0, 2, 1]]
    return TriangulatedDomain(
        vertices=vertices,
        triangles=triangles,
        boundary_flags=boundary_vertices(len(vertices), triangles),
        extension_margin=extension_margin,
    )


def _divisions(length: float, edge: float) -> int | None:
    ratio = length / edge
    rounded = round(ratio)
    if rounded >= 1 and abs(ratio - rounded) < 1e-9 * max(1.0, ratio):
        return int(rounded)
    return None


def _structured(region: Rectangle, nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(region.x0, region.x1, nx + 1)
    ys = np.linspace(region.y0, region.y1, ny + 1)
    # row-major by (y, x)
    grid_x, grid_y = np.meshgrid(xs, ys)
    vertices = np.column_stack([grid_x.ravel(), grid_y.ravel()])

    triangles = []
    for j in range(ny):
        for i in range(nx):
            v00 = j * (nx + 1) + i
            v10 = v00 + 1
            v01 = v00 + nx + 1
            v11 = v01 + 1
            if (i + j) % 2 == 0:
                triangles.append((v00, v10, v11))
                triangles.append((v00, v11, v01))
            else:
                triangles.append((v00, v10, v01))
                triangles.append((v10, v11, v01))
    return vertices, np.array(triangles, dtype=np.int64)


def _lattice_points(region: Rectangle, edge: float) -> np.ndarray:
    nx = max(1, math.ceil(region.width / edge))
    ny = max(1, math.ceil(region.height / (edge * math.sqrt(3) / 2)))
    hx = region.width / nx
    points = []
    for j, y in enumerate(np.linspace(region.y0, region.y1, ny + 1)):
        if j % 2 == 1 and j < ny and nx >= 3:
            # staggered rows keep their endpoints on the boundary
            inner = region.x0 + (np.arange(1, nx - 1) + 0.5) * hx
            xs = np.concatenate([[region.x0], inner, [region.x1]])
        else:
            xs = np.linspace(region.x0, region.x1, nx + 1)
        points.extend((x, y) for x in xs)
    return np.array(points, dtype=float)


def _delaunay(points: np.ndarray, edge: float) -> np.ndarray:
    from scipy.spatial import Delaunay

    triangulation = Delaunay(points, qhull_options="Qbb Qc Qz Q12 Qt")
    triangles = triangulation.simplices.astype(np.int64)
    areas = np.abs(signed_areas(points, triangles))
    keep = areas > 1e-12 * edge * edge
    if not keep.all():
        logger.debug(f"Dropping {np.count_nonzero(~keep)} degenerate triangles")
    return triangles[keep]


def build_mesh(
    region: Rectangle,
    target_edge_length: float,
    extension_margin: float | None = None,
    range_hint: float | None = None,
) -> TriangulatedDomain:
    if not region.width > 0 or not region.height > 0:
        common.error_raise(InvalidRegionException, f"Region has no area: {region}")
    if not target_edge_length > 0:
        common.error_raise(
            InvalidRegionException,
            f"target_edge_length must be positive, got {target_edge_length}",
        )
    if extension_margin is None:
        extension_margin = 2.0 * range_hint if range_hint else 0.0
    if extension_margin < 0:
        common.error_raise(
            InvalidRegionException,
            f"extension_margin must be nonnegative, got {extension_margin}",
        )

    extended = region.extended(extension_margin)
    nx = _divisions(extended.width, target_edge_length)
    ny = _divisions(extended.height, target_edge_length)
    if nx and ny:
        logger.debug(f"Structured {nx}x{ny} grid over {extended}")
        vertices, triangles = _structured(extended, nx, ny)
    else:
        vertices = _lattice_points(extended, target_edge_length)
        logger.debug(f"Delaunay over {len(vertices)} lattice points in {extended}")
        triangles = _delaunay(vertices, target_edge_length)

    mesh = from_triangles(vertices, triangles, extension_margin=extension_margin)
    logger.info(f"Built mesh with {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
    return mesh


def inner_region(mesh: TriangulatedDomain) -> Rectangle:
    """The study region: the bounding box without the extension margin."""
    low, high = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    margin = mesh.extension_margin
    return Rectangle(low[0] + margin, low[1] + margin, high[0] - margin, high[1] - margin)


def _search(mesh: TriangulatedDomain, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n_points = len(points)
    indices = np.full(n_points, -1, dtype=np.int64)
    weights = np.zeros((n_points, 3))
    if n_points == 0:
        return indices, weights

    k = min(NEAREST_CANDIDATES, mesh.n_triangles)
    _, candidates = mesh._centroid_tree.query(points, k=k)
    candidates = np.asarray(candidates).reshape(n_points, k)
    for column in range(k):
        pending = np.flatnonzero(indices < 0)
        if not len(pending):
            break
        tri = candidates[pending, column]
        lam = mesh.barycentric(tri, points[pending])
        inside = (lam >= -WEIGHT_TOLERANCE).all(axis=1)
        indices[pending[inside]] = tri[inside]
        weights[pending[inside]] = lam[inside]

    all_triangles = np.arange(mesh.n_triangles)
    for point_index in np.flatnonzero(indices < 0):
        lam = mesh.barycentric(
            all_triangles,
            np.broadcast_to(points[point_index], (mesh.n_triangles, 2)),
        )
        inside = np.flatnonzero((lam >= -WEIGHT_TOLERANCE).all(axis=1))
        if len(inside):
            indices[point_index] = inside[0]
            weights[point_index] = lam[inside[0]]

    return indices, weights


def locate_points(
    mesh: TriangulatedDomain,
    points: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Containing triangle and barycentric weights for every point.

    Raises OutOfDomainException naming the offending indices.
    """
    indices, weights = _search(mesh, points)
    outside = np.flatnonzero(indices < 0)
    if len(outside):
        common.error_raise(
            OutOfDomainException,
            f"{len(outside)} point(s) outside the mesh: indices {outside.tolist()}",
            indices=outside.tolist(),
        )

    weights = np.clip(weights, 0.0, None)
    weights /= weights.sum(axis=1, keepdims=True)
    return indices, weights


def locate_point(mesh: TriangulatedDomain, point: T.Sequence[float]) -> BarycentricLocation:
    indices, weights = locate_points(mesh, np.asarray(point, dtype=float).reshape(1, 2))
    return BarycentricLocation(int(indices[0]), weights[0])


def contains(mesh: TriangulatedDomain, points: np.ndarray) -> np.ndarray:
    """Boolean mask of points inside the mesh hull."""
    indices, _ = _search(mesh, points)
    return indices >= 0
