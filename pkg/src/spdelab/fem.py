from __future__ import annotations

import dataclasses
import logging
import pathlib

import numpy as np
import scipy.sparse as sp

import spdelab.common as common

from spdelab.mesh import TriangulatedDomain

logger = logging.getLogger(__name__)


DEGENERATE_AREA = 1e-14


class DegenerateElementException(common.SpdeLabNumericException):
    pass


class InvalidParameterException(common.SpdeLabConfigException):
    pass


@dataclasses.dataclass(frozen=True, eq=False)
class FemMatrices:
    """
    Piecewise-linear FEM matrices under natural Neumann boundaries.

    C is the consistent mass matrix, C_lumped its row-sum diagonal and G
    the stiffness matrix.  Sparse matrices are CSC with sorted indices.
    """

    C: sp.csc_matrix
    C_lumped: np.ndarray
    G: sp.csc_matrix
    mesh: TriangulatedDomain

    @property
    def N(self) -> int:
        return len(self.C_lumped)

    @property
    def C_tilde(self) -> sp.csc_matrix:
        return sp.diags(self.C_lumped, format="csc")

    @property
    def C_tilde_inverse(self) -> sp.csc_matrix:
        return sp.diags(1.0 / self.C_lumped, format="csc")

    def export(self, directory: str | pathlib.Path) -> list[pathlib.Path]:
        from scipy.io import mmwrite

        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, matrix in (("C", self.C), ("C_lumped", self.C_tilde), ("G", self.G)):
            path = directory / f"{name}.mtx"
            mmwrite(str(path), sp.coo_matrix(matrix), precision=17)
            written.append(path)
        logger.debug(f"Exported FEM matrices to {directory}")
        return written


def _csc(rows: np.ndarray, cols: np.ndarray, values: np.ndarray, n: int) -> sp.csc_matrix:
    # coo -> csc sums duplicates
    matrix = sp.coo_matrix((values, (rows, cols)), shape=(n, n)).tocsc()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def assemble(mesh: TriangulatedDomain) -> FemMatrices:
    triangles = mesh.triangles
    corners = mesh.vertices[triangles]
    areas = mesh.signed_areas

    degenerate = np.flatnonzero(np.abs(areas) <= DEGENERATE_AREA)
    if len(degenerate):
        common.error_raise(
            DegenerateElementException,
            f"Zero-area triangle at index {int(degenerate[0])}",
            index=int(degenerate[0]),
        )
    areas = np.abs(areas)

    # edge opposite local vertex i
    edges = np.stack(
        [
            corners[:, 2] - corners[:, 1],
            corners[:, 0] - corners[:, 2],
            corners[:, 1] - corners[:, 0],
        ],
        axis=1,
    )
    local_stiffness = np.einsum("tik,tjk->tij", edges, edges) / (4.0 * areas)[:, None, None]
    local_mass = (np.ones((3, 3)) + np.eye(3))[None, :, :] * (areas / 12.0)[:, None, None]

    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    n = mesh.n_vertices

    C = _csc(rows, cols, local_mass.ravel(), n)
    G = _csc(rows, cols, local_stiffness.ravel(), n)
    C_lumped = np.bincount(triangles.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=n)

    logger.debug(f"Assembled FEM matrices: N={n}, nnz(C)={C.nnz}, nnz(G)={G.nnz}")
    return FemMatrices(C=C, C_lumped=C_lumped, G=G, mesh=mesh)


def k_matrix(fem: FemMatrices, kappa_squared: float) -> sp.csc_matrix:
    """κ²C̃ + G with the lumped mass."""
    if not kappa_squared > 0:
        common.error_raise(
            InvalidParameterException,
            f"kappa_squared must be positive, got {kappa_squared}",
        )
    K = (fem.C_tilde * kappa_squared + fem.G).tocsc()
    K.sort_indices()
    return K
