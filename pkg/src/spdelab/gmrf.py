from __future__ import annotations

import dataclasses
import logging
import re
import typing as T

import numpy as np
import scipy.sparse as sp

import spdelab.common as common
import spdelab.mesh as mesh_module

from spdelab.precision import (
    IndefinitePrecisionException,
    MultivariateGmrf,
    ShapeException,
)

if T.TYPE_CHECKING:
    from spdelab.mesh import TriangulatedDomain

logger = logging.getLogger(__name__)


BACKENDS = ("auto", "cholmod", "banded")
SOLVE_BLOCK = 256

RandomSource = T.Union[int, np.random.Generator]


class ConditioningException(common.SpdeLabNumericException):
    pass


class ReferenceIndexException(common.SpdeLabConfigException):
    pass


class InvalidObservationException(common.SpdeLabConfigException):
    pass


def generator(seed: RandomSource) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))


def _cholmod_available() -> bool:
    try:
        import sksparse.cholmod  # noqa: F401
    except ImportError:
        return False
    return True


def resolve_backend(backend: str | None = None) -> str:
    backend = backend or common.CHOLESKY_BACKEND
    if backend not in BACKENDS:
        common.error_raise(
            common.SpdeLabConfigException,
            f"Unknown Cholesky backend {backend}, choose from {', '.join(BACKENDS)}",
        )
    if backend == "auto":
        return "cholmod" if _cholmod_available() else "banded"
    return backend


def _leading_minor(message: str) -> int | None:
    match = re.search(r"(\d+)", message)
    return int(match.group(1)) if match else None


class CholeskyFactor:
    """
    P Q Pᵀ = L Lᵀ for a symmetric positive definite Q.

    `permutation` holds the fill-reducing ordering such that
    Q[permutation][:, permutation] = L Lᵀ.  The factor is immutable and
    concurrent solves against it are safe.
    """

    def __init__(
        self,
        n: int,
        permutation: np.ndarray,
        logdet: float,
        backend: str,
        band: np.ndarray | None = None,
        cholmod_factor=None,
    ):
        self.n = n
        self.permutation = permutation
        self.logdet = logdet
        self.backend = backend
        self._band = band
        self._cholmod = cholmod_factor

    @property
    def bandwidth(self) -> int | None:
        return None if self._band is None else self._band.shape[0] - 1

    @property
    def L(self) -> sp.csc_matrix:
        if self._cholmod is not None:
            return self._cholmod.L().tocsc()
        u = self.bandwidth
        upper = sp.dia_matrix(
            (self._band, np.arange(u, -1, -1)),
            shape=(self.n, self.n),
        )
        return upper.T.tocsc()

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Q⁻¹ rhs for a vector or a column block."""
        rhs = np.asarray(rhs, dtype=float)
        if self._cholmod is not None:
            return np.asarray(self._cholmod(rhs))
        import scipy.linalg

        solution = np.empty_like(rhs)
        solution[self.permutation] = scipy.linalg.cho_solve_banded(
            (self._band, False),
            rhs[self.permutation],
        )
        return solution

    def correlate(self, z: np.ndarray) -> np.ndarray:
        """
        Pᵀ L⁻ᵀ P z.

        Maps standard normal draws to draws with precision Q, and reduces to
        the identity when Q is the identity.
        """
        z = np.asarray(z, dtype=float)
        if self._cholmod is not None:
            f = self._cholmod
            return np.asarray(f.apply_Pt(f.solve_Lt(f.apply_P(z), use_LDLt_decomposition=False)))
        import scipy.linalg

        result = np.empty_like(z)
        result[self.permutation] = scipy.linalg.solve_banded(
            (0, self.bandwidth),
            self._band,
            z[self.permutation],
        )
        return result

    def inverse_diagonal(self) -> np.ndarray:
        if self._band is not None:
            return self._takahashi_diagonal()
        return self._blocked_diagonal()

    def _blocked_diagonal(self) -> np.ndarray:
        diagonal = np.empty(self.n)
        for start in range(0, self.n, SOLVE_BLOCK):
            index = np.arange(start, min(start + SOLVE_BLOCK, self.n))
            block = np.zeros((self.n, len(index)))
            block[index, np.arange(len(index))] = 1.0
            diagonal[index] = self.solve(block)[index, np.arange(len(index))]
        return diagonal

    def _takahashi_diagonal(self) -> np.ndarray:
        # band of Σ = Q⁻¹ from the band of Lᵀ, last row first
        band = self._band
        n, u = self.n, self.bandwidth
        sigma = np.zeros((u + 1, n))
        window = np.arange(u)
        distance = np.abs(window[:, None] - window[None, :])
        lowest = np.minimum(window[:, None], window[None, :])
        for i in range(n - 1, -1, -1):
            pivot = band[u, i]
            m = min(u, n - 1 - i)
            if m == 0:
                sigma[0, i] = 1.0 / pivot**2
                continue
            steps = np.arange(1, m + 1)
            column = band[u - steps, i + steps]
            known = sigma[distance[:m, :m], i + 1 + lowest[:m, :m]]
            row = -(known @ column) / pivot
            sigma[1 : m + 1, i] = row
            sigma[0, i] = (1.0 / pivot - column @ row) / pivot
        diagonal = np.empty(n)
        diagonal[self.permutation] = sigma[0]
        return diagonal


def _factorize_cholmod(Q: sp.spmatrix) -> CholeskyFactor:
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, cholesky

    try:
        factor = cholesky(sp.csc_matrix(Q))
    except CholmodNotPositiveDefiniteError as exc:
        index = _leading_minor(str(exc))
        common.error_raise(
            IndefinitePrecisionException,
            f"Precision is not positive definite (leading minor {index})",
            index=index,
        )
    return CholeskyFactor(
        n=Q.shape[0],
        permutation=np.asarray(factor.P()),
        logdet=float(factor.logdet()),
        backend="cholmod",
        cholmod_factor=factor,
    )


def _factorize_banded(Q: sp.spmatrix) -> CholeskyFactor:
    import scipy.linalg
    from scipy.sparse.csgraph import reverse_cuthill_mckee

    n = Q.shape[0]
    Q = sp.csr_matrix(Q)
    permutation = np.asarray(reverse_cuthill_mckee(Q, symmetric_mode=True), dtype=np.int64)
    permuted = Q[permutation][:, permutation].tocoo()
    upper = permuted.col >= permuted.row
    rows, cols, values = permuted.row[upper], permuted.col[upper], permuted.data[upper]
    u = int((cols - rows).max()) if len(rows) else 0

    band = np.zeros((u + 1, n))
    np.add.at(band, (u + rows - cols, cols), values)
    try:
        band = scipy.linalg.cholesky_banded(band, lower=False)
    except np.linalg.LinAlgError as exc:
        index = _leading_minor(str(exc))
        common.error_raise(
            IndefinitePrecisionException,
            f"Precision is not positive definite (leading minor {index})",
            index=index,
        )
    logdet = 2.0 * float(np.log(band[u]).sum())
    logger.debug(f"Banded Cholesky: n={n}, bandwidth={u}, logdet={logdet}")
    return CholeskyFactor(
        n=n,
        permutation=permutation,
        logdet=logdet,
        backend="banded",
        band=band,
    )


def factorize(
    gmrf: MultivariateGmrf | sp.spmatrix,
    backend: str | None = None,
) -> CholeskyFactor:
    Q = gmrf.Q if isinstance(gmrf, MultivariateGmrf) else gmrf
    Q = sp.csc_matrix(Q)
    if Q.shape[0] != Q.shape[1]:
        common.error_raise(ShapeException, f"Precision must be square, got {Q.shape}")
    diagonal = Q.diagonal()
    if len(diagonal) and (not np.all(np.isfinite(Q.data)) or diagonal.min() <= 0):
        bad = int(np.flatnonzero(~(diagonal > 0))[0]) if diagonal.min() <= 0 else None
        common.error_raise(
            IndefinitePrecisionException,
            f"Precision has a non-positive or non-finite pivot at {bad}",
            index=bad,
        )
    if resolve_backend(backend) == "cholmod":
        return _factorize_cholmod(Q)
    return _factorize_banded(Q)


def sample(
    factor: CholeskyFactor,
    mean: np.ndarray | float,
    rng_seed: RandomSource,
    size: int | None = None,
) -> np.ndarray:
    """
    Draws μ + Pᵀ L⁻ᵀ P z with z standard normal.

    Returns a vector, or a (size, n) array when size is given.
    """
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (factor.n,))
    rng = generator(rng_seed)
    if size is None:
        return mean + factor.correlate(rng.standard_normal(factor.n))
    z = rng.standard_normal((size, factor.n))
    return mean[None, :] + factor.correlate(z.T).T


def marginal_variances(factor: CholeskyFactor) -> np.ndarray:
    return factor.inverse_diagonal()


def correlation_surfaces(
    gmrf: MultivariateGmrf,
    reference_vertex: int,
) -> dict[tuple[int, int], np.ndarray]:
    """
    Correlation between (field i, reference vertex) and (field j, every vertex).

    Keys are (i, j) pairs of 0-based field indices.
    """
    if not 0 <= reference_vertex < gmrf.N:
        common.error_raise(
            ReferenceIndexException,
            f"Reference vertex {reference_vertex} out of range [0, {gmrf.N})",
        )
    factor = gmrf.factor()
    std = np.sqrt(marginal_variances(factor))
    references = [gmrf.index(i, reference_vertex) for i in range(gmrf.p)]
    unit = np.zeros((gmrf.size, gmrf.p))
    unit[references, np.arange(gmrf.p)] = 1.0
    columns = factor.solve(unit)

    surfaces = {}
    for i, reference in enumerate(references):
        for j in range(gmrf.p):
            block = slice(j * gmrf.N, (j + 1) * gmrf.N)
            surfaces[(i, j)] = np.clip(
                columns[block, i] / (std[reference] * std[block]),
                -1.0,
                1.0,
            )
    return surfaces


@dataclasses.dataclass(eq=False)
class ObservationSet:
    """Point observations linked to the latent vector through A."""

    locations: np.ndarray
    fields: np.ndarray
    values: np.ndarray
    nugget_variance: np.ndarray
    A: sp.csr_matrix
    p: int
    N: int

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def row_nugget(self) -> np.ndarray:
        return self.nugget_variance[self.fields]

    @property
    def Q_n(self) -> sp.csr_matrix:
        nugget = self.row_nugget
        if nugget.size and not nugget.min() > 0:
            common.error_raise(
                ConditioningException,
                "Noise precision needs strictly positive nugget variances",
            )
        return sp.diags(1.0 / nugget, format="csr")

    def subset(self, rows: np.ndarray) -> ObservationSet:
        rows = np.asarray(rows)
        return dataclasses.replace(
            self,
            locations=self.locations[rows],
            fields=self.fields[rows],
            values=self.values[rows],
            A=self.A[rows],
        )

    def with_nugget(self, nugget_variance: T.Sequence[float]) -> ObservationSet:
        return dataclasses.replace(
            self,
            nugget_variance=_nugget_array(nugget_variance, self.p),
        )

    def with_values(self, values: np.ndarray) -> ObservationSet:
        return dataclasses.replace(self, values=np.asarray(values, dtype=float))


def _nugget_array(nugget_variance: T.Sequence[float] | float, p: int) -> np.ndarray:
    nugget = np.broadcast_to(np.asarray(nugget_variance, dtype=float), (p,)).copy()
    if (nugget < 0).any():
        common.error_raise(InvalidObservationException, f"Negative nugget variance {nugget}")
    return nugget


def observation_matrix(
    mesh: TriangulatedDomain,
    p: int,
    locations: np.ndarray,
    fields: np.ndarray,
) -> sp.csr_matrix:
    triangles, weights = mesh_module.locate_points(mesh, locations)
    N = mesh.n_vertices
    rows = np.repeat(np.arange(len(fields)), 3)
    cols = (mesh.triangles[triangles] + (np.asarray(fields) * N)[:, None]).ravel()
    A = sp.csr_matrix((weights.ravel(), (rows, cols)), shape=(len(fields), p * N))
    A.eliminate_zeros()
    return A


def build_observations(
    mesh: TriangulatedDomain,
    p: int,
    locations: np.ndarray,
    fields: T.Sequence[int],
    values: T.Sequence[float] | None,
    nugget_variance: T.Sequence[float] | float,
) -> ObservationSet:
    locations = np.asarray(locations, dtype=float).reshape(-1, 2)
    fields = np.asarray(fields, dtype=np.int64).reshape(-1)
    values = (
        np.zeros(len(fields)) if values is None else np.asarray(values, dtype=float).reshape(-1)
    )
    if not len(locations) == len(fields) == len(values):
        common.error_raise(ShapeException, "locations, fields and values differ in length")
    if len(fields) and (fields.min() < 0 or fields.max() >= p):
        bad = int(np.flatnonzero((fields < 0) | (fields >= p))[0])
        common.error_raise(
            InvalidObservationException,
            f"Observation {bad} has field {fields[bad]} outside [0, {p})",
            row=bad,
        )
    return ObservationSet(
        locations=locations,
        fields=fields,
        values=values,
        nugget_variance=_nugget_array(nugget_variance, p),
        A=observation_matrix(mesh, p, locations, fields),
        p=p,
        N=mesh.n_vertices,
    )


def condition(
    gmrf: MultivariateGmrf,
    obs: ObservationSet,
) -> tuple[np.ndarray, MultivariateGmrf]:
    """
    Conditional mean and precision of x given y.

    Q_c = Q + Aᵀ Q_n A and μ_c = Q_c⁻¹ Aᵀ Q_n y; the returned precision
    carries its factorization.
    """
    if (obs.p, obs.N) != (gmrf.p, gmrf.N):
        common.error_raise(
            ShapeException,
            f"Observations built for p={obs.p}, N={obs.N} but precision has p={gmrf.p}, N={gmrf.N}",
        )
    if obs.size == 0:
        return np.zeros(gmrf.size), gmrf

    Q_n = obs.Q_n
    update = (obs.A.T @ Q_n @ obs.A).tocsc()
    Q_c = (gmrf.Q + (update + update.T) * 0.5).tocsc()
    Q_c.sort_indices()
    conditional = MultivariateGmrf(Q=Q_c, p=gmrf.p, N=gmrf.N)
    try:
        factor = conditional.factor()
    except IndefinitePrecisionException as exc:
        common.error_raise(ConditioningException, f"Conditional precision rejected: {exc}")

    b_c = obs.A.T @ (Q_n @ obs.values)
    mu_c = factor.solve(np.asarray(b_c).ravel())
    return mu_c, conditional


def simulate_observations(
    gmrf: MultivariateGmrf,
    mesh: TriangulatedDomain,
    locations: np.ndarray,
    fields: T.Sequence[int],
    nugget_variance: T.Sequence[float] | float,
    seed: RandomSource,
) -> tuple[ObservationSet, np.ndarray]:
    """Draw a latent field and noisy point observations of it."""
    rng = generator(seed)
    latent = sample(gmrf.factor(), 0.0, rng)
    obs = build_observations(mesh, gmrf.p, locations, fields, None, nugget_variance)
    noise = rng.standard_normal(obs.size) * np.sqrt(obs.row_nugget)
    obs = obs.with_values(obs.A @ latent + noise)
    logger.debug(f"Simulated {obs.size} observations")
    return obs, latent
