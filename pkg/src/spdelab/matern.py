from __future__ import annotations

import dataclasses
import logging
import math
import typing as T

import numpy as np
import scipy.linalg
import scipy.special

import spdelab.common as common

if T.TYPE_CHECKING:
    from spdelab.spectral import MatchedMaternParams

logger = logging.getLogger(__name__)


PSD_TOLERANCE = 1e-10
MAX_DENSE_ITERATIONS = 4000


class InvalidModelException(common.SpdeLabNumericException):
    pass


class DenseConditioningException(common.SpdeLabNumericException):
    pass


class PointSet(T.Protocol):
    locations: np.ndarray
    fields: np.ndarray


@dataclasses.dataclass(eq=False)
class PointData:
    """Observations for the dense model; no mesh needed."""

    locations: np.ndarray
    fields: np.ndarray
    values: np.ndarray
    nugget_variance: np.ndarray

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def row_nugget(self) -> np.ndarray:
        return np.asarray(self.nugget_variance, dtype=float)[self.fields]


@dataclasses.dataclass
class MaternCrossCovariance:
    p: int
    sigma: list[float]
    nu: list[list[float]]
    a: list[list[float]]
    rho: list[list[float]]
    parsimonious: bool = False

    def __post_init__(self):
        if self.parsimonious:
            a = self.a[0][0]
            for i in range(self.p):
                for j in range(self.p):
                    self.a[i][j] = a
                    if i != j:
                        self.nu[i][j] = (self.nu[i][i] + self.nu[j][j]) / 2
        for i in range(self.p):
            self.rho[i][i] = 1.0

    @classmethod
    def build_parsimonious(
        cls,
        sigma: T.Sequence[float],
        nu: T.Sequence[float],
        a: float,
        rho: T.Sequence[T.Sequence[float]],
    ) -> MaternCrossCovariance:
        p = len(sigma)
        return cls(
            p=p,
            sigma=[float(s) for s in sigma],
            nu=[[float(nu[i]) if i == j else 0.0 for j in range(p)] for i in range(p)],
            a=[[float(a)] * p for _ in range(p)],
            rho=[[float(rho[i][j]) for j in range(p)] for i in range(p)],
            parsimonious=True,
        )

    @classmethod
    def from_matched(cls, matched: MatchedMaternParams) -> MaternCrossCovariance:
        return cls(
            p=2,
            sigma=[matched.sigma1, matched.sigma2],
            nu=[[matched.nu11, matched.nu12], [matched.nu12, matched.nu22]],
            a=[[matched.a, matched.a], [matched.a, matched.a]],
            rho=[[1.0, matched.rho12], [matched.rho12, 1.0]],
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def matern_correlation(h, nu: float, a: float):
    """2^{1-ν}/Γ(ν) (ah)^ν K_ν(ah), equal to 1 at h = 0."""
    h = np.asarray(h, dtype=float)
    scaled = np.asarray(a, dtype=float) * h
    nu = np.asarray(nu, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        value = (
            2.0 ** (1.0 - nu)
            / scipy.special.gamma(nu)
            * scaled**nu
            * scipy.special.kv(nu, scaled)
        )
    value = np.where(scaled <= 0, 1.0, value)
    value = np.where(np.isfinite(value), value, 1.0)
    value = np.clip(value, 0.0, 1.0)
    return float(value) if value.ndim == 0 else value


def effective_range(nu: float, a: float) -> float:
    return math.sqrt(8 * nu) / a


def cross_covariance(
    model: MaternCrossCovariance,
    locations_a: np.ndarray,
    fields_a: np.ndarray,
    locations_b: np.ndarray,
    fields_b: np.ndarray,
) -> np.ndarray:
    from scipy.spatial.distance import cdist

    locations_a = np.asarray(locations_a, dtype=float).reshape(-1, 2)
    locations_b = np.asarray(locations_b, dtype=float).reshape(-1, 2)
    fields_a = np.asarray(fields_a, dtype=np.int64)
    fields_b = np.asarray(fields_b, dtype=np.int64)
    if not len(locations_a) or not len(locations_b):
        return np.zeros((len(locations_a), len(locations_b)))

    sigma = np.asarray(model.sigma, dtype=float)
    nu = np.asarray(model.nu, dtype=float)[fields_a[:, None], fields_b[None, :]]
    a = np.asarray(model.a, dtype=float)[fields_a[:, None], fields_b[None, :]]
    rho = np.asarray(model.rho, dtype=float)[fields_a[:, None], fields_b[None, :]]
    distance = cdist(locations_a, locations_b)
    return (
        rho
        * sigma[fields_a][:, None]
        * sigma[fields_b][None, :]
        * matern_correlation(distance, nu, a)
    )


def assemble_covariance(
    model: MaternCrossCovariance,
    locations: np.ndarray,
    field_of: T.Sequence[int],
    check: bool = True,
) -> np.ndarray:
    covariance = cross_covariance(model, locations, field_of, locations, field_of)
    covariance = (covariance + covariance.T) / 2
    if check and len(covariance):
        _check_psd(covariance)
    return covariance


def _check_psd(covariance: np.ndarray) -> None:
    try:
        np.linalg.cholesky(covariance)
        return
    except np.linalg.LinAlgError:
        pass
    # singular but valid (e.g. repeated locations)
    smallest = np.linalg.eigvalsh(covariance)[0]
    scale = max(float(np.abs(np.diag(covariance)).max()), 1.0)
    if smallest < -PSD_TOLERANCE * scale:
        common.error_raise(
            InvalidModelException,
            f"Cross-covariance is not positive semidefinite (min eigenvalue {smallest})",
        )


def _observation_factor(model: MaternCrossCovariance, observations) -> tuple:
    covariance = assemble_covariance(model, observations.locations, observations.fields, check=False)
    covariance[np.diag_indices_from(covariance)] += observations.row_nugget
    try:
        return scipy.linalg.cho_factor(covariance, lower=True)
    except np.linalg.LinAlgError as exc:
        common.error_raise(
            DenseConditioningException,
            f"Observation covariance is singular or indefinite: {exc}",
        )


def dense_krige(
    model: MaternCrossCovariance,
    observations,
    targets: PointSet,
) -> tuple[np.ndarray, np.ndarray]:
    """Conditional means and variances of the targets under the dense model."""
    target_fields = np.asarray(targets.fields, dtype=np.int64)
    prior_variance = np.asarray(model.sigma, dtype=float)[target_fields] ** 2
    if observations.size == 0:
        return np.zeros(len(target_fields)), prior_variance

    factor = _observation_factor(model, observations)
    cross = cross_covariance(
        model,
        targets.locations,
        target_fields,
        observations.locations,
        observations.fields,
    )
    weights = scipy.linalg.cho_solve(factor, cross.T)
    means = weights.T @ observations.values
    variances = prior_variance - np.einsum("ij,ji->i", cross, weights)
    return means, np.clip(variances, 0.0, None)


def log_likelihood(model: MaternCrossCovariance, observations) -> float:
    factor = _observation_factor(model, observations)
    values = np.asarray(observations.values, dtype=float)
    logdet = 2.0 * float(np.log(np.diag(factor[0])).sum())
    quadratic = float(values @ scipy.linalg.cho_solve(factor, values))
    return -0.5 * (logdet + quadratic + len(values) * math.log(2 * math.pi))


@dataclasses.dataclass
class DenseFitConfig:
    nu: list[float]
    initial_a: float = 1.0
    initial_sigma: list[float] | None = None
    max_iterations: int = MAX_DENSE_ITERATIONS


@dataclasses.dataclass
class DenseFitResult:
    model: MaternCrossCovariance
    log_likelihood: float
    converged: bool
    iterations: int


def _unpack_dense(x: np.ndarray, config: DenseFitConfig) -> MaternCrossCovariance:
    p = len(config.nu)
    sigma = np.exp(x[:p])
    a = math.exp(x[p])
    rho = np.eye(p)
    upper = np.triu_indices(p, 1)
    rho[upper] = np.tanh(x[p + 1 :])
    rho[(upper[1], upper[0])] = rho[upper]
    return MaternCrossCovariance.build_parsimonious(sigma, config.nu, a, rho.tolist())


def fit_dense(observations, config: DenseFitConfig) -> DenseFitResult:
    """Maximum likelihood for the parsimonious model with fixed smoothness."""
    from scipy.optimize import minimize

    p = len(config.nu)
    fields = np.asarray(observations.fields)
    values = np.asarray(observations.values, dtype=float)
    if config.initial_sigma:
        sigma0 = np.asarray(config.initial_sigma, dtype=float)
    else:
        sigma0 = np.array([values[fields == i].std() if (fields == i).any() else 1.0 for i in range(p)])
    sigma0 = np.where(sigma0 > 0, sigma0, 1.0)
    x0 = np.concatenate([np.log(sigma0), [math.log(config.initial_a)], np.zeros(p * (p - 1) // 2)])

    def objective(x: np.ndarray) -> float:
        try:
            return -log_likelihood(_unpack_dense(x, config), observations)
        except common.SpdeLabException:
            return np.inf

    result = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={"maxiter": config.max_iterations, "xatol": 1e-6, "fatol": 1e-8},
    )
    model = _unpack_dense(result.x, config)
    logger.info(f"Dense Matérn fit: loglik={-result.fun}, converged={result.success}")
    return DenseFitResult(
        model=model,
        log_likelihood=float(-result.fun),
        converged=bool(result.success),
        iterations=int(result.nit),
    )
