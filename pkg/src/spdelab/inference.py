from __future__ import annotations

import concurrent.futures
import contextlib
import dataclasses
import logging
import math
import typing as T

import numpy as np

import spdelab.common as common
import spdelab.fem as fem_assembly
import spdelab.gmrf as gmrf_engine

from spdelab.fem import FemMatrices
from spdelab.gmrf import ObservationSet
from spdelab.precision import SpdeSystemSpec, build_precision, dacite_config

if T.TYPE_CHECKING:
    from spdelab.mesh import TriangulatedDomain

logger = logging.getLogger(__name__)


STARTS = ("prior", "spec")


class FitConfigException(common.SpdeLabConfigException):
    pass


@dataclasses.dataclass
class PriorConfig:
    log_kappa_mean: float = 0.0
    log_kappa_sd: float = 10.0
    b_mean: float = 0.0
    b_sd: float = 10.0


@dataclasses.dataclass
class OptimizerConfig:
    gtol: float = 1e-5
    max_iterations: int = 500
    fd_step: float = 1e-5
    hessian_step: float = 1e-3
    n_starts: int = 3
    start: str = "prior"
    start_perturbation: float = 1.0
    workers: int | None = None


@dataclasses.dataclass
class FitConfig:
    """
    What to estimate and how.

    `spec` fixes the α's and the noise exponents and supplies the values of
    every parameter that is not free.  Free entries default to every
    lower-triangular b with a nonzero template value, and the κ's of those
    entries whose operator exponent is 2.
    """

    spec: SpdeSystemSpec
    free_kappa: list[list[int]] | None = None
    free_b: list[list[int]] | None = None
    tie_noise_kappa: bool = True
    nugget_variance: list[float] | None = None
    include_noise_terms: bool = False
    priors: PriorConfig = dataclasses.field(default_factory=PriorConfig)
    optimizer: OptimizerConfig = dataclasses.field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.optimizer.start not in STARTS:
            common.error_raise(
                FitConfigException,
                f"optimizer.start must be one of {STARTS}, got {self.optimizer.start}",
            )
        if self.optimizer.n_starts < 1:
            common.error_raise(FitConfigException, "optimizer.n_starts must be at least 1")

    @classmethod
    def from_dict(cls, data: dict) -> FitConfig:
        import dacite

        try:
            return dacite.from_dict(data_class=cls, data=data, config=dacite_config())
        except dacite.DaciteError as exc:
            common.error_raise(FitConfigException, f"Invalid fit config: {exc}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


Entry = tuple[str, int, int]


def free_entries(config: FitConfig) -> list[Entry]:
    spec = config.spec
    p = spec.p
    lower = [(i, j) for i in range(p) for j in range(i + 1)]
    if config.free_b is None:
        b_entries = [(i, j) for i, j in lower if spec.b[i][j] != 0]
    else:
        b_entries = [tuple(entry) for entry in config.free_b]
    if config.free_kappa is None:
        kappa_entries = [
            (i, j) for i, j in lower if spec.b[i][j] != 0 and spec.alpha[i][j] == 2
        ]
    else:
        kappa_entries = [tuple(entry) for entry in config.free_kappa]

    for i, j in kappa_entries + b_entries:
        if not (0 <= i < p and 0 <= j < p):
            common.error_raise(FitConfigException, f"Free entry ({i}, {j}) outside {p}x{p}")
    for i, j in kappa_entries:
        if spec.alpha[i][j] != 2:
            common.error_raise(
                FitConfigException,
                f"kappa[{i}][{j}] cannot be free when alpha[{i}][{j}] = 0",
            )
    entries = [("kappa", i, j) for i, j in kappa_entries] + [("b", i, j) for i, j in b_entries]
    if not entries:
        common.error_raise(FitConfigException, "At least one free parameter is required")
    return entries


@dataclasses.dataclass
class ParameterVector:
    """
    Free parameters packed as log κ and raw b.

    Everything not listed in `entries` is held at its template value; with
    `tie_noise_kappa` each active noise κ follows its diagonal κ.
    """

    template: SpdeSystemSpec
    entries: list[Entry]
    values: np.ndarray
    tie_noise_kappa: bool = True

    @classmethod
    def pack(
        cls,
        spec: SpdeSystemSpec,
        entries: list[Entry],
        tie_noise_kappa: bool = True,
    ) -> ParameterVector:
        values = np.array(
            [
                math.log(spec.kappa[i][j]) if kind == "kappa" else spec.b[i][j]
                for kind, i, j in entries
            ],
            dtype=float,
        )
        return cls(template=spec, entries=list(entries), values=values, tie_noise_kappa=tie_noise_kappa)

    @property
    def names(self) -> list[str]:
        return [f"{kind}_{i}_{j}" for kind, i, j in self.entries]

    @property
    def kappa_mask(self) -> np.ndarray:
        return np.array([kind == "kappa" for kind, _, _ in self.entries])

    @property
    def natural(self) -> np.ndarray:
        return np.where(self.kappa_mask, np.exp(self.values), self.values)

    def with_values(self, values: np.ndarray) -> ParameterVector:
        return dataclasses.replace(self, values=np.asarray(values, dtype=float).copy())

    def unpack(self) -> SpdeSystemSpec:
        data = self.template.to_dict()
        for (kind, i, j), value in zip(self.entries, self.values):
            data[kind][i][j] = math.exp(value) if kind == "kappa" else float(value)
        if self.tie_noise_kappa:
            for i in range(self.template.p):
                if data["alpha"][i][i] == 2:
                    data["noise_kappa"][i] = data["kappa"][i][i]
        return SpdeSystemSpec.from_dict(data)


def log_prior(theta: ParameterVector, priors: PriorConfig) -> float:
    def normal(x: np.ndarray, mean: float, sd: float) -> float:
        return float(
            np.sum(-0.5 * ((x - mean) / sd) ** 2 - math.log(sd * math.sqrt(2 * math.pi)))
        )

    mask = theta.kappa_mask
    return normal(theta.values[mask], priors.log_kappa_mean, priors.log_kappa_sd) + normal(
        theta.values[~mask], priors.b_mean, priors.b_sd
    )


def _as_fem(mesh: TriangulatedDomain | FemMatrices) -> FemMatrices:
    if isinstance(mesh, FemMatrices):
        return mesh
    return fem_assembly.assemble(mesh)


def log_posterior(
    theta: ParameterVector,
    obs: ObservationSet,
    mesh: TriangulatedDomain | FemMatrices,
    config: FitConfig,
) -> float:
    """
    log π(θ|y) up to a constant; -inf for rejected points.

    Const + log π(θ) + ½log|Q| − ½log|Q_c| + ½ μ_cᵀ Q_c μ_c, plus
    ½log|Q_n| − ½ yᵀQ_n y when `include_noise_terms` is set.
    """
    prior = log_prior(theta, config.priors)
    try:
        spec = theta.unpack()
        if obs.size == 0:
            return prior
        gmrf = build_precision(spec, _as_fem(mesh))
        mu_c, conditional = gmrf_engine.condition(gmrf, obs)
    except common.SpdeLabException as exc:
        logger.debug(f"Rejected θ={theta.natural.tolist()}: {exc}")
        return -math.inf

    value = (
        prior
        + 0.5 * gmrf.factor().logdet
        - 0.5 * conditional.factor().logdet
        + 0.5 * float(mu_c @ (conditional.Q @ mu_c))
    )
    if config.include_noise_terms:
        precision = 1.0 / obs.row_nugget
        value += 0.5 * float(np.log(precision).sum()) - 0.5 * float(
            precision @ obs.values**2
        )
    return value


def finite_difference_gradient(
    f: T.Callable[[np.ndarray], float],
    x: np.ndarray,
    step: float,
    executor: concurrent.futures.Executor | None = None,
    f0: float | None = None,
) -> np.ndarray:
    """Central differences with h = step·(1+|x|), one-sided next to rejected points."""
    h = step * (1.0 + np.abs(x))
    points = []
    for i in range(len(x)):
        for sign in (1.0, -1.0):
            point = x.copy()
            point[i] += sign * h[i]
            points.append(point)
    mapper = executor.map if executor else map
    values = np.array(list(mapper(f, points))).reshape(len(x), 2)
    plus, minus = values[:, 0], values[:, 1]

    gradient = (plus - minus) / (2 * h)
    broken = ~np.isfinite(gradient)
    if broken.any():
        if f0 is None:
            f0 = f(x)
        forward = (plus - f0) / h
        backward = (f0 - minus) / h
        gradient = np.where(
            broken,
            np.where(np.isfinite(forward), forward, np.where(np.isfinite(backward), backward, 0.0)),
            gradient,
        )
    return gradient


def finite_difference_hessian(
    f: T.Callable[[np.ndarray], float],
    x: np.ndarray,
    step: float,
    executor: concurrent.futures.Executor | None = None,
) -> np.ndarray:
    n = len(x)
    h = step * (1.0 + np.abs(x))
    shifts = [np.zeros(n)]
    for i in range(n):
        for si in (1.0, -1.0):
            shift = np.zeros(n)
            shift[i] = si * h[i]
            shifts.append(shift)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for i, j in pairs:
        for si in (1.0, -1.0):
            for sj in (1.0, -1.0):
                shift = np.zeros(n)
                shift[i] = si * h[i]
                shift[j] = sj * h[j]
                shifts.append(shift)
    mapper = executor.map if executor else map
    values = list(mapper(f, [x + shift for shift in shifts]))

    f0 = values[0]
    hessian = np.zeros((n, n))
    for i in range(n):
        plus, minus = values[1 + 2 * i], values[2 + 2 * i]
        hessian[i, i] = (plus - 2 * f0 + minus) / h[i] ** 2
    offset = 1 + 2 * n
    for k, (i, j) in enumerate(pairs):
        pp, pm, mp, mm = values[offset + 4 * k : offset + 4 * k + 4]
        hessian[i, j] = hessian[j, i] = (pp - pm - mp + mm) / (4 * h[i] * h[j])
    return hessian


@dataclasses.dataclass
class Convergence:
    iterations: int
    gradient_norm: float
    converged: bool
    message: str
    accepted: list[float] = dataclasses.field(default_factory=list)


@dataclasses.dataclass
class FitResult:
    estimates: ParameterVector
    std_devs: np.ndarray
    std_devs_reliable: bool
    log_posterior: float
    convergence: Convergence
    nugget_variance: list[float]
    start_log_posteriors: list[float] = dataclasses.field(default_factory=list)

    @property
    def spec(self) -> SpdeSystemSpec:
        return self.estimates.unpack()

    def to_dict(self) -> dict:
        return {
            "parameters": [
                {"name": name, "estimate": float(value), "std_dev": float(sd)}
                for name, value, sd in zip(
                    self.estimates.names, self.estimates.natural, self.std_devs
                )
            ],
            "std_devs_reliable": self.std_devs_reliable,
            "log_posterior": self.log_posterior,
            "convergence": {
                "iterations": self.convergence.iterations,
                "gradient_norm": self.convergence.gradient_norm,
                "converged": self.convergence.converged,
                "message": self.convergence.message,
            },
            "start_log_posteriors": self.start_log_posteriors,
            "nugget_variance": self.nugget_variance,
            "tie_noise_kappa": self.estimates.tie_noise_kappa,
            "spec": self.spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> FitResult:
        try:
            spec = SpdeSystemSpec.from_dict(data["spec"])
            entries = []
            for parameter in data["parameters"]:
                kind, i, j = parameter["name"].split("_")
                entries.append((kind, int(i), int(j)))
            theta = ParameterVector.pack(spec, entries, bool(data.get("tie_noise_kappa", True)))
            convergence = data["convergence"]
            return cls(
                estimates=theta,
                std_devs=np.array([parameter["std_dev"] for parameter in data["parameters"]]),
                std_devs_reliable=bool(data["std_devs_reliable"]),
                log_posterior=float(data["log_posterior"]),
                convergence=Convergence(
                    iterations=int(convergence["iterations"]),
                    gradient_norm=float(convergence["gradient_norm"]),
                    converged=bool(convergence["converged"]),
                    message=str(convergence["message"]),
                ),
                nugget_variance=[float(v) for v in data["nugget_variance"]],
                start_log_posteriors=[float(v) for v in data.get("start_log_posteriors", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            common.error_raise(FitConfigException, f"Invalid fit document: {exc}")


def _starting_points(theta: ParameterVector, config: FitConfig) -> list[np.ndarray]:
    optimizer = config.optimizer
    if optimizer.start == "spec":
        base = theta.values.copy()
    else:
        # prior mode, except unit diagonal b keeping every equation alive
        base = np.array(
            [
                config.priors.log_kappa_mean
                if kind == "kappa"
                else (1.0 if i == j else config.priors.b_mean)
                for kind, i, j in theta.entries
            ]
        )
    movable = np.array([kind == "kappa" or i != j for kind, i, j in theta.entries], dtype=float)
    delta = optimizer.start_perturbation * movable
    starts = [base]
    for k in range(1, optimizer.n_starts):
        sign = 1.0 if k % 2 else -1.0
        starts.append(base + sign * ((k + 1) // 2) * delta)
    return starts


@contextlib.contextmanager
def _executor(workers: int | None):
    workers = workers or common.worker_count()
    if workers <= 1:
        yield None
        return
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        yield executor


def fit(
    obs: ObservationSet,
    mesh: TriangulatedDomain | FemMatrices,
    config: FitConfig,
) -> FitResult:
    from scipy.optimize import minimize

    fem = _as_fem(mesh)
    if config.nugget_variance is not None:
        obs = obs.with_nugget(config.nugget_variance)
    theta0 = ParameterVector.pack(config.spec, free_entries(config), config.tie_noise_kappa)
    optimizer = config.optimizer

    cache: dict[bytes, float] = {}

    def objective(x: np.ndarray) -> float:
        key = np.asarray(x, dtype=float).tobytes()
        if key not in cache:
            cache[key] = -log_posterior(theta0.with_values(x), obs, fem, config)
        return cache[key]

    best = None
    start_values = []
    with _executor(optimizer.workers) as executor:

        def gradient(x: np.ndarray) -> np.ndarray:
            return finite_difference_gradient(objective, x, optimizer.fd_step, executor)

        for index, x0 in enumerate(_starting_points(theta0, config)):
            if not math.isfinite(objective(x0)):
                logger.warning(f"Start {index} rejected: log posterior is -inf")
                start_values.append(-math.inf)
                continue
            accepted = [-objective(x0)]
            result = minimize(
                objective,
                x0,
                jac=gradient,
                method="BFGS",
                callback=lambda xk: accepted.append(-objective(xk)),
                options={"gtol": optimizer.gtol, "maxiter": optimizer.max_iterations},
            )
            value = -float(result.fun)
            start_values.append(value)
            logger.info(f"Start {index}: log posterior {value} after {result.nit} iterations")
            if best is None or value > best[0]:
                best = (value, result, accepted)

        if best is None:
            common.error_raise(
                common.SpdeLabNumericException,
                "Every starting point was rejected by the log posterior",
            )
        value, result, accepted = best
        x = np.asarray(result.x, dtype=float)
        final_gradient = gradient(x)
        hessian = finite_difference_hessian(objective, x, optimizer.hessian_step, executor)

    gradient_norm = float(np.linalg.norm(final_gradient, ord=np.inf))
    converged = bool(result.success) or gradient_norm <= optimizer.gtol
    if not converged:
        logger.warning(f"Optimizer did not converge: {result.message}")

    estimates = theta0.with_values(x)
    std_devs, reliable = _standard_deviations(hessian, estimates)
    return FitResult(
        estimates=estimates,
        std_devs=std_devs,
        std_devs_reliable=reliable,
        log_posterior=value,
        convergence=Convergence(
            iterations=int(result.nit),
            gradient_norm=gradient_norm,
            converged=converged,
            message=str(result.message),
            accepted=accepted,
        ),
        nugget_variance=obs.nugget_variance.tolist(),
        start_log_posteriors=start_values,
    )


def _standard_deviations(hessian: np.ndarray, estimates: ParameterVector) -> tuple[np.ndarray, bool]:
    """Inverse curvature in packed space, delta method for the κ's."""
    reliable = bool(np.all(np.isfinite(hessian)))
    if reliable:
        try:
            np.linalg.cholesky(hessian)
        except np.linalg.LinAlgError:
            reliable = False
    if not reliable:
        logger.warning("Hessian at the mode is not positive definite; std devs unreliable")
    with np.errstate(invalid="ignore"):
        covariance = np.linalg.pinv(np.nan_to_num(hessian))
        packed = np.sqrt(np.abs(np.diag(covariance)))
    natural = np.where(estimates.kappa_mask, np.exp(estimates.values) * packed, packed)
    return natural, reliable


@dataclasses.dataclass
class Prediction:
    values: np.ndarray
    variances: np.ndarray
    relative_error: dict[int, float]


def relative_error(predicted: np.ndarray, observed: np.ndarray) -> float:
    """‖ŷ − y‖ / ‖ŷ‖."""
    numerator = float(np.linalg.norm(predicted - observed))
    denominator = float(np.linalg.norm(predicted))
    if numerator == 0:
        return 0.0
    return numerator / denominator if denominator else math.inf


def kriging_variances(conditional, A) -> np.ndarray:
    """diag(A Q_c⁻¹ Aᵀ), in column blocks."""
    factor = conditional.factor()
    A = A.tocsr()
    variances = np.empty(A.shape[0])
    for start in range(0, A.shape[0], gmrf_engine.SOLVE_BLOCK):
        rows = A[start : start + gmrf_engine.SOLVE_BLOCK]
        solved = factor.solve(rows.T.toarray())
        variances[start : start + rows.shape[0]] = np.einsum(
            "ij,ji->i", rows.toarray(), solved
        )
    return variances


def predict(
    fit_result: FitResult,
    obs: ObservationSet,
    targets: ObservationSet,
    mesh: TriangulatedDomain | FemMatrices,
) -> Prediction:
    fem = _as_fem(mesh)
    gmrf = build_precision(fit_result.spec, fem)
    obs = obs.with_nugget(fit_result.nugget_variance)
    mu_c, conditional = gmrf_engine.condition(gmrf, obs)
    values = targets.A @ mu_c
    variances = kriging_variances(conditional, targets.A)
    errors = {
        int(field): relative_error(values[targets.fields == field], targets.values[targets.fields == field])
        for field in np.unique(targets.fields)
    }
    logger.info(f"Relative prediction errors: {errors}")
    return Prediction(values=values, variances=variances, relative_error=errors)


class DerivedSummary(T.TypedDict):
    field: int
    std_dev: float
    correlation: list[float]
    effective_range: float | None


def derived_summaries(
    spec: SpdeSystemSpec,
    mesh: TriangulatedDomain | FemMatrices,
) -> list[DerivedSummary]:
    """
    Marginal standard deviation and co-located correlations at the vertex
    nearest the mesh centre.
    """
    from spdelab.matern import effective_range

    fem = _as_fem(mesh)
    gmrf = build_precision(spec, fem)
    vertices = fem.mesh.vertices
    centre = (vertices.min(axis=0) + vertices.max(axis=0)) / 2
    vertex = int(np.argmin(np.linalg.norm(vertices - centre, axis=1)))

    indices = [gmrf.index(i, vertex) for i in range(spec.p)]
    unit = np.zeros((gmrf.size, spec.p))
    unit[indices, np.arange(spec.p)] = 1.0
    covariance = gmrf.factor().solve(unit)[indices]
    std = np.sqrt(np.diag(covariance))
    correlation = covariance / np.outer(std, std)

    summaries = []
    for i in range(spec.p):
        exact_matern = i == 0 and (
            spec.noise_alpha[0] == 0 or spec.noise_kappa[0] == spec.kappa[0][0]
        )
        nu = spec.alpha[0][0] + spec.noise_alpha[0] - common.DIMENSION / 2
        summaries.append(
            DerivedSummary(
                field=i,
                std_dev=float(std[i]),
                correlation=correlation[i].tolist(),
                effective_range=effective_range(nu, spec.kappa[0][0]) if exact_matern and nu > 0 else None,
            )
        )
    return summaries
