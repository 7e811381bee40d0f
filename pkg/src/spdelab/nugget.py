from __future__ import annotations

import dataclasses
import logging
import math
import typing as T

import numpy as np

import spdelab.common as common
import spdelab.gmrf as gmrf_engine
import spdelab.inference as inference

from spdelab.gmrf import ObservationSet
from spdelab.precision import build_precision, dacite_config

if T.TYPE_CHECKING:
    from spdelab.fem import FemMatrices
    from spdelab.inference import FitConfig, FitResult
    from spdelab.mesh import TriangulatedDomain

logger = logging.getLogger(__name__)


ESTIMATORS = ("weighted", "simple")
RESIDUAL_MODES = ("loo", "plugin")


class InsufficientDataException(common.SpdeLabConfigException):
    pass


class BiasCorrectionAbortedException(common.SpdeLabNumericException):
    state: NuggetState | None = None


class NuggetUpdate(T.NamedTuple):
    tau2: float
    clamped: bool


@dataclasses.dataclass
class NuggetConfig:
    tau2_init: list[float]
    max_iterations: int = 50
    tolerance: float = 1e-3
    estimator: str = "weighted"
    residuals: str = "loo"
    # Q_n needs τ² > 0; clamped fields are refitted at this value
    floor: float = 1e-8

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            common.error_raise(
                common.SpdeLabConfigException,
                f"estimator must be one of {ESTIMATORS}, got {self.estimator}",
            )
        if self.residuals not in RESIDUAL_MODES:
            common.error_raise(
                common.SpdeLabConfigException,
                f"residuals must be one of {RESIDUAL_MODES}, got {self.residuals}",
            )
        if not all(tau2 > 0 for tau2 in self.tau2_init):
            common.error_raise(
                common.SpdeLabConfigException,
                f"tau2_init must be positive, got {self.tau2_init}",
            )
        if self.max_iterations < 1:
            common.error_raise(common.SpdeLabConfigException, "max_iterations must be at least 1")

    @classmethod
    def from_dict(cls, data: dict) -> NuggetConfig:
        import dacite

        try:
            return dacite.from_dict(data_class=cls, data=data, config=dacite_config())
        except dacite.DaciteError as exc:
            common.error_raise(common.SpdeLabConfigException, f"Invalid nugget config: {exc}")


@dataclasses.dataclass
class NuggetState:
    tau2: np.ndarray
    iteration: int = 0
    history: list[list[float]] = dataclasses.field(default_factory=list)
    clamped: list[bool] = dataclasses.field(default_factory=list)
    converged: bool = False
    fit: FitResult | None = None

    def trajectory(self) -> list[dict]:
        return [
            {"iteration": iteration, **{f"tau2_field{i}": tau2 for i, tau2 in enumerate(row)}}
            for iteration, row in enumerate(self.history)
        ]


def _check_inputs(residuals, kriging_variances) -> tuple[np.ndarray, np.ndarray]:
    residuals = np.asarray(residuals, dtype=float).ravel()
    kriging_variances = np.asarray(kriging_variances, dtype=float).ravel()
    if len(residuals) < 2:
        common.error_raise(
            InsufficientDataException,
            f"Nugget update needs at least 2 points, got {len(residuals)}",
        )
    if len(residuals) != len(kriging_variances):
        common.error_raise(
            common.SpdeLabConfigException,
            "residuals and kriging_variances differ in length",
        )
    if (kriging_variances < 0).any():
        common.error_raise(common.SpdeLabConfigException, "Kriging variances must be nonnegative")
    return residuals, kriging_variances


def _clamp(value: float) -> NuggetUpdate:
    if value < 0:
        logger.warning(f"Nugget estimate {value} is negative, clamped to 0")
        return NuggetUpdate(0.0, True)
    return NuggetUpdate(float(value), False)


def weighted_nugget_update(
    residuals: T.Sequence[float],
    kriging_variances: T.Sequence[float],
    tau2_current: float,
) -> NuggetUpdate:
    """
    Σ wⱼ (rⱼ² − Vⱼ) with wⱼ ∝ 1/(τ² + Vⱼ).

    The weights use the current τ², so repeated application is a fixed-point
    iteration.
    """
    residuals, kriging_variances = _check_inputs(residuals, kriging_variances)
    with np.errstate(divide="ignore"):
        inverse = 1.0 / (tau2_current + kriging_variances)
    if not np.all(np.isfinite(inverse)):
        # τ² = 0 with exact interpolation points
        inverse = np.ones_like(kriging_variances)
    weights = inverse / inverse.sum()
    return _clamp(float(weights @ (residuals**2 - kriging_variances)))


def simple_nugget_update(
    residuals: T.Sequence[float],
    kriging_variances: T.Sequence[float],
    tau2_current: float | None = None,
) -> NuggetUpdate:
    residuals, kriging_variances = _check_inputs(residuals, kriging_variances)
    return _clamp(float(np.mean(residuals**2 - kriging_variances)))


def loo_residuals(
    obs: ObservationSet,
    mu_c: np.ndarray,
    conditional,
    mode: str = "loo",
) -> tuple[np.ndarray, np.ndarray]:
    """
    Residuals ŷ − y and kriging variances V of the latent value at each point.

    In "loo" mode observation j is removed by a rank-one down-date:
    ŷ = (m − q s y)/(1 − q s) and V = s/(1 − q s), where m and s are the
    full-data predictive mean and variance and q = 1/τ².
    """
    m = obs.A @ mu_c
    s = inference.kriging_variances(conditional, obs.A)
    if mode == "plugin":
        return m - obs.values, s
    q = 1.0 / obs.row_nugget
    denominator = 1.0 - q * s
    predicted = (m - q * s * obs.values) / denominator
    return predicted - obs.values, s / denominator


def _relative_change(new: np.ndarray, old: np.ndarray, floor: float) -> float:
    return float(np.max(np.abs(new - old) / np.maximum(old, floor)))


def run_bias_correction(
    obs: ObservationSet,
    mesh: TriangulatedDomain | FemMatrices,
    fit_config: FitConfig,
    config: NuggetConfig,
) -> NuggetState:
    """
    Alternate a fit at fixed τ² with a per-field nugget update until the
    largest relative change drops below the tolerance.
    """
    fem = inference._as_fem(mesh)
    update = weighted_nugget_update if config.estimator == "weighted" else simple_nugget_update
    tau2 = np.asarray(config.tau2_init, dtype=float)
    if len(tau2) != obs.p:
        common.error_raise(
            common.SpdeLabConfigException,
            f"tau2_init has {len(tau2)} entries for {obs.p} fields",
        )
    state = NuggetState(tau2=tau2.copy(), history=[tau2.tolist()])
    current = fit_config

    for iteration in range(1, config.max_iterations + 1):
        nugget = np.maximum(tau2, config.floor)
        current = dataclasses.replace(current, nugget_variance=nugget.tolist())
        try:
            result = inference.fit(obs, fem, current)
            working = obs.with_nugget(nugget)
            mu_c, conditional = gmrf_engine.condition(build_precision(result.spec, fem), working)
        except common.SpdeLabException as exc:
            common.error_raise(
                BiasCorrectionAbortedException,
                f"Fit failed in bias-correction iteration {iteration}: {exc}",
                state=state,
            )
        residuals, variances = loo_residuals(working, mu_c, conditional, config.residuals)

        updates = []
        for field in range(obs.p):
            rows = obs.fields == field
            updates.append(update(residuals[rows], variances[rows], float(tau2[field])))
        new_tau2 = np.array([u.tau2 for u in updates])
        change = _relative_change(new_tau2, tau2, config.floor)

        tau2 = new_tau2
        state.tau2 = tau2.copy()
        state.iteration = iteration
        state.history.append(tau2.tolist())
        state.clamped = [u.clamped for u in updates]
        state.fit = result
        logger.info(f"Bias correction iteration {iteration}: tau2={tau2.tolist()}, change={change}")

        if change < config.tolerance or math.isinf(config.tolerance):
            state.converged = True
            break
        # warm start the next fit from this mode
        current = dataclasses.replace(
            current,
            spec=result.spec,
            optimizer=dataclasses.replace(current.optimizer, start="spec", n_starts=1),
        )

    if not state.converged:
        logger.warning(f"Bias correction stopped after {state.iteration} iterations without converging")
    return state
