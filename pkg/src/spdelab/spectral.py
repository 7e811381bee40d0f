from __future__ import annotations

import dataclasses
import logging
import math
import typing as T

import numpy as np
from scipy.special import gamma

import spdelab.common as common

from spdelab.precision import SpdeSystemSpec

logger = logging.getLogger(__name__)


D = common.DIMENSION
KAPPA_TOLERANCE = 1e-12


class SingularSymbolException(common.SpdeLabNumericException):
    det: float | None = None


class NotTriangularException(common.SpdeLabConfigException):
    pass


class MatchingRegimeException(common.SpdeLabConfigException):
    pass


class InconsistentParametersException(common.SpdeLabNumericException):
    pass


class SpectrumRow(T.TypedDict):
    k: float
    S11: float
    S12: float
    S22: float


@dataclasses.dataclass(frozen=True)
class OperatorSymbol:
    b: float
    kappa: float
    alpha: int

    def __call__(self, k: T.Sequence[float] | float) -> float:
        return operator_symbol(self.b, self.kappa, self.alpha, k)


@dataclasses.dataclass
class MatchedMaternParams:
    sigma1: float
    sigma2: float
    rho12: float
    nu11: float
    nu12: float
    nu22: float
    a: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _norm2(k: T.Sequence[float] | float) -> float:
    k = np.atleast_1d(np.asarray(k, dtype=float))
    return float(k @ k) if k.size > 1 else float(k[0] ** 2)


def operator_symbol(b: float, kappa: float, alpha: int, k: T.Sequence[float] | float) -> float:
    """b·(κ² + ‖k‖²)^{α/2}; k may be a frequency vector or its norm."""
    if alpha == 0:
        return float(b)
    return float(b * (kappa**2 + _norm2(k)) ** (alpha / 2))


def noise_spectrum(noise_alpha: int, noise_kappa: float, k: T.Sequence[float] | float) -> float:
    """(2π)^{-d}(κ_n² + ‖k‖²)^{-α_n} with unit noise variance."""
    white = (2 * math.pi) ** (-D)
    if noise_alpha == 0:
        return white
    return white * (noise_kappa**2 + _norm2(k)) ** (-noise_alpha)


def symbol_matrix(spec: SpdeSystemSpec, k: T.Sequence[float] | float) -> np.ndarray:
    return np.array(
        [
            [
                operator_symbol(spec.b[i][j], spec.kappa[i][j], spec.alpha[i][j], k)
                for j in range(spec.p)
            ]
            for i in range(spec.p)
        ]
    )


def _require_bivariate(spec: SpdeSystemSpec) -> None:
    if spec.p != 2:
        common.error_raise(
            common.SpdeLabConfigException,
            f"Closed-form spectra need p=2, got p={spec.p}",
        )


def power_spectrum_full(spec: SpdeSystemSpec, k: T.Sequence[float] | float) -> np.ndarray:
    _require_bivariate(spec)
    H = symbol_matrix(spec, k)
    det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
    if det == 0:
        common.error_raise(
            SingularSymbolException,
            f"Operator symbol is singular at k={k} (det={det})",
            det=det,
        )
    Sf1 = noise_spectrum(spec.noise_alpha[0], spec.noise_kappa[0], k)
    Sf2 = noise_spectrum(spec.noise_alpha[1], spec.noise_kappa[1], k)
    det2 = det**2
    S11 = (H[1, 1] ** 2 * Sf1 + H[0, 1] ** 2 * Sf2) / det2
    S12 = -(H[1, 1] * H[1, 0] * Sf1 + H[0, 1] * H[0, 0] * Sf2) / det2
    S22 = (H[1, 0] ** 2 * Sf1 + H[0, 0] ** 2 * Sf2) / det2
    return np.array([[S11, S12], [S12, S22]])


def power_spectrum_triangular(spec: SpdeSystemSpec, k: T.Sequence[float] | float) -> np.ndarray:
    _require_bivariate(spec)
    if spec.b[0][1] != 0:
        common.error_raise(
            NotTriangularException,
            f"b[0][1] must be zero for the triangular system, got {spec.b[0][1]}",
        )
    H = symbol_matrix(spec, k)
    H11, H21, H22 = H[0, 0], H[1, 0], H[1, 1]
    if H11 == 0 or H22 == 0:
        common.error_raise(
            SingularSymbolException,
            f"Operator symbol is singular at k={k}",
            det=H11 * H22,
        )
    Sf1 = noise_spectrum(spec.noise_alpha[0], spec.noise_kappa[0], k)
    Sf2 = noise_spectrum(spec.noise_alpha[1], spec.noise_kappa[1], k)
    S11 = Sf1 / H11**2
    S12 = -Sf1 * H21 / (H22 * H11**2)
    S22 = (H21**2 * Sf1 + H11**2 * Sf2) / (H11**2 * H22**2)
    return np.array([[S11, S12], [S12, S22]])


def power_spectrum_general(spec: SpdeSystemSpec, k: T.Sequence[float] | float) -> np.ndarray:
    """H⁻¹ S_f H⁻ᴴ by dense complex arithmetic, any p."""
    H = symbol_matrix(spec, k).astype(complex)
    S_f = np.diag(
        [noise_spectrum(spec.noise_alpha[i], spec.noise_kappa[i], k) for i in range(spec.p)]
    ).astype(complex)
    try:
        H_inv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        common.error_raise(
            SingularSymbolException,
            f"Operator symbol is singular at k={k}",
            det=float(abs(np.linalg.det(H))),
        )
    return H_inv @ S_f @ H_inv.conj().T


def matern_spectrum(sigma2: float, nu: float, a: float, d: int, k: T.Sequence[float] | float) -> float:
    if not (sigma2 > 0 and nu > 0 and a > 0):
        common.error_raise(
            common.SpdeLabConfigException,
            f"Matérn spectrum needs positive sigma2, nu, a (got {sigma2}, {nu}, {a})",
        )
    return float(
        (2 * math.pi) ** (-d)
        * a ** (2 * nu)
        * (4 * math.pi) ** (d / 2)
        * sigma2
        * gamma(nu + d / 2)
        / ((a**2 + _norm2(k)) ** (nu + d / 2) * gamma(nu))
    )


def _matern_scale(nu: float, a: float, d: int = D) -> float:
    """Γ(ν) / ((4π)^{d/2} a^{2ν} Γ(ν+d/2)), the spectral-to-variance factor."""
    return gamma(nu) / ((4 * math.pi) ** (d / 2) * a ** (2 * nu) * gamma(nu + d / 2))


def _check_matching_regime(spec: SpdeSystemSpec) -> float:
    # κ's only matter where they enter a symbol
    kappas = [spec.kappa[i][j] for i in range(2) for j in range(2) if spec.alpha[i][j] == 2]
    kappas += [spec.noise_kappa[i] for i in range(2) if spec.noise_alpha[i] > 0]
    a = kappas[0]
    if any(abs(kappa - a) > KAPPA_TOLERANCE * max(1.0, abs(a)) for kappa in kappas):
        common.error_raise(
            MatchingRegimeException,
            f"Parameter matching needs all κ equal, got {kappas}",
        )
    return a


def match_parameters(spec: SpdeSystemSpec, d: int = D) -> MatchedMaternParams:
    _require_bivariate(spec)
    if not spec.triangular:
        common.error_raise(NotTriangularException, "Parameter matching needs b[0][1] = 0")
    a = _check_matching_regime(spec)

    alpha11, alpha21, alpha22 = spec.alpha[0][0], spec.alpha[1][0], spec.alpha[1][1]
    noise1, noise2 = spec.noise_alpha
    b11, b21, b22 = spec.b[0][0], spec.b[1][0], spec.b[1][1]

    nu11 = alpha11 + noise1 - d / 2
    nu12 = alpha11 + alpha22 / 2 + noise1 - alpha21 / 2 - d / 2
    if b21 == 0 or alpha21 + noise2 <= alpha11 + noise1:
        nu22 = noise2 + alpha22 - d / 2
    else:
        nu22 = alpha11 + alpha22 + noise1 - alpha21 - d / 2
    if b21 != 0 and alpha21 + noise2 == alpha11 + noise1:
        other = alpha11 + alpha22 + noise1 - alpha21 - d / 2
        if not math.isclose(nu22, other):
            common.error_raise(
                InconsistentParametersException,
                f"Smoothness of field 2 disagrees between branches: {nu22} != {other}",
            )

    for name, nu in (("nu11", nu11), ("nu12", nu12), ("nu22", nu22)):
        if not nu > 0:
            common.error_raise(
                InconsistentParametersException,
                f"Matched smoothness {name}={nu} is not positive",
            )

    sigma11 = _matern_scale(nu11, a, d) / b11**2
    cross = -b21 / (b22 * b11**2) * _matern_scale(nu12, a, d)
    sigma22 = (b21**2 + b11**2) / (b11**2 * b22**2) * _matern_scale(nu22, a, d)
    sigma1, sigma2 = math.sqrt(sigma11), math.sqrt(sigma22)
    rho12 = cross / (sigma1 * sigma2)
    if abs(rho12) > 1:
        common.error_raise(
            InconsistentParametersException,
            f"Matched co-located correlation {rho12} outside [-1, 1]",
        )
    logger.debug(f"Matched nu=({nu11}, {nu12}, {nu22}), sigma=({sigma1}, {sigma2}), rho={rho12}")
    return MatchedMaternParams(
        sigma1=sigma1,
        sigma2=sigma2,
        rho12=rho12,
        nu11=nu11,
        nu12=nu12,
        nu22=nu22,
        a=a,
    )


def spectra_table(spec: SpdeSystemSpec, k_values: T.Sequence[float]) -> list[SpectrumRow]:
    """Spectral entries along the first frequency axis."""
    spectrum = power_spectrum_triangular if spec.triangular else power_spectrum_full
    rows = []
    for k in k_values:
        S = spectrum(spec, [float(k), 0.0])
        rows.append(SpectrumRow(k=float(k), S11=S[0, 0], S12=S[0, 1], S22=S[1, 1]))
    return rows


def loglog_slope(values: T.Sequence[float], k_values: T.Sequence[float]) -> float:
    """Slope of log|values| against log k over the last two samples."""
    values = np.abs(np.asarray(values, dtype=float))
    k_values = np.asarray(k_values, dtype=float)
    return float(
        (np.log(values[-1]) - np.log(values[-2])) / (np.log(k_values[-1]) - np.log(k_values[-2]))
    )
