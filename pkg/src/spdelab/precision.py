from __future__ import annotations

import dataclasses
import json
import logging
import pathlib
import typing as T

import scipy.sparse as sp

import spdelab.common as common
import spdelab.fem as fem_assembly

if T.TYPE_CHECKING:
    from spdelab.fem import FemMatrices
    from spdelab.gmrf import CholeskyFactor

logger = logging.getLogger(__name__)


OPERATOR_EXPONENTS = (0, 2)
SYMMETRY_TOLERANCE = 1e-10


class InvalidSpecException(common.SpdeLabConfigException):
    pass


class ShapeException(common.SpdeLabConfigException):
    pass


class IndefinitePrecisionException(common.SpdeLabNumericException):
    index: int | None = None


def dacite_config():
    import dacite

    return dacite.Config(type_hooks={float: float}, strict=True)


@dataclasses.dataclass
class SpdeSystemSpec:
    """
    Parameters θ of a p-variate system of SPDEs.

    Entry (i, j) of alpha/kappa/b describes the operator acting on field j
    in equation i.  Each equation is driven by independent Matérn-type
    noise with exponent noise_alpha[i] and scale noise_kappa[i].
    """

    p: int
    alpha: list[list[int]]
    kappa: list[list[float]]
    b: list[list[float]]
    noise_alpha: list[int]
    noise_kappa: list[float]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        p = self.p
        if p < 1:
            common.error_raise(ShapeException, f"p must be at least 1, got {p}")
        for name in ("alpha", "kappa", "b"):
            value = getattr(self, name)
            if len(value) != p or any(len(row) != p for row in value):
                common.error_raise(ShapeException, f"{name} must be {p}x{p}")
        for name in ("noise_alpha", "noise_kappa"):
            if len(getattr(self, name)) != p:
                common.error_raise(ShapeException, f"{name} must have length {p}")

        for i in range(p):
            if self.b[i][i] == 0:
                common.error_raise(InvalidSpecException, f"b[{i}][{i}] must be nonzero")
            if self.noise_alpha[i] < 0:
                common.error_raise(
                    InvalidSpecException,
                    f"noise_alpha[{i}] must be nonnegative, got {self.noise_alpha[i]}",
                )
            if self.noise_alpha[i] >= 1 and not self.noise_kappa[i] > 0:
                common.error_raise(
                    InvalidSpecException,
                    f"noise_kappa[{i}] must be positive, got {self.noise_kappa[i]}",
                )
            for j in range(p):
                if self.alpha[i][j] not in OPERATOR_EXPONENTS:
                    common.error_raise(
                        InvalidSpecException,
                        f"alpha[{i}][{j}] must be 0 or 2, got {self.alpha[i][j]}",
                    )
                if self.alpha[i][j] == 2 and not self.kappa[i][j] > 0:
                    common.error_raise(
                        InvalidSpecException,
                        f"kappa[{i}][{j}] must be positive, got {self.kappa[i][j]}",
                    )

    @property
    def triangular(self) -> bool:
        return all(self.b[i][j] == 0 for i in range(self.p) for j in range(i + 1, self.p))

    def replace(self, **changes) -> SpdeSystemSpec:
        data = self.to_dict()
        data.update(changes)
        return SpdeSystemSpec.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> SpdeSystemSpec:
        import dacite

        try:
            return dacite.from_dict(data_class=cls, data=data, config=dacite_config())
        except dacite.DaciteError as exc:
            common.error_raise(InvalidSpecException, f"Invalid spec document: {exc}")

    @classmethod
    def from_file(cls, filename: str | pathlib.Path) -> SpdeSystemSpec:
        import yaml

        try:
            with open(filename) as file:
                data = yaml.safe_load(file)
        except (OSError, yaml.YAMLError) as exc:
            common.error_raise(InvalidSpecException, f"Unable to read spec {filename}: {exc}")
        if not isinstance(data, dict):
            common.error_raise(InvalidSpecException, f"{filename} is not a mapping")
        return cls.from_dict(data)

    def save(self, filename: str | pathlib.Path) -> None:
        with open(filename, "w") as file:
            file.write(self.to_json())


def load_spec(source: str | pathlib.Path) -> SpdeSystemSpec:
    """A preset name or a JSON/YAML spec file."""
    import spdelab.presets as presets

    if str(source) in presets.PRESETS:
        return presets.get_preset(str(source))
    return SpdeSystemSpec.from_file(source)


@dataclasses.dataclass(eq=False)
class MultivariateGmrf:
    """
    Block precision of p fields on N vertices, field-major: field i occupies
    rows iN..(i+1)N-1.
    """

    Q: sp.csc_matrix
    p: int
    N: int
    _factor: CholeskyFactor | None = dataclasses.field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.p * self.N

    def index(self, field: int, vertex: int) -> int:
        return field * self.N + vertex

    def factor(self) -> CholeskyFactor:
        from spdelab.gmrf import factorize

        if self._factor is None:
            self._factor = factorize(self)
        return self._factor

    def export(self, filename: str | pathlib.Path) -> None:
        from scipy.io import mmwrite

        mmwrite(str(filename), sp.coo_matrix(self.Q), precision=17, symmetry="symmetric")


def noise_precision(fem: FemMatrices, noise_alpha: int, noise_kappa: float) -> sp.csc_matrix:
    if noise_alpha < 0 or int(noise_alpha) != noise_alpha:
        common.error_raise(
            fem_assembly.InvalidParameterException,
            f"noise_alpha must be a nonnegative integer, got {noise_alpha}",
        )
    if noise_alpha == 0:
        return fem.C_tilde
    K = fem_assembly.k_matrix(fem, noise_kappa**2)
    if noise_alpha == 1:
        return K
    C_inv = fem.C_tilde_inverse
    if noise_alpha == 2:
        return (K.T @ C_inv @ K).tocsc()
    inner = noise_precision(fem, noise_alpha - 2, noise_kappa)
    return (K.T @ C_inv @ inner @ C_inv @ K).tocsc()


def operator_block(fem: FemMatrices, alpha: int, kappa: float, b: float) -> sp.csc_matrix | None:
    if b == 0:
        return None
    if alpha == 0:
        return sp.identity(fem.N, format="csc") * b
    return fem_assembly.k_matrix(fem, kappa**2) * b


def block_matrices(
    spec: SpdeSystemSpec,
    fem: FemMatrices,
) -> tuple[sp.csc_matrix, sp.csc_matrix, sp.csc_matrix]:
    """D, K and Q_f of the block system."""
    if fem.C.shape != (fem.N, fem.N) or fem.G.shape != (fem.N, fem.N):
        common.error_raise(ShapeException, "FEM matrices disagree on vertex count")
    p, N = spec.p, fem.N
    blocks = [
        [operator_block(fem, spec.alpha[i][j], spec.kappa[i][j], spec.b[i][j]) for j in range(p)]
        for i in range(p)
    ]
    # bmat needs at least one block per block-row/column to infer shapes
    for i in range(p):
        if blocks[i][i] is None:
            blocks[i][i] = sp.csc_matrix((N, N))
    K = sp.bmat(blocks, format="csc")
    D = sp.block_diag([fem.C_tilde] * p, format="csc")
    Q_f = sp.block_diag(
        [noise_precision(fem, spec.noise_alpha[i], spec.noise_kappa[i]) for i in range(p)],
        format="csc",
    )
    return D, K, Q_f


def build_precision(
    spec: SpdeSystemSpec,
    fem: FemMatrices,
    check: bool = True,
) -> MultivariateGmrf:
    """
    Q = Kᵀ D⁻¹ Q_f D⁻¹ K.

    With check set the precision is factorized once, which raises
    IndefinitePrecisionException when Q is not positive definite; the
    factor is cached on the returned object.
    """
    D, K, Q_f = block_matrices(spec, fem)
    M = sp.diags(1.0 / D.diagonal()) @ K
    Q = (M.T @ Q_f @ M).tocsc()
    Q = ((Q + Q.T) * 0.5).tocsc()
    Q.sum_duplicates()
    Q.sort_indices()
    logger.debug(f"Built precision of size {Q.shape[0]} with nnz={Q.nnz}")

    gmrf = MultivariateGmrf(Q=Q, p=spec.p, N=fem.N)
    if check:
        gmrf.factor()
    return gmrf


def is_symmetric(matrix: sp.spmatrix, tolerance: float = SYMMETRY_TOLERANCE) -> bool:
    difference = abs(matrix - matrix.T).max()
    scale = abs(matrix).max() or 1.0
    return difference <= tolerance * scale
