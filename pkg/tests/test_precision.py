import json
import logging

import numpy as np
import pytest
import scipy.sparse as sp

import spdelab.fem as fem_assembly
import spdelab.mesh as mesh_module
import spdelab.precision as precision
import spdelab.presets as presets
from spdelab.mesh import Rectangle
from spdelab.precision import SpdeSystemSpec

logger = logging.getLogger(__name__)


UNIT = Rectangle(0.0, 0.0, 1.0, 1.0)
# keeps κ·h near one for the table parameters
BOX = Rectangle(0.0, 0.0, 10.0, 10.0)


def fem_for(edge: float, region: Rectangle = BOX) -> fem_assembly.FemMatrices:
    return fem_assembly.assemble(mesh_module.build_mesh(region, edge))


def univariate(alpha=2, kappa=1.0, b=1.0, noise_alpha=0, noise_kappa=1.0) -> SpdeSystemSpec:
    return SpdeSystemSpec(
        p=1,
        alpha=[[alpha]],
        kappa=[[kappa]],
        b=[[b]],
        noise_alpha=[noise_alpha],
        noise_kappa=[noise_kappa],
    )


@pytest.fixture
def right_triangle():
    mesh = mesh_module.from_triangles(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), [[0, 1, 2]])
    return fem_assembly.assemble(mesh)


INVALID_SPECS = [
    {"id": "zero-diagonal-b", "changes": {"b": [[0.0, 0.0], [1.0, 1.0]]}, "error": precision.InvalidSpecException},
    {"id": "odd-alpha", "changes": {"alpha": [[1, 0], [2, 2]]}, "error": precision.InvalidSpecException},
    {"id": "zero-kappa", "changes": {"kappa": [[0.0, 0.0], [0.5, 0.3]]}, "error": precision.InvalidSpecException},
    {"id": "negative-noise-alpha", "changes": {"noise_alpha": [-1, 0]}, "error": precision.InvalidSpecException},
    {"id": "zero-noise-kappa", "changes": {"noise_alpha": [1, 0], "noise_kappa": [0.0, 0.3]}, "error": precision.InvalidSpecException},
    {"id": "short-b", "changes": {"b": [[1.0, 0.0]]}, "error": precision.ShapeException},
    {"id": "short-noise", "changes": {"noise_kappa": [0.3]}, "error": precision.ShapeException},
]


@pytest.mark.parametrize(
    "changes,error",
    [pytest.param(td["changes"], td["error"], id=td["id"]) for td in INVALID_SPECS],
)
def test_invalid_spec(changes, error):
    spec = presets.get_preset("bivariate-positive")
    with pytest.raises(error):
        spec.replace(**changes)


def test_kappa_ignored_where_alpha_is_zero():
    spec = presets.get_preset("bivariate-positive")
    assert spec.kappa[0][1] == 0.0
    assert spec.triangular


@pytest.mark.parametrize("name", list(presets.PRESETS))
def test_spec_json_round_trip(name):
    spec = presets.get_preset(name)
    assert SpdeSystemSpec.from_dict(json.loads(spec.to_json())) == spec


def test_spec_file_round_trip(tmp_path):
    spec = presets.get_preset("trivariate")
    spec.save(tmp_path / "spec.json")
    assert precision.load_spec(tmp_path / "spec.json") == spec
    assert precision.load_spec("trivariate") == spec


def test_spec_yaml_with_integers(tmp_path):
    (tmp_path / "spec.yaml").write_text(
        "p: 1\nalpha: [[2]]\nkappa: [[1]]\nb: [[2]]\nnoise_alpha: [0]\nnoise_kappa: [1]\n"
    )
    spec = SpdeSystemSpec.from_file(tmp_path / "spec.yaml")
    assert spec.b == [[2.0]]
    assert isinstance(spec.kappa[0][0], float)


def test_unknown_preset():
    with pytest.raises(precision.InvalidSpecException):
        presets.get_preset("no-such-preset")


def test_noise_precision_white(right_triangle):
    Q = precision.noise_precision(right_triangle, 0, 1.0)
    assert Q.toarray() == pytest.approx(right_triangle.C_tilde.toarray())


def test_noise_precision_base(right_triangle):
    Q = precision.noise_precision(right_triangle, 1, 0.7)
    assert Q.toarray() == pytest.approx(fem_assembly.k_matrix(right_triangle, 0.7**2).toarray(), rel=1e-15)


def test_noise_precision_alpha_two(right_triangle):
    K = fem_assembly.k_matrix(right_triangle, 4.0).toarray()
    C_inv = np.diag(1.0 / right_triangle.C_lumped)
    Q = precision.noise_precision(right_triangle, 2, 2.0).toarray()
    assert Q == pytest.approx(K.T @ C_inv @ K, rel=1e-12)


def test_noise_precision_alpha_three():
    fem = fem_for(2.5)
    assert fem.N <= 50
    K = fem_assembly.k_matrix(fem, 0.25).toarray()
    C_inv = np.diag(1.0 / fem.C_lumped)
    expected = K.T @ C_inv @ K @ C_inv @ K
    Q = precision.noise_precision(fem, 3, 0.5).toarray()
    assert np.abs(Q - expected).max() <= 1e-10 * np.abs(expected).max()


def test_noise_precision_negative(right_triangle):
    with pytest.raises(fem_assembly.InvalidParameterException):
        precision.noise_precision(right_triangle, -1, 1.0)


def test_univariate_block():
    fem = fem_for(2.5)
    spec = univariate(kappa=0.8, b=1.5)
    D, K, Q_f = precision.block_matrices(spec, fem)
    expected = 1.5 * fem_assembly.k_matrix(fem, 0.64).toarray()
    assert K.toarray() == pytest.approx(expected, rel=1e-12)
    assert D.toarray() == pytest.approx(fem.C_tilde.toarray())


def test_triangular_upper_block_empty():
    fem = fem_for(2.5)
    _, K, _ = precision.block_matrices(presets.get_preset("bivariate-positive"), fem)
    N = fem.N
    assert K[:N, N:].nnz == 0
    assert K[N:, :N].nnz > 0


def test_trivariate_blocks():
    fem = fem_for(2.5)
    _, K, _ = precision.block_matrices(presets.get_preset("trivariate"), fem)
    N = fem.N
    nonzero = [
        (i, j)
        for i in range(3)
        for j in range(3)
        if abs(K[i * N : (i + 1) * N, j * N : (j + 1) * N]).sum() > 0
    ]
    assert nonzero == [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]


def test_alpha_zero_block_is_scaled_identity():
    fem = fem_for(2.5)
    spec = SpdeSystemSpec(
        p=2,
        alpha=[[2, 0], [0, 2]],
        kappa=[[1.0, 0.0], [0.0, 1.0]],
        b=[[1.0, 0.0], [-0.5, 1.0]],
        noise_alpha=[0, 0],
        noise_kappa=[1.0, 1.0],
    )
    _, K, _ = precision.block_matrices(spec, fem)
    N = fem.N
    assert K[N:, :N].toarray() == pytest.approx(-0.5 * np.eye(N))


def test_univariate_precision():
    fem = fem_for(2.5)
    gmrf = precision.build_precision(univariate(kappa=2.0), fem)
    K = fem_assembly.k_matrix(fem, 4.0).toarray()
    expected = K @ np.diag(1.0 / fem.C_lumped) @ K
    assert gmrf.Q.toarray() == pytest.approx(expected, rel=1e-10)


def test_dense_system_oracle():
    fem = fem_for(2.5)
    assert fem.N <= 25
    spec = presets.get_preset("bivariate-positive")
    D, K, Q_f = (matrix.toarray() for matrix in precision.block_matrices(spec, fem))
    K_inv = np.linalg.inv(K)
    # x = K⁻¹ D f with f ~ N(0, Q_f⁻¹)
    covariance = K_inv @ D @ np.linalg.inv(Q_f) @ D @ K_inv.T

    Q = precision.build_precision(spec, fem).Q.toarray()
    Q_inv = np.linalg.inv(Q)
    assert np.abs(Q_inv - covariance).max() <= 1e-8 * np.abs(covariance).max()


@pytest.mark.parametrize("name", list(presets.PRESETS))
def test_precision_symmetric_positive_definite(name):
    fem = fem_for(2.5)
    gmrf = precision.build_precision(presets.get_preset(name), fem)
    assert precision.is_symmetric(gmrf.Q)
    assert gmrf.Q.format == "csc"
    assert gmrf.size == gmrf.p * fem.N
    assert np.isfinite(gmrf.factor().logdet)
    assert np.linalg.eigvalsh(gmrf.Q.toarray()).min() > 0


def test_permutation_invariance():
    mesh = mesh_module.build_mesh(BOX, 2.5)
    spec = presets.get_preset("bivariate-mixed-noise")
    rng = np.random.default_rng(11)
    order = rng.permutation(mesh.n_vertices)
    inverse = np.argsort(order)
    relabelled = mesh_module.from_triangles(mesh.vertices[order], inverse[mesh.triangles])

    Q = precision.build_precision(spec, fem_assembly.assemble(mesh)).Q.toarray()
    Q_relabelled = precision.build_precision(spec, fem_assembly.assemble(relabelled)).Q.toarray()
    full = np.concatenate([order + i * mesh.n_vertices for i in range(spec.p)])
    assert Q_relabelled == pytest.approx(Q[np.ix_(full, full)], rel=1e-10, abs=1e-12)


def test_sparsity_scales_linearly():
    spec = presets.get_preset("bivariate-positive")
    ratios = []
    for edge in (0.05, 0.025, 0.0125):
        gmrf = precision.build_precision(spec, fem_for(edge, UNIT), check=False)
        ratios.append(gmrf.Q.nnz / gmrf.N)
    logger.debug(f"nnz per vertex {ratios}")
    assert max(ratios) / min(ratios) < 1.2


def test_export(tmp_path):
    from scipy.io import mmread

    gmrf = precision.build_precision(univariate(), fem_for(5.0))
    gmrf.export(tmp_path / "Q.mtx")
    assert sp.csr_matrix(mmread(str(tmp_path / "Q.mtx"))).toarray() == pytest.approx(gmrf.Q.toarray())
