import logging
import math

import numpy as np
import pytest
from scipy import special, stats

import spdelab.matern as matern
from spdelab.matern import MaternCrossCovariance, PointData

logger = logging.getLogger(__name__)


def bivariate(rho=-0.5, sigma=(2.0, 3.0), nu=(1.0, 1.0), a=1.0) -> MaternCrossCovariance:
    return MaternCrossCovariance.build_parsimonious(sigma, nu, a, [[1.0, rho], [rho, 1.0]])


def points(locations, fields, values=None, nugget=(0.0, 0.0)) -> PointData:
    locations = np.asarray(locations, dtype=float).reshape(-1, 2)
    return PointData(
        locations=locations,
        fields=np.asarray(fields, dtype=np.int64),
        values=np.zeros(len(locations)) if values is None else np.asarray(values, dtype=float),
        nugget_variance=np.asarray(nugget, dtype=float),
    )


def test_correlation_at_zero():
    assert matern.matern_correlation(0.0, 1.3, 0.7) == 1.0
    assert np.all(matern.matern_correlation(np.zeros(3), 0.5, 2.0) == 1.0)


def test_exponential_special_case():
    h = np.linspace(0.0, 5.0, 21)
    assert matern.matern_correlation(h, 0.5, 1.7) == pytest.approx(np.exp(-1.7 * h), rel=1e-10)


def test_bessel_value():
    assert matern.matern_correlation(2.0, 1.0, 1.0) == pytest.approx(0.2797317636, rel=1e-9)
    assert matern.matern_correlation(2.0, 1.0, 1.0) == pytest.approx(2 * special.kv(1, 2.0), rel=1e-12)


def test_correlation_decreases():
    values = matern.matern_correlation(np.linspace(0.0, 10.0, 101), 1.5, 0.8)
    assert np.all(np.diff(values) < 0)
    assert np.all(values > 0)


EFFECTIVE_RANGES = [
    {"id": "exponential", "nu": 0.5, "a": 1.0, "range": 2.0},
    {"id": "whittle", "nu": 1.0, "a": 2.0, "range": math.sqrt(2)},
]


@pytest.mark.parametrize(
    "nu,a,expected",
    [pytest.param(td["nu"], td["a"], td["range"], id=td["id"]) for td in EFFECTIVE_RANGES],
)
def test_effective_range(nu, a, expected):
    assert matern.effective_range(nu, a) == pytest.approx(expected)


@pytest.mark.parametrize("nu", [0.5, 1.0, 1.5, 2.0])
def test_correlation_at_effective_range(nu):
    a = 0.3
    value = matern.matern_correlation(matern.effective_range(nu, a), nu, a)
    assert value == pytest.approx(0.135, abs=0.01)


def test_parsimonious_constraints():
    model = MaternCrossCovariance(
        p=2,
        sigma=[1.0, 1.0],
        nu=[[0.5, 0.0], [0.0, 2.5]],
        a=[[0.4, 9.0], [9.0, 9.0]],
        rho=[[5.0, 0.3], [0.3, 5.0]],
        parsimonious=True,
    )
    assert model.a == [[0.4, 0.4], [0.4, 0.4]]
    assert model.nu[0][1] == model.nu[1][0] == 1.5
    assert model.rho[0][0] == model.rho[1][1] == 1.0


def test_colocated_covariance():
    covariance = matern.assemble_covariance(bivariate(), [[0.0, 0.0], [0.0, 0.0]], [0, 1])
    assert covariance == pytest.approx(np.array([[4.0, -3.0], [-3.0, 9.0]]))


def test_far_apart_blocks_vanish():
    model = bivariate()
    separation = 10 * matern.effective_range(1.0, 1.0)
    locations = [[0.0, 0.0], [0.0, 0.0], [separation, 0.0], [separation, 0.0]]
    covariance = matern.assemble_covariance(model, locations, [0, 1, 0, 1])
    assert np.abs(covariance[:2, 2:]).max() <= 1e-6
    assert covariance[:2, :2] == pytest.approx(covariance[2:, 2:])


def test_invalid_correlation_fails_factorization():
    rng = np.random.default_rng(3)
    locations = rng.uniform(0.0, 5.0, (25, 2))
    # both fields at every location
    locations = np.repeat(locations, 2, axis=0)
    fields = np.tile([0, 1], 25)
    matern.assemble_covariance(bivariate(rho=0.5, nu=(0.5, 2.5)), locations, fields)

    failed_at = None
    for rho in np.arange(0.5, 1.06, 0.05):
        try:
            matern.assemble_covariance(bivariate(rho=float(rho), nu=(0.5, 2.5)), locations, fields)
        except matern.InvalidModelException:
            failed_at = float(rho)
            break
    assert failed_at is not None
    assert failed_at <= 1.05


def test_permutation_equivariance():
    rng = np.random.default_rng(11)
    locations = rng.uniform(0.0, 3.0, (12, 2))
    fields = rng.integers(0, 2, 12)
    order = rng.permutation(12)
    model = bivariate(rho=0.4)
    covariance = matern.assemble_covariance(model, locations, fields)
    permuted = matern.assemble_covariance(model, locations[order], fields[order])
    assert permuted == pytest.approx(covariance[np.ix_(order, order)], rel=1e-14)


def test_from_matched():
    from spdelab.spectral import MatchedMaternParams

    matched = MatchedMaternParams(sigma1=0.5, sigma2=2.0, rho12=-0.3, nu11=1.0, nu12=1.5, nu22=2.0, a=0.7)
    model = MaternCrossCovariance.from_matched(matched)
    covariance = matern.assemble_covariance(model, [[1.0, 1.0], [1.0, 1.0]], [0, 1])
    assert covariance == pytest.approx(np.array([[0.25, -0.3], [-0.3, 4.0]]))
    assert model.nu[0][1] == 1.5


def test_krige_interpolates_without_nugget():
    observations = points([[0.0, 0.0], [1.0, 0.5], [2.0, 2.0]], [0, 0, 1], [1.5, -0.4, 2.0])
    targets = points([[1.0, 0.5], [2.0, 2.0]], [0, 1])
    means, variances = matern.dense_krige(bivariate(), observations, targets)
    assert means == pytest.approx([-0.4, 2.0], abs=1e-10)
    assert variances == pytest.approx([0.0, 0.0], abs=1e-9)


def test_krige_without_observations_returns_prior():
    means, variances = matern.dense_krige(bivariate(), points([], []), points([[0.3, 0.3], [0.1, 0.2]], [0, 1]))
    assert means.tolist() == [0.0, 0.0]
    assert variances == pytest.approx([4.0, 9.0])


def test_krige_cross_field_sign():
    model = bivariate(rho=-0.9, sigma=(1.0, 1.0))
    observations = points([[0.0, 0.0]], [0], [2.0], nugget=(0.1, 0.1))
    means, variances = matern.dense_krige(model, observations, points([[0.0, 0.0]], [1]))
    assert means[0] == pytest.approx(-0.9 * 2.0 / 1.1)
    assert means[0] < 0
    assert variances[0] == pytest.approx(1 - 0.81 / 1.1)


def test_krige_singular_observations():
    observations = points([[0.0, 0.0], [0.0, 0.0]], [0, 0], [1.0, 1.0])
    with pytest.raises(matern.DenseConditioningException):
        matern.dense_krige(bivariate(), observations, points([[1.0, 1.0]], [0]))


def test_log_likelihood_matches_scipy():
    rng = np.random.default_rng(5)
    locations = rng.uniform(0.0, 4.0, (20, 2))
    fields = rng.integers(0, 2, 20)
    values = rng.normal(size=20)
    nugget = (0.05, 0.2)
    model = bivariate(rho=0.3, nu=(1.0, 2.0), a=0.8)
    observations = points(locations, fields, values, nugget)

    covariance = matern.assemble_covariance(model, locations, fields) + np.diag(np.asarray(nugget)[fields])
    expected = stats.multivariate_normal(mean=np.zeros(20), cov=covariance).logpdf(values)
    assert matern.log_likelihood(model, observations) == pytest.approx(expected, rel=1e-10)


def test_fit_dense_beats_truth():
    truth = bivariate(rho=0.6, sigma=(1.0, 2.0), nu=(1.0, 1.0), a=1.0)
    rng = np.random.default_rng(17)
    locations = np.repeat(rng.uniform(0.0, 6.0, (30, 2)), 2, axis=0)
    fields = np.tile([0, 1], 30)
    nugget = (0.01, 0.01)
    covariance = matern.assemble_covariance(truth, locations, fields) + 0.01 * np.eye(60)
    values = rng.multivariate_normal(np.zeros(60), covariance)
    observations = points(locations, fields, values, nugget)

    result = matern.fit_dense(observations, matern.DenseFitConfig(nu=[1.0, 1.0]))
    assert result.model.parsimonious
    assert result.iterations > 0
    assert result.log_likelihood >= matern.log_likelihood(truth, observations) - 1e-6
    assert result.log_likelihood == pytest.approx(matern.log_likelihood(result.model, observations))
