import logging

import numpy as np
import pytest

import spdelab.artifacts as artifacts
import spdelab.compare as compare
import spdelab.fem as fem_assembly
import spdelab.gmrf as gmrf_engine
import spdelab.mesh as mesh_module
import spdelab.precision as precision
import spdelab.presets as presets
from spdelab.config import Provenance
from spdelab.inference import FitConfig, OptimizerConfig
from spdelab.matern import DenseFitConfig
from spdelab.mesh import Rectangle
from spdelab.precision import SpdeSystemSpec

logger = logging.getLogger(__name__)


@pytest.fixture(scope="module")
def small_fem():
    return fem_assembly.assemble(mesh_module.build_mesh(Rectangle(0.0, 0.0, 10.0, 10.0), 2.5))


def simulate(fem, spec, n, nugget, seed, extent=10.0):
    gmrf = precision.build_precision(spec, fem)
    rng = np.random.default_rng(seed)
    obs, _ = gmrf_engine.simulate_observations(
        gmrf, fem.mesh, rng.uniform(0.0, extent, (n, 2)), np.arange(n) % 2, nugget, seed
    )
    return obs


def fit_config(spec=None):
    return FitConfig(
        spec=spec or presets.get_preset("bivariate-positive"),
        optimizer=OptimizerConfig(n_starts=1, start="spec", workers=1),
    )


def test_split_sizes(small_fem):
    obs = simulate(small_fem, presets.get_preset("bivariate-positive"), 40, [0.1, 0.1], 1)
    train, test = compare.holdout_split(obs, 0.25, 3)
    assert len(test) == 10
    assert np.bincount(obs.fields[test]).tolist() == [5, 5]
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(40))


def test_split_is_seeded(small_fem):
    obs = simulate(small_fem, presets.get_preset("bivariate-positive"), 40, [0.1, 0.1], 1)
    first = compare.holdout_split(obs, 0.3, 9)
    assert all(np.array_equal(a, b) for a, b in zip(first, compare.holdout_split(obs, 0.3, 9)))
    assert not np.array_equal(first[1], compare.holdout_split(obs, 0.3, 10)[1])


def test_zero_fraction_trains_on_everything(small_fem):
    obs = simulate(small_fem, presets.get_preset("bivariate-positive"), 10, [0.1, 0.1], 1)
    train, test = compare.holdout_split(obs, 0.0, 3)
    assert train.tolist() == test.tolist() == list(range(10))


INVALID_SPLITS = [
    {"id": "whole", "fraction": 1.0, "n": 10},
    {"id": "negative", "fraction": -0.1, "n": 10},
    {"id": "rounds-to-all", "fraction": 0.8, "n": 4},
]


@pytest.mark.parametrize(
    "fraction,n",
    [pytest.param(td["fraction"], td["n"], id=td["id"]) for td in INVALID_SPLITS],
)
def test_invalid_holdout(small_fem, fraction, n):
    obs = simulate(small_fem, presets.get_preset("bivariate-positive"), n, [0.1, 0.1], 1)
    with pytest.raises(compare.HoldoutConfigException):
        compare.holdout_split(obs, fraction, 0)


def test_dense_smoothness():
    assert compare.dense_smoothness(presets.get_preset("bivariate-positive")) == [1.0, 1.0]
    assert compare.dense_smoothness(presets.get_preset("bivariate-mixed-noise")) == [2.0, 1.0]


def test_in_sample_comparison(small_fem):
    obs = simulate(small_fem, presets.get_preset("bivariate-positive"), 20, [0.1, 0.1], 4)
    report = compare.compare_models(obs, small_fem, fit_config(), 0.0, 4, DenseFitConfig(nu=[1.0, 1.0]))
    assert report["n_train"] == report["n_test"] == 20
    assert [row["field"] for row in report["relative_error"]] == [0, 1]
    for row in report["relative_error"]:
        assert row["spde"] > 0
        assert row["dense"] > 0
    assert report["dense"]["model"]["parsimonious"]
    assert "parameters" in report["spde"]


def test_report_is_reproducible(small_fem, tmp_path):
    obs = simulate(small_fem, presets.get_preset("bivariate-positive"), 24, [0.1, 0.1], 5)
    provenance = Provenance(config_hash="fixed", seed=5)
    written = []
    for name in ("first.json", "second.json"):
        report = compare.compare_models(obs, small_fem, fit_config(), 0.25, 5, DenseFitConfig(nu=[1.0, 1.0]))
        written.append(artifacts.write_json(tmp_path / name, report, provenance).read_bytes())
    assert written[0] == written[1]
    assert report["n_test"] == 6


@pytest.mark.slow
def test_matching_regime_models_agree():
    a = 0.5
    spec = SpdeSystemSpec(
        p=2,
        alpha=[[2, 0], [2, 2]],
        kappa=[[a, 0.0], [a, a]],
        b=[[1.0, 0.0], [-1.0, 1.0]],
        noise_alpha=[0, 0],
        noise_kappa=[a, a],
    )
    mesh = mesh_module.build_mesh(Rectangle(0.0, 0.0, 20.0, 20.0), 1.0, extension_margin=6.0)
    fem = fem_assembly.assemble(mesh)
    obs = simulate(fem, spec, 300, [0.01, 0.01], 21, extent=20.0)

    report = compare.compare_models(obs, fem, fit_config(spec), 0.2, 21)
    assert report["n_test"] == 60
    for row in report["relative_error"]:
        logger.info(f"field {row['field']}: spde={row['spde']:.4f} dense={row['dense']:.4f}")
        assert row["spde"] == pytest.approx(row["dense"], rel=0.1)
