from __future__ import annotations

import logging
import typing as T

import numpy as np

import spdelab.common as common
import spdelab.gmrf as gmrf_engine
import spdelab.inference as inference
import spdelab.matern as matern
import spdelab.spectral as spectral

from spdelab.gmrf import ObservationSet

if T.TYPE_CHECKING:
    from spdelab.fem import FemMatrices
    from spdelab.inference import FitConfig
    from spdelab.matern import DenseFitConfig
    from spdelab.mesh import TriangulatedDomain
    from spdelab.precision import SpdeSystemSpec

logger = logging.getLogger(__name__)


class HoldoutConfigException(common.SpdeLabConfigException):
    pass


def holdout_split(
    obs: ObservationSet,
    holdout_fraction: float,
    seed: gmrf_engine.RandomSource,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Seeded per-field split into (train rows, test rows).

    Each field loses round(fraction · n_field) observations; a zero
    fraction trains and tests on everything.
    """
    if not 0 <= holdout_fraction < 1:
        common.error_raise(
            HoldoutConfigException,
            f"holdout_fraction must be in [0, 1), got {holdout_fraction}",
        )
    rows = np.arange(obs.size)
    if holdout_fraction == 0:
        return rows, rows

    rng = gmrf_engine.generator(seed)
    test = []
    for field in range(obs.p):
        field_rows = rows[obs.fields == field]
        count = int(round(holdout_fraction * len(field_rows)))
        if count >= len(field_rows) and len(field_rows):
            common.error_raise(
                HoldoutConfigException,
                f"Holding out {count} of {len(field_rows)} observations leaves field {field} without training data",
            )
        test.extend(rng.permutation(field_rows)[:count].tolist())
    test = np.sort(np.asarray(test, dtype=np.int64))
    train = np.setdiff1d(rows, test)
    return train, test


def dense_smoothness(spec: SpdeSystemSpec) -> list[float]:
    """Matched ν's when the system allows it, otherwise α_ii + α_n,i − 1."""
    try:
        matched = spectral.match_parameters(spec)
        return [matched.nu11, matched.nu22]
    except common.SpdeLabException as exc:
        logger.debug(f"Smoothness not matched ({exc}); using diagonal exponents")
    return [
        max(spec.alpha[i][i] + spec.noise_alpha[i] - common.DIMENSION / 2, 0.5)
        for i in range(spec.p)
    ]


def _point_data(obs: ObservationSet) -> matern.PointData:
    return matern.PointData(
        locations=obs.locations,
        fields=obs.fields,
        values=obs.values,
        nugget_variance=obs.nugget_variance,
    )


def compare_models(
    obs: ObservationSet,
    mesh: TriangulatedDomain | FemMatrices,
    fit_config: FitConfig,
    holdout_fraction: float,
    seed: gmrf_engine.RandomSource,
    dense_config: DenseFitConfig | None = None,
) -> dict:
    """
    Fit the SPDE system and the parsimonious Matérn model on the same
    training rows and report per-field relative errors on the held-out rows.
    """
    fem = inference._as_fem(mesh)
    if fit_config.nugget_variance is not None:
        obs = obs.with_nugget(fit_config.nugget_variance)
    train_rows, test_rows = holdout_split(obs, holdout_fraction, seed)
    train, test = obs.subset(train_rows), obs.subset(test_rows)
    logger.info(f"Comparing models on {train.size} training and {test.size} test observations")

    spde_fit = inference.fit(train, fem, fit_config)
    spde_prediction = inference.predict(spde_fit, train, test, fem)

    if dense_config is None:
        dense_config = matern.DenseFitConfig(nu=dense_smoothness(spde_fit.spec))
    dense_fit = matern.fit_dense(_point_data(train), dense_config)
    dense_values, dense_variances = matern.dense_krige(dense_fit.model, _point_data(train), _point_data(test))

    fields = [int(field) for field in np.unique(test.fields)]
    dense_errors = {
        field: inference.relative_error(dense_values[test.fields == field], test.values[test.fields == field])
        for field in fields
    }
    rows = [
        {
            "field": field,
            "spde": spde_prediction.relative_error[field],
            "dense": dense_errors[field],
        }
        for field in fields
    ]
    return {
        "holdout_fraction": holdout_fraction,
        "n_train": train.size,
        "n_test": test.size,
        "test_rows": test_rows.tolist(),
        "relative_error": rows,
        "spde": spde_fit.to_dict(),
        "dense": {
            "model": dense_fit.model.to_dict(),
            "log_likelihood": dense_fit.log_likelihood,
            "converged": dense_fit.converged,
            "iterations": dense_fit.iterations,
        },
    }
