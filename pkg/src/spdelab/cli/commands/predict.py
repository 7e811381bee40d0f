import json
import logging

import click

import spdelab.artifacts as artifacts
import spdelab.cli.cli_common as cli_common
import spdelab.common as common
import spdelab.config as config
import spdelab.inference as inference

logger = logging.getLogger(__name__)


@click.command(name="predict", help="Krige held-out targets from a fitted model")
@cli_common.shared_options.debug
@cli_common.shared_options.log_file
@click.option(
    "--fit",
    "fit_file",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="fit.json written by `spdelab fit`",
)
@cli_common.shared_options.data
@click.option(
    "--targets",
    "targets_file",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="Target CSV (x,y,field,value); values are used for relative errors",
)
@cli_common.shared_options.mesh
@cli_common.shared_options.out
def predict_command(debug, log_file, fit_file, data_file, targets_file, mesh_file, out):
    cli_common.start(debug, log_file)
    run = cli_common.run_config(
        "predict",
        fit_file=fit_file,
        data_file=data_file,
        targets_file=targets_file,
        mesh_file=mesh_file,
        out=out,
    )
    try:
        with open(fit_file) as file:
            result = inference.FitResult.from_dict(json.load(file))
    except json.JSONDecodeError as exc:
        common.error_raise(config.RunConfigException, f"Unable to read {fit_file}: {exc}")

    mesh = cli_common.load_mesh(mesh_file)
    p = result.spec.p
    obs = artifacts.ingest_observations(data_file, mesh, p, result.nugget_variance)
    targets = artifacts.ingest_observations(targets_file, mesh, p, result.nugget_variance)
    prediction = inference.predict(result, obs, targets, mesh)
    artifacts.write_csv(
        out,
        artifacts.kriging_rows(targets, prediction.values, prediction.variances),
        run.provenance,
    )
    cli_common.output_data(
        [{"field": field, "relative_error": error} for field, error in prediction.relative_error.items()]
    )
