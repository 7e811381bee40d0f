import logging

import click

import spdelab.artifacts as artifacts
import spdelab.cli.cli_common as cli_common
import spdelab.common as common
import spdelab.config as config
import spdelab.fem as fem_assembly
import spdelab.inference as inference

logger = logging.getLogger(__name__)


def nugget_from(fit_config: inference.FitConfig, config_file: str) -> list[float]:
    if fit_config.nugget_variance is None:
        common.error_raise(config.RunConfigException, f"{config_file} must set nugget_variance")
    return fit_config.nugget_variance


@click.command(name="fit", help="Posterior mode of the SPDE parameters")
@cli_common.shared_options.debug
@cli_common.shared_options.log_file
@cli_common.shared_options.data
@cli_common.shared_options.mesh
@cli_common.shared_options.config
@click.option("--workers", type=int, default=None, help="Finite-difference worker threads")
@cli_common.shared_options.out
def fit_command(debug, log_file, data_file, mesh_file, config_file, workers, out):
    cli_common.start(debug, log_file)
    overrides = {"optimizer": {"workers": workers}} if workers else {}
    run = cli_common.run_config(
        "fit",
        overrides=overrides,
        data_file=data_file,
        mesh_file=mesh_file,
        config_file=config_file,
        out=out,
    )
    fit_config = config.load_fit_config(config_file)
    if workers:
        fit_config.optimizer.workers = workers
    mesh = cli_common.load_mesh(mesh_file)
    obs = artifacts.ingest_observations(data_file, mesh, fit_config.spec.p, nugget_from(fit_config, config_file))

    fem = fem_assembly.assemble(mesh)
    result = inference.fit(obs, fem, fit_config)
    document = result.to_dict()
    document["summaries"] = inference.derived_summaries(result.spec, fem)
    artifacts.write_json(out, document, run.provenance)

    cli_common.output_data(document["parameters"])
    cli_common.output_data([document["convergence"]])

    if not result.convergence.converged:
        common.error_raise(
            common.SpdeLabNumericException,
            f"Optimizer did not converge after {result.convergence.iterations} iterations: "
            f"{result.convergence.message}",
        )
