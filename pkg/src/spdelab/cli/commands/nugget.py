import logging

import click

import spdelab.artifacts as artifacts
import spdelab.cli.cli_common as cli_common
import spdelab.common as common
import spdelab.config as config
import spdelab.fem as fem_assembly
import spdelab.nugget as nugget

logger = logging.getLogger(__name__)


@click.command(name="nugget", help="Iterative bias correction of the nugget variances")
@cli_common.shared_options.debug
@cli_common.shared_options.log_file
@cli_common.shared_options.data
@cli_common.shared_options.mesh
@cli_common.shared_options.config
@cli_common.shared_options.out
def nugget_command(debug, log_file, data_file, mesh_file, config_file, out):
    cli_common.start(debug, log_file)
    run = cli_common.run_config(
        "nugget",
        data_file=data_file,
        mesh_file=mesh_file,
        config_file=config_file,
        out=out,
    )
    fit_config = config.load_fit_config(config_file)
    nugget_config = config.load_nugget_config(config_file)
    mesh = cli_common.load_mesh(mesh_file)
    obs = artifacts.ingest_observations(data_file, mesh, fit_config.spec.p, nugget_config.tau2_init)

    try:
        state = nugget.run_bias_correction(obs, fem_assembly.assemble(mesh), fit_config, nugget_config)
    except nugget.BiasCorrectionAbortedException as exc:
        if exc.state is not None:
            artifacts.write_csv(out, exc.state.trajectory(), run.provenance)
        raise
    artifacts.write_csv(out, state.trajectory(), run.provenance)
    cli_common.output_data(state.trajectory()[-1:])

    if not state.converged:
        common.error_raise(
            common.SpdeLabNumericException,
            f"Bias correction did not converge within {nugget_config.max_iterations} iterations",
        )
