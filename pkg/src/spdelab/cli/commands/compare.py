import logging

import click

import spdelab.artifacts as artifacts
import spdelab.cli.cli_common as cli_common
import spdelab.compare as compare
import spdelab.config as config
from spdelab.cli.commands.fit import nugget_from

logger = logging.getLogger(__name__)


@click.command(name="compare", help="Hold-out comparison of the SPDE and dense Matérn models")
@cli_common.shared_options.debug
@cli_common.shared_options.log_file
@cli_common.shared_options.data
@cli_common.shared_options.mesh
@cli_common.shared_options.config
@cli_common.shared_options.seed
@click.option("--holdout-fraction", type=float, default=0.25, show_default=True)
@cli_common.shared_options.out
def compare_command(debug, log_file, data_file, mesh_file, config_file, seed, holdout_fraction, out):
    cli_common.start(debug, log_file)
    run = cli_common.run_config(
        "compare",
        seed=seed,
        overrides={"holdout_fraction": holdout_fraction},
        data_file=data_file,
        mesh_file=mesh_file,
        config_file=config_file,
        out=out,
    )
    fit_config = config.load_fit_config(config_file)
    dense_config = config.load_dense_config(config_file)
    mesh = cli_common.load_mesh(mesh_file)
    obs = artifacts.ingest_observations(data_file, mesh, fit_config.spec.p, nugget_from(fit_config, config_file))

    report = compare.compare_models(
        obs,
        mesh,
        fit_config,
        holdout_fraction,
        seed,
        dense_config=dense_config,
    )
    artifacts.write_json(out, report, run.provenance)
    cli_common.output_data(report["relative_error"])
