import logging

import click
import numpy as np

import spdelab.artifacts as artifacts
import spdelab.cli.cli_common as cli_common
import spdelab.fem as fem_assembly
import spdelab.gmrf as gmrf_engine
import spdelab.mesh as mesh_module
import spdelab.precision as precision

logger = logging.getLogger(__name__)


@click.command(name="sample", help="Draw samples of the multivariate GMRF")
@cli_common.shared_options.debug
@cli_common.shared_options.log_file
@cli_common.shared_options.spec
@cli_common.shared_options.mesh
@cli_common.shared_options.seed
@click.option("--n-samples", type=int, default=1, show_default=True)
@click.option(
    "--observations",
    type=int,
    default=0,
    help="Also simulate this many noisy observations per field",
)
@click.option(
    "--nugget",
    type=float,
    multiple=True,
    help="Nugget variance per field (repeat for each field)",
)
@click.option("--obs-out", type=click.Path(dir_okay=False), default=None)
@click.option("--precision-out", type=click.Path(dir_okay=False), default=None)
@cli_common.shared_options.out
def sample_command(
    debug,
    log_file,
    spec_source,
    mesh_file,
    seed,
    n_samples,
    observations,
    nugget,
    obs_out,
    precision_out,
    out,
):
    cli_common.start(debug, log_file)
    run = cli_common.run_config(
        "sample",
        seed=seed,
        overrides={
            "spec": spec_source,
            "n_samples": n_samples,
            "observations": observations,
            "nugget": list(nugget),
        },
        mesh_file=mesh_file,
        **cli_common.spec_input(spec_source),
        out=out,
        obs_out=obs_out,
        precision_out=precision_out,
    )
    if observations and not obs_out:
        raise click.UsageError("--observations needs --obs-out")

    spec = cli_common.load_spec(spec_source)
    mesh = cli_common.load_mesh(mesh_file)
    gmrf = precision.build_precision(spec, fem_assembly.assemble(mesh))
    rng = gmrf_engine.generator(seed)

    samples = gmrf_engine.sample(gmrf.factor(), 0.0, rng, size=n_samples)
    artifacts.write_csv(out, artifacts.sample_rows(mesh, samples, spec.p), run.provenance)
    if precision_out:
        gmrf.export(precision_out)

    if observations:
        region = mesh_module.inner_region(mesh)
        count = observations * spec.p
        locations = np.column_stack(
            [
                rng.uniform(region.x0, region.x1, count),
                rng.uniform(region.y0, region.y1, count),
            ]
        )
        fields = np.repeat(np.arange(spec.p), observations)
        obs, _ = gmrf_engine.simulate_observations(
            gmrf,
            mesh,
            locations,
            fields,
            list(nugget) or 0.0,
            rng,
        )
        artifacts.write_csv(obs_out, artifacts.observation_rows(obs), run.provenance)

    cli_common.output_data(
        [
            {
                "field": i,
                "sample_sd": float(samples[:, i * gmrf.N : (i + 1) * gmrf.N].std()),
            }
            for i in range(spec.p)
        ]
    )
