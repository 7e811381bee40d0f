import logging

import click
import numpy as np

import spdelab.artifacts as artifacts
import spdelab.cli.cli_common as cli_common
import spdelab.fem as fem_assembly
import spdelab.gmrf as gmrf_engine
import spdelab.precision as precision

logger = logging.getLogger(__name__)


@click.command(name="corr", help="Correlation surfaces against a reference vertex")
@cli_common.shared_options.debug
@cli_common.shared_options.log_file
@cli_common.shared_options.spec
@cli_common.shared_options.mesh
@click.option(
    "--ref-vertex",
    type=int,
    default=None,
    help="Reference vertex index (default: vertex nearest the mesh centre)",
)
@cli_common.shared_options.out
def corr_command(debug, log_file, spec_source, mesh_file, ref_vertex, out):
    cli_common.start(debug, log_file)
    run = cli_common.run_config(
        "corr",
        overrides={"spec": spec_source, "ref_vertex": ref_vertex},
        mesh_file=mesh_file,
        **cli_common.spec_input(spec_source),
        out=out,
    )
    spec = cli_common.load_spec(spec_source)
    mesh = cli_common.load_mesh(mesh_file)
    if ref_vertex is None:
        centre = (mesh.vertices.min(axis=0) + mesh.vertices.max(axis=0)) / 2
        ref_vertex = int(np.argmin(np.linalg.norm(mesh.vertices - centre, axis=1)))
        logger.debug(f"Reference vertex {ref_vertex} at {mesh.vertices[ref_vertex]}")

    gmrf = precision.build_precision(spec, fem_assembly.assemble(mesh))
    surfaces = gmrf_engine.correlation_surfaces(gmrf, ref_vertex)
    artifacts.write_csv(out, artifacts.correlation_rows(mesh, surfaces, ref_vertex), run.provenance)
    cli_common.output_data(
        [
            {"field_i": i, "field_j": j, "co_located": float(surface[ref_vertex])}
            for (i, j), surface in sorted(surfaces.items())
        ]
    )
