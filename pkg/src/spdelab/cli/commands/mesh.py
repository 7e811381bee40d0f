import logging
import pathlib

import click

import spdelab.artifacts as artifacts
import spdelab.cli.cli_common as cli_common
import spdelab.fem as fem_assembly
import spdelab.mesh as mesh_module

logger = logging.getLogger(__name__)


@click.command(name="mesh", help="Triangulate a rectangle and write the mesh JSON")
@cli_common.shared_options.debug
@cli_common.shared_options.log_file
@click.option(
    "--region",
    nargs=4,
    type=float,
    required=True,
    metavar="X0 Y0 X1 Y1",
    help="Study region corners",
)
@click.option("--edge-length", type=float, required=True, help="Target triangle edge length")
@click.option("--margin", type=float, default=None, help="Extension margin around the region")
@click.option("--range-hint", type=float, default=None, help="Practical range; margin defaults to twice this")
@click.option(
    "--export-dir",
    type=click.Path(file_okay=False),
    default=None,
    help="Also write C, C_lumped, G (and K with --kappa) as Matrix Market",
)
@click.option("--kappa", type=float, default=None, help="κ for the exported K = κ²C̃ + G")
@cli_common.shared_options.out
def mesh_command(debug, log_file, region, edge_length, margin, range_hint, export_dir, kappa, out):
    cli_common.start(debug, log_file)
    logger.debug(f"mesh invoked. {region=} {edge_length=} {margin=} {range_hint=}")
    run = cli_common.run_config(
        "mesh",
        overrides={
            "region": list(region),
            "edge_length": edge_length,
            "margin": margin,
            "range_hint": range_hint,
            "kappa": kappa,
        },
        out=out,
    )
    mesh = mesh_module.build_mesh(
        mesh_module.Rectangle(*region),
        edge_length,
        extension_margin=margin,
        range_hint=range_hint,
    )
    artifacts.write_json(out, mesh.to_dict(), run.provenance)

    if export_dir:
        from scipy.io import mmwrite

        fem = fem_assembly.assemble(mesh)
        written = fem.export(export_dir)
        if kappa is not None:
            path = pathlib.Path(export_dir) / "K.mtx"
            mmwrite(
                str(path),
                fem_assembly.k_matrix(fem, kappa**2).tocoo(),
                comment=f"config_hash={run.config_hash}",
                precision=17,
            )
            written.append(path)
        logger.info(f"Exported {[str(path) for path in written]}")

    cli_common.output_data(
        [
            {
                "vertices": mesh.n_vertices,
                "triangles": mesh.n_triangles,
                "margin": mesh.extension_margin,
                "out": out,
            }
        ]
    )
