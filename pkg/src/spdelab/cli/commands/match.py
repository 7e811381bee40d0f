import logging

import click

import spdelab.artifacts as artifacts
import spdelab.cli.cli_common as cli_common
import spdelab.spectral as spectral

logger = logging.getLogger(__name__)


@click.command(name="match", help="Matérn parameters matching a triangular bivariate system")
@cli_common.shared_options.debug
@cli_common.shared_options.log_file
@cli_common.shared_options.spec
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output JSON")
def match_command(debug, log_file, spec_source, out):
    cli_common.start(debug, log_file)
    run = cli_common.run_config(
        "match",
        overrides={"spec": spec_source},
        **cli_common.spec_input(spec_source),
        out=out,
    )
    spec = cli_common.load_spec(spec_source)
    matched = spectral.match_parameters(spec)
    if out:
        artifacts.write_json(out, {"matched": matched.to_dict(), "spec": spec.to_dict()}, run.provenance)
    cli_common.output_data([matched.to_dict()])
