import logging

import click
import numpy as np

import spdelab.artifacts as artifacts
import spdelab.cli.cli_common as cli_common
import spdelab.spectral as spectral

logger = logging.getLogger(__name__)


@click.command(name="spectra", help="Power spectra of a bivariate system on a log grid")
@cli_common.shared_options.debug
@cli_common.shared_options.log_file
@cli_common.shared_options.spec
@click.option("--k-min", type=float, default=1e-2, show_default=True)
@click.option("--k-max", type=float, default=1e2, show_default=True)
@click.option("--n-k", type=int, default=200, show_default=True)
@cli_common.shared_options.out
def spectra_command(debug, log_file, spec_source, k_min, k_max, n_k, out):
    cli_common.start(debug, log_file)
    run = cli_common.run_config(
        "spectra",
        overrides={"spec": spec_source, "k_min": k_min, "k_max": k_max, "n_k": n_k},
        **cli_common.spec_input(spec_source),
        out=out,
    )
    if not 0 < k_min < k_max or n_k < 2:
        raise click.BadParameter("need 0 < k-min < k-max and n-k >= 2")
    spec = cli_common.load_spec(spec_source)
    k_values = np.logspace(np.log10(k_min), np.log10(k_max), n_k)
    rows = spectral.spectra_table(spec, k_values)
    artifacts.write_csv(out, rows, run.provenance)

    tail = k_values[-2:]
    cli_common.output_data(
        [
            {
                "entry": name,
                "loglog_slope": spectral.loglog_slope([row[name] for row in rows[-2:]], tail),
            }
            for name in ("S11", "S12", "S22")
            if all(row[name] != 0 for row in rows[-2:])
        ]
    )
