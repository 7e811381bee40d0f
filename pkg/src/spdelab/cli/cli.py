#!/usr/bin/env python3
import logging
import sys

import click

import spdelab.common as common

from .commands.compare import compare_command
from .commands.corr import corr_command
from .commands.fit import fit_command
from .commands.match import match_command
from .commands.mesh import mesh_command
from .commands.nugget import nugget_command
from .commands.predict import predict_command
from .commands.sample import sample_command
from .commands.spectra import spectra_command

logger = logging.getLogger(__name__)


@click.group()
@click.version_option(package_name="spdelab")
def cli():
    pass


cli.add_command(compare_command)
cli.add_command(corr_command)
cli.add_command(fit_command)
cli.add_command(match_command)
cli.add_command(mesh_command)
cli.add_command(nugget_command)
cli.add_command(predict_command)
cli.add_command(sample_command)
cli.add_command(spectra_command)


def main():
    try:
        cli()
    except common.SpdeLabException as exc:
        logger.debug(f"Caught exception in main: {exc!r}")
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(exc.exit_code)
