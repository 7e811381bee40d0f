from __future__ import annotations

import pprint
import typing as T

import click

import spdelab.common as common
import spdelab.config as config

if T.TYPE_CHECKING:
    from spdelab.mesh import TriangulatedDomain
    from spdelab.precision import SpdeSystemSpec


class shared_options:
    debug = click.option(
        "-d",
        "--debug",
        is_flag=True,
        help="Enable debugging",
    )

    log_file = click.option(
        "--log-file",
        type=click.Path(dir_okay=False),
        default=None,
        help="Write the log to a rotating file instead of stderr",
    )

    seed = click.option(
        "--seed",
        type=int,
        default=0,
        show_default=True,
        help="Seed for the Philox generator",
    )

    spec = click.option(
        "--spec",
        "spec_source",
        required=True,
        help="Spec file (JSON/YAML) or preset name",
    )

    mesh = click.option(
        "--mesh",
        "mesh_file",
        required=True,
        type=click.Path(exists=True, dir_okay=False),
        help="Mesh JSON written by `spdelab mesh`",
    )

    data = click.option(
        "--data",
        "data_file",
        required=True,
        type=click.Path(exists=True, dir_okay=False),
        help="Observations CSV with header x,y,field,value",
    )

    config = click.option(
        "--config",
        "config_file",
        required=True,
        type=click.Path(exists=True, dir_okay=False),
        help="Fit configuration (YAML or JSON)",
    )

    out = click.option(
        "--out",
        required=True,
        type=click.Path(dir_okay=False),
        help="Output file",
    )


def start(debug: bool, log_file: str | None) -> None:
    common.set_logging(debug, log_file)


def run_config(command: str, seed: int | None = None, overrides: dict | None = None, **paths) -> config.RunConfig:
    """Inputs are `*_file` keyword arguments; everything else is an output."""
    inputs = {key: str(value) for key, value in paths.items() if key.endswith("_file") and value}
    outputs = {key: str(value) for key, value in paths.items() if not key.endswith("_file") and value}
    run = config.RunConfig(
        command=command,
        inputs=inputs,
        outputs=outputs,
        seed=seed,
        overrides=overrides or {},
    )
    run.check_inputs()
    return run


def load_spec(source: str) -> SpdeSystemSpec:
    from spdelab.precision import load_spec

    return load_spec(source)


def load_mesh(filename: str) -> TriangulatedDomain:
    from spdelab.mesh import TriangulatedDomain

    return TriangulatedDomain.from_file(filename)


def spec_input(source: str) -> dict:
    """Spec sources are hashed as files when they exist, else as preset names."""
    import pathlib

    return {"spec_file": source} if pathlib.Path(source).is_file() else {}


def output_data(data: list[dict] | T.Any) -> None:
    import tabulate

    try:
        headers = list(data[0].keys())
        converted = [list(d.values()) for d in data]
        print(tabulate.tabulate(converted, headers=headers, floatfmt=".6g"))
        print("")
    except (IndexError, KeyError, AttributeError, TypeError):
        pprint.pprint(data)

