from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import pathlib
import typing as T

import spdelab
import spdelab.common as common

from spdelab.precision import dacite_config

if T.TYPE_CHECKING:
    from spdelab.inference import FitConfig
    from spdelab.matern import DenseFitConfig
    from spdelab.nugget import NuggetConfig

logger = logging.getLogger(__name__)


COMMANDS = ("mesh", "sample", "corr", "spectra", "fit", "predict", "nugget", "match", "compare")
# sections of a fit config file read by other loaders
SECTIONS = ("nugget", "dense")


class RunConfigException(common.SpdeLabConfigException):
    pass


@dataclasses.dataclass
class Provenance:
    config_hash: str
    seed: int | None
    version: str = spdelab.__version__

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class RunConfig:
    """
    One CLI invocation.  Inputs are checked before any computation starts;
    the hash covers the command, input contents, seed and overrides.
    """

    command: str
    inputs: dict[str, str] = dataclasses.field(default_factory=dict)
    outputs: dict[str, str] = dataclasses.field(default_factory=dict)
    seed: int | None = None
    overrides: dict[str, T.Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            common.error_raise(RunConfigException, f"Unknown command {self.command}")

    def check_inputs(self) -> None:
        for name, path in self.inputs.items():
            if not pathlib.Path(path).is_file():
                common.error_raise(RunConfigException, f"Input {name}={path} does not exist")

    @property
    def config_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.command.encode())
        for name in sorted(self.inputs):
            digest.update(name.encode())
            path = pathlib.Path(self.inputs[name])
            if path.is_file():
                digest.update(path.read_bytes())
            else:
                # preset names
                digest.update(self.inputs[name].encode())
        digest.update(
            json.dumps({"seed": self.seed, "overrides": self.overrides}, sort_keys=True).encode()
        )
        return digest.hexdigest()

    @property
    def provenance(self) -> Provenance:
        return Provenance(config_hash=self.config_hash, seed=self.seed)


def read_yaml(filename: str | pathlib.Path) -> dict:
    import yaml

    try:
        with open(filename) as file:
            data = yaml.safe_load(file)
    except (OSError, yaml.YAMLError) as exc:
        common.error_raise(RunConfigException, f"Unable to read {filename}: {exc}")
    if not isinstance(data, dict):
        common.error_raise(RunConfigException, f"{filename} is not a mapping")
    return data


def load_config(filename: str | pathlib.Path) -> RunConfig:
    import dacite

    try:
        config = dacite.from_dict(data_class=RunConfig, data=read_yaml(filename), config=dacite_config())
    except dacite.DaciteError as exc:
        common.error_raise(RunConfigException, f"Invalid run config {filename}: {exc}")
    config.check_inputs()
    return config


def _resolve_spec(data: dict) -> dict:
    from spdelab.precision import load_spec

    if isinstance(data.get("spec"), str):
        data = dict(data, spec=load_spec(data["spec"]).to_dict())
    return data


def load_fit_config(filename: str | pathlib.Path, overrides: dict | None = None) -> FitConfig:
    """Fit settings; `spec` may be a mapping, a spec file or a preset name."""
    from spdelab.inference import FitConfig

    data = _resolve_spec(read_yaml(filename))
    for section in SECTIONS:
        data.pop(section, None)
    return FitConfig.from_dict({**data, **(overrides or {})})


def load_nugget_config(filename: str | pathlib.Path) -> NuggetConfig:
    """The `nugget` section of a fit config file."""
    from spdelab.nugget import NuggetConfig

    data = read_yaml(filename)
    if "nugget" not in data:
        common.error_raise(RunConfigException, f"{filename} has no nugget section")
    return NuggetConfig.from_dict(data["nugget"])


def load_dense_config(filename: str | pathlib.Path) -> DenseFitConfig | None:
    """The optional `dense` section; None lets the comparison pick ν itself."""
    import dacite

    from spdelab.matern import DenseFitConfig

    data = read_yaml(filename).get("dense")
    if data is None:
        return None
    try:
        return dacite.from_dict(data_class=DenseFitConfig, data=data, config=dacite_config())
    except dacite.DaciteError as exc:
        common.error_raise(RunConfigException, f"Invalid dense section in {filename}: {exc}")
