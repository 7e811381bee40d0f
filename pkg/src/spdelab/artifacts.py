from __future__ import annotations

import json
import logging
import pathlib
import re
import typing as T

import numpy as np

import spdelab.common as common
import spdelab.gmrf as gmrf_engine
import spdelab.mesh as mesh_module

if T.TYPE_CHECKING:
    import pandas as pd

    from spdelab.config import Provenance
    from spdelab.gmrf import ObservationSet
    from spdelab.mesh import TriangulatedDomain

logger = logging.getLogger(__name__)


OBSERVATION_COLUMNS = ["x", "y", "field", "value"]
COMMENT = "#"


class ObservationParseException(common.SpdeLabConfigException):
    line: int | None = None


class ObservationSchemaException(common.SpdeLabConfigException):
    row: int | None = None


class EmptyDataException(common.SpdeLabConfigException):
    pass


def _comment_lines(path: pathlib.Path) -> int:
    count = 0
    with open(path) as file:
        for line in file:
            if not line.startswith(COMMENT):
                break
            count += 1
    return count


def _read_frame(path: pathlib.Path) -> tuple[pd.DataFrame, int]:
    import pandas as pd

    skip = _comment_lines(path)
    try:
        frame = pd.read_csv(
            path,
            skiprows=skip,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
        )
    except pd.errors.EmptyDataError:
        common.error_raise(EmptyDataException, f"{path} has no header or data")
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        line = int(match.group(1)) + skip if match else None
        common.error_raise(ObservationParseException, f"{path}:{line}: {exc}", line=line)
    return frame, skip


def read_observation_table(
    path: str | pathlib.Path,
    p: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Locations, fields and values of an x,y,field,value CSV, plus the file
    line number of every record.  Leading `#` lines are provenance.
    """
    path = pathlib.Path(path)
    frame, skip = _read_frame(path)
    header = [str(column).strip() for column in frame.columns]
    if header != OBSERVATION_COLUMNS:
        common.error_raise(
            ObservationSchemaException,
            f"{path}: header must be {','.join(OBSERVATION_COLUMNS)}, got {','.join(header)}",
        )

    locations, fields, values, lines = [], [], [], []
    for row, record in enumerate(frame.itertuples(index=False)):
        line = skip + 2 + row
        cells = [str(cell).strip() for cell in record]
        if not any(cells):
            continue
        try:
            x, y, value = float(cells[0]), float(cells[1]), float(cells[3])
            field = int(cells[2])
        except ValueError:
            common.error_raise(
                ObservationParseException,
                f"{path}:{line}: malformed record {','.join(cells)}",
                line=line,
            )
        if not all(np.isfinite([x, y, value])):
            common.error_raise(
                ObservationParseException,
                f"{path}:{line}: non-finite value in {','.join(cells)}",
                line=line,
            )
        if not 0 <= field < p:
            common.error_raise(
                ObservationSchemaException,
                f"{path}:{line}: row {len(fields)} has field {field} outside [0, {p})",
                row=len(fields),
            )
        locations.append((x, y))
        fields.append(field)
        values.append(value)
        lines.append(line)
    return (
        np.asarray(locations, dtype=float).reshape(-1, 2),
        np.asarray(fields, dtype=np.int64),
        np.asarray(values, dtype=float),
        np.asarray(lines, dtype=np.int64),
    )


def ingest_observations(
    path: str | pathlib.Path,
    mesh: TriangulatedDomain,
    p: int,
    nugget_variance: T.Sequence[float] | float,
) -> ObservationSet:
    locations, fields, values, lines = read_observation_table(path, p)
    if not len(values):
        common.error_raise(EmptyDataException, f"{path} has no observations")

    inside = mesh_module.contains(mesh, locations)
    if not inside.all():
        rejected = np.flatnonzero(~inside)
        logger.warning(
            f"{path}: rejected {len(rejected)} rows outside the mesh: "
            f"rows {rejected.tolist()} (lines {lines[rejected].tolist()})"
        )
    if not inside.any():
        common.error_raise(EmptyDataException, f"{path}: every observation lies outside the mesh")

    obs = gmrf_engine.build_observations(
        mesh,
        p,
        locations[inside],
        fields[inside],
        values[inside],
        nugget_variance,
    )
    logger.info(f"Ingested {obs.size} observations from {path}")
    return obs


def _plain(value):
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(path: str | pathlib.Path, data: dict, provenance: Provenance) -> pathlib.Path:
    path = pathlib.Path(path)
    document = {"provenance": provenance.to_dict(), **_plain(data)}
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    logger.info(f"Wrote {path}")
    return path


def write_csv(
    path: str | pathlib.Path,
    rows: T.Sequence[dict] | pd.DataFrame,
    provenance: Provenance,
) -> pathlib.Path:
    import pandas as pd

    path = pathlib.Path(path)
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    with open(path, "w", newline="") as file:
        for key, value in provenance.to_dict().items():
            file.write(f"{COMMENT} {key}={value}\n")
        frame.to_csv(file, index=False, float_format=f"%{common.FLOAT_FORMAT}", lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_csv(path: str | pathlib.Path) -> pd.DataFrame:
    """A CSV written by write_csv, provenance lines skipped."""
    import pandas as pd

    path = pathlib.Path(path)
    return pd.read_csv(path, skiprows=_comment_lines(path), float_precision="round_trip")


def read_provenance(path: str | pathlib.Path) -> dict[str, str]:
    provenance = {}
    with open(path) as file:
        for line in file:
            if not line.startswith(COMMENT):
                break
            key, _, value = line[1:].strip().partition("=")
            provenance[key] = value
    return provenance


def sample_rows(mesh: TriangulatedDomain, samples: np.ndarray, p: int) -> pd.DataFrame:
    """Columns sample,vertex,x,y,field,value; field-major within each sample."""
    import pandas as pd

    samples = np.atleast_2d(samples)
    n_samples, N = samples.shape[0], mesh.n_vertices
    vertex = np.tile(np.arange(N), p)
    field = np.repeat(np.arange(p), N)
    return pd.DataFrame(
        {
            "sample": np.repeat(np.arange(n_samples), p * N),
            "vertex": np.tile(vertex, n_samples),
            "x": np.tile(mesh.vertices[vertex, 0], n_samples),
            "y": np.tile(mesh.vertices[vertex, 1], n_samples),
            "field": np.tile(field, n_samples),
            "value": samples.ravel(),
        }
    )


def correlation_rows(
    mesh: TriangulatedDomain,
    surfaces: dict[tuple[int, int], np.ndarray],
    reference_vertex: int,
) -> pd.DataFrame:
    import pandas as pd

    frames = []
    for (i, j), surface in sorted(surfaces.items()):
        frames.append(
            pd.DataFrame(
                {
                    "reference_vertex": reference_vertex,
                    "field_i": i,
                    "field_j": j,
                    "vertex": np.arange(mesh.n_vertices),
                    "x": mesh.vertices[:, 0],
                    "y": mesh.vertices[:, 1],
                    "correlation": surface,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def observation_rows(obs: ObservationSet) -> pd.DataFrame:
    import pandas as pd

    return pd.DataFrame(
        {
            "x": obs.locations[:, 0],
            "y": obs.locations[:, 1],
            "field": obs.fields,
            "value": obs.values,
        }
    )


def kriging_rows(targets: ObservationSet, predictions: np.ndarray, variances: np.ndarray) -> pd.DataFrame:
    frame = observation_rows(targets).rename(columns={"value": "observed"})
    frame["prediction"] = predictions
    frame["variance"] = variances
    return frame
