import json
import logging

import numpy as np
import pytest

import spdelab
import spdelab.artifacts as artifacts
import spdelab.gmrf as gmrf_engine
import spdelab.mesh as mesh_module
from spdelab.config import Provenance
from spdelab.mesh import Rectangle

logger = logging.getLogger(__name__)


PROVENANCE = Provenance(config_hash="abc123", seed=7)


@pytest.fixture(scope="module")
def mesh():
    return mesh_module.build_mesh(Rectangle(0.0, 0.0, 10.0, 10.0), 1.0)


def write(tmp_path, text, name="obs.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_read_well_formed_table(tmp_path):
    path = write(tmp_path, "x,y,field,value\n1,1,0,0.5\n2,3,1,-1.25\n4.5,2,0,3\n9,9,1,0\n")
    locations, fields, values, lines = artifacts.read_observation_table(path, 2)
    assert locations.shape == (4, 2)
    assert fields.tolist() == [0, 1, 0, 1]
    assert values.tolist() == [0.5, -1.25, 3.0, 0.0]
    assert lines.tolist() == [2, 3, 4, 5]


def test_blank_lines_and_provenance_are_skipped(tmp_path):
    path = write(tmp_path, "# seed=1\n# version=x\nx,y,field,value\n1,1,0,0.5\n\n2,2,1,1.5\n")
    _, fields, values, lines = artifacts.read_observation_table(path, 2)
    assert values.tolist() == [0.5, 1.5]
    assert lines.tolist() == [4, 6]


def test_field_outside_range_names_row(tmp_path):
    path = write(tmp_path, "x,y,field,value\n1,1,0,0.5\n2,2,1,0.1\n3,3,2,0.2\n")
    with pytest.raises(artifacts.ObservationSchemaException) as excinfo:
        artifacts.read_observation_table(path, 2)
    assert excinfo.value.row == 2


def test_header_mismatch(tmp_path):
    path = write(tmp_path, "x,y,value,field\n1,1,0.5,0\n")
    with pytest.raises(artifacts.ObservationSchemaException):
        artifacts.read_observation_table(path, 2)


MALFORMED = [
    {"id": "text-value", "text": "# seed=1\n# hash=2\nx,y,field,value\n1,1,0,0.5\n2,2,1,abc\n", "line": 5},
    {"id": "fractional-field", "text": "x,y,field,value\n1,1,0.5,0.5\n", "line": 2},
    {"id": "missing-cell", "text": "x,y,field,value\n1,1,0,0.5\n1,,0,0.5\n", "line": 3},
    {"id": "infinite", "text": "x,y,field,value\n1,1,0,inf\n", "line": 2},
]


@pytest.mark.parametrize(
    "text,line",
    [pytest.param(td["text"], td["line"], id=td["id"]) for td in MALFORMED],
)
def test_malformed_record_reports_line(tmp_path, text, line):
    with pytest.raises(artifacts.ObservationParseException) as excinfo:
        artifacts.read_observation_table(write(tmp_path, text), 2)
    assert excinfo.value.line == line


def test_ragged_row_is_a_parse_error(tmp_path):
    path = write(tmp_path, "x,y,field,value\n1,1,0,0.5\n1,1,0,0.5,9\n")
    with pytest.raises(artifacts.ObservationParseException):
        artifacts.read_observation_table(path, 2)


def test_empty_file(tmp_path, mesh):
    with pytest.raises(artifacts.EmptyDataException):
        artifacts.ingest_observations(write(tmp_path, ""), mesh, 2, 0.1)
    with pytest.raises(artifacts.EmptyDataException):
        artifacts.ingest_observations(write(tmp_path, "x,y,field,value\n", "header.csv"), mesh, 2, 0.1)


def test_ingest_two_field_dataset(tmp_path, mesh):
    rng = np.random.default_rng(157)
    sites = rng.uniform(0.0, 10.0, (157, 2))
    lines = ["x,y,field,value"]
    for field in (0, 1):
        for (x, y), value in zip(sites, rng.normal(size=157)):
            lines.append(f"{x:.17g},{y:.17g},{field},{value:.17g}")
    path = write(tmp_path, "\n".join(lines) + "\n")

    obs = artifacts.ingest_observations(path, mesh, 2, [0.1, 0.2])
    assert obs.size == 314
    assert obs.A.shape == (314, 2 * mesh.n_vertices)
    assert np.diff(obs.A.indptr).max() <= 3
    assert np.asarray(obs.A.sum(axis=1)).ravel() == pytest.approx(np.ones(314))
    assert obs.row_nugget[:157].tolist() == [0.1] * 157


def test_rows_outside_mesh_are_dropped(tmp_path, mesh, caplog):
    path = write(tmp_path, "x,y,field,value\n1,1,0,0.5\n11,1,0,0.7\n2,2,1,0.1\n-3,4,1,0.2\n")
    with caplog.at_level(logging.WARNING):
        obs = artifacts.ingest_observations(path, mesh, 2, 0.1)
    assert obs.size == 2
    assert obs.values.tolist() == [0.5, 0.1]
    assert "rows [1, 3]" in caplog.text


def test_every_row_outside_mesh(tmp_path, mesh):
    path = write(tmp_path, "x,y,field,value\n11,1,0,0.5\n-1,-1,1,0.1\n")
    with pytest.raises(artifacts.EmptyDataException):
        artifacts.ingest_observations(path, mesh, 2, 0.1)


def test_write_csv_with_provenance(tmp_path):
    path = artifacts.write_csv(tmp_path / "out.csv", [{"k": 0.1, "value": 1 / 3}, {"k": 2.0, "value": -1e-20}], PROVENANCE)
    text = path.read_text()
    assert text.splitlines()[:3] == ["# config_hash=abc123", "# seed=7", f"# version={spdelab.__version__}"]
    assert "0.10000000000000001" in text
    assert artifacts.read_provenance(path) == {"config_hash": "abc123", "seed": "7", "version": spdelab.__version__}

    frame = artifacts.read_csv(path)
    assert frame["value"].tolist() == [1 / 3, -1e-20]
    assert frame["k"].tolist() == [0.1, 2.0]


def test_read_csv_is_lossless(tmp_path):
    values = np.random.default_rng(3).normal(scale=1e-3, size=50)
    rows = [{"tau2": 0.3, "value": value} for value in values]
    frame = artifacts.read_csv(artifacts.write_csv(tmp_path / "out.csv", rows, PROVENANCE))
    assert frame["value"].tolist() == values.tolist()
    assert set(frame["tau2"]) == {0.3}


def test_write_csv_is_reproducible(tmp_path):
    rows = [{"a": i / 7, "b": i} for i in range(5)]
    first = artifacts.write_csv(tmp_path / "first.csv", rows, PROVENANCE).read_bytes()
    second = artifacts.write_csv(tmp_path / "second.csv", rows, PROVENANCE).read_bytes()
    assert first == second


def test_write_json(tmp_path):
    data = {
        "estimate": np.float64(0.1),
        "counts": np.arange(3),
        "nested": {1: np.array([0.5, 1.5])},
    }
    path = artifacts.write_json(tmp_path / "out.json", data, PROVENANCE)
    document = json.loads(path.read_text())
    assert document["provenance"] == {"config_hash": "abc123", "seed": 7, "version": spdelab.__version__}
    assert document["estimate"] == 0.1
    assert document["counts"] == [0, 1, 2]
    assert document["nested"] == {"1": [0.5, 1.5]}
    assert list(document) == sorted(document)


def test_sample_rows(mesh):
    samples = np.arange(2 * 2 * mesh.n_vertices, dtype=float).reshape(2, -1)
    frame = artifacts.sample_rows(mesh, samples, 2)
    N = mesh.n_vertices
    assert list(frame.columns) == ["sample", "vertex", "x", "y", "field", "value"]
    assert len(frame) == 4 * N
    assert frame["value"].tolist() == samples.ravel().tolist()
    row = frame.iloc[3 * N + 5]
    assert (row["sample"], row["field"], row["vertex"]) == (1, 1, 5)
    assert (row["x"], row["y"]) == tuple(mesh.vertices[5])


def test_correlation_rows(mesh):
    N = mesh.n_vertices
    surfaces = {(0, 0): np.ones(N), (0, 1): np.full(N, 0.5)}
    frame = artifacts.correlation_rows(mesh, surfaces, 12)
    assert list(frame.columns) == ["reference_vertex", "field_i", "field_j", "vertex", "x", "y", "correlation"]
    assert len(frame) == 2 * N
    assert set(frame["reference_vertex"]) == {12}
    assert frame[frame["field_j"] == 1]["correlation"].tolist() == [0.5] * N


def test_kriging_rows(mesh):
    targets = gmrf_engine.build_observations(mesh, 2, [[1.0, 1.0], [2.0, 2.0]], [0, 1], [0.5, 0.6], 0.1)
    frame = artifacts.kriging_rows(targets, np.array([0.4, 0.7]), np.array([0.01, 0.02]))
    assert list(frame.columns) == ["x", "y", "field", "observed", "prediction", "variance"]
    assert frame["prediction"].tolist() == [0.4, 0.7]
    assert frame["observed"].tolist() == [0.5, 0.6]
