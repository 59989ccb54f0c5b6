import numpy as np
import pytest

from donaldson_flow import FlowControls, Verdict, run
from errors import PreconditionError, StructuralError
from fieldio import (atomic_open, load_trajectory, read_csv, read_field, read_json, save_trajectory,
                     write_field, write_field_csv, write_json)


def test_complex_field_keeps_values_and_time(tmp_path, rng):
    values = rng.normal(size=(4, 4, 2, 2)) + 1j * rng.normal(size=(4, 4, 2, 2))
    write_field(tmp_path / "h.tfld", values, t=1.25)
    back, t = read_field(tmp_path / "h.tfld")
    assert back.dtype == np.complex128
    assert np.array_equal(back, values)
    assert t == 1.25


def test_real_field_is_stored_as_float64(tmp_path):
    write_field(tmp_path / "u.tfld", np.arange(6.0).reshape(2, 3))
    back, _ = read_field(tmp_path / "u.tfld")
    assert back.dtype == np.float64
    assert back.shape == (2, 3)


def test_field_magic_is_checked(tmp_path):
    path = tmp_path / "junk.tfld"
    path.write_bytes(b"NOPE" + bytes(32))
    with pytest.raises(StructuralError):
        read_field(path)


def test_failed_write_leaves_the_old_file(tmp_path):
    path = tmp_path / "report.json"
    write_json(path, {"a": 1})
    with pytest.raises(RuntimeError):
        with atomic_open(path, "w", encoding="utf-8") as f:
            f.write("partial")
            raise RuntimeError("interrupted")
    assert read_json(path) == {"a": 1}
    assert [p.name for p in tmp_path.iterdir()] == ["report.json"]


def test_json_converts_numpy_and_complex(tmp_path):
    write_json(tmp_path / "x.json", {"v": np.array([1.0, 2.0]), "c": 1 + 2j, "ok": np.bool_(True),
                                     "verdict": Verdict.BLOW_UP, 3: np.int64(4)})
    assert read_json(tmp_path / "x.json") == {"v": [1.0, 2.0], "c": [1.0, 2.0], "ok": True,
                                              "verdict": Verdict.BLOW_UP.value, "3": 4}


def test_trajectory_survives_a_reload(tmp_path, split_spec):
    traj = run(split_spec, FlowControls(dt0=0.01, t_max=0.5, stride=10))
    save_trajectory(tmp_path, traj)
    back = load_trajectory(tmp_path)
    assert back.verdict == traj.verdict == Verdict.TIMEOUT
    assert back.snapshot_times == traj.snapshot_times
    for a, b in zip(back.snapshots, traj.snapshots):
        assert np.array_equal(a, b)
    assert np.array_equal(back.spec.a, split_spec.a)
    assert back.spec.degrees == split_spec.degrees
    assert back.controls.stride == 10
    rows = read_csv(tmp_path / "diagnostics.csv")
    assert len(rows) == len(traj.series["t"])
    assert float(rows[-1]["t"]) == traj.series["t"][-1]
    cells = read_csv(tmp_path / "h_final.csv")
    assert len(cells) == split_spec.geometry.shape[0] * split_spec.geometry.shape[1]
    assert float(cells[0]["re11"]) == traj.snapshots[-1][0, 0, 1, 1].real


def test_loading_needs_a_trajectory(tmp_path):
    with pytest.raises(PreconditionError):
        load_trajectory(tmp_path)


def test_complex_field_csv_has_one_row_per_cell(tmp_path, rng):
    values = rng.normal(size=(4, 3, 2, 2)) + 1j * rng.normal(size=(4, 3, 2, 2))
    write_field_csv(tmp_path / "h.csv", values, grid_ndim=2)
    rows = read_csv(tmp_path / "h.csv")
    assert list(rows[0]) == ["i0", "i1", "re00", "im00", "re01", "im01", "re10", "im10", "re11", "im11"]
    assert len(rows) == 12
    row = rows[5]
    i, j = int(row["i0"]), int(row["i1"])
    assert (i, j) == (1, 2)
    assert float(row["re01"]) == values[i, j, 0, 1].real
    assert float(row["im10"]) == values[i, j, 1, 0].imag


def test_real_scalar_field_csv(tmp_path):
    write_field_csv(tmp_path / "u.csv", np.arange(6.0).reshape(2, 3))
    rows = read_csv(tmp_path / "u.csv")
    assert list(rows[0]) == ["i0", "i1", "v"]
    assert [float(r["v"]) for r in rows] == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    with pytest.raises(StructuralError):
        write_field_csv(tmp_path / "bad.csv", np.zeros((2, 3)), grid_ndim=3)
