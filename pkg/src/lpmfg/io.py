"""CSV and JSON artifacts.  Floats are written with 17 significant digits so
that reading a file back reproduces the in-memory doubles exactly."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from lpmfg.measures import MeanFieldFlow, OccupationTriple


class ArtifactError(OSError):
    pass


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_rows(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [[float(v) for v in row] for row in r]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def write_array(path, arr: np.ndarray, index_names) -> None:
    """One row per entry: the index tuple followed by the value."""
    arr = np.asarray(arr, dtype=float)
    idx = np.indices(arr.shape).reshape(arr.ndim, -1).T
    write_rows(path, list(index_names) + ["value"],
               ([*(int(v) for v in i), x] for i, x in zip(idx, arr.ravel())))


def read_array(path, shape) -> np.ndarray:
    header, data = read_rows(path)
    if data.shape[0] != int(np.prod(shape)):
        raise ArtifactError(f"{path}: expected {int(np.prod(shape))} entries for shape {shape}, "
                            f"found {data.shape[0]}")
    out = np.empty(shape)
    idx = tuple(data[:, j].astype(np.int64) for j in range(len(shape)))
    try:
        out[idx] = data[:, -1]
    except IndexError as exc:
        raise ArtifactError(f"{path}: index outside shape {shape}") from exc
    return out


def write_flow(path, flow: MeanFieldFlow) -> None:
    write_array(path, flow.rho, ("n", "i"))


def read_flow(path, N: int, M: int) -> MeanFieldFlow:
    return MeanFieldFlow(read_array(path, (N + 1, M + 1)))


def write_triple(directory, triple: OccupationTriple, prefix: str = "") -> None:
    d = Path(directory)
    write_array(d / f"{prefix}nu.csv", triple.nu, ("i",))
    write_array(d / f"{prefix}m.csv", triple.m, ("n", "i", "k"))
    write_array(d / f"{prefix}lambda_b.csv", triple.lambda_b, ("n", "j"))


def read_triple(directory, N: int, M: int, K: int, prefix: str = "") -> OccupationTriple:
    d = Path(directory)
    return OccupationTriple(read_array(d / f"{prefix}nu.csv", (M + 1,)),
                            read_array(d / f"{prefix}m.csv", (N, M + 1, K + 1)),
                            read_array(d / f"{prefix}lambda_b.csv", (N, 2)))


def write_trace(path, trace) -> None:
    write_rows(path, ["iter", "residual", "exploitability", "cost", "probe"],
               ([r.iteration, r.residual, r.exploitability, r.cost, int(r.probe)] for r in trace))


def write_dict_row(path, row: dict) -> None:
    write_rows(path, list(row), [list(row.values())])


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    with open(path) as fh:
        return json.load(fh)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")
