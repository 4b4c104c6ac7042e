"""File formats: params, datasets, CSV, PGM heatmaps, JSON.

Floats are written with 17 significant digits so every file round-trips to
the exact double.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .distribution import Dataset, DistributionSpec, Partition
from .model import ModelParams


def fmt(x: float) -> str:
    return format(float(x), ".17g")


# --- params ----------------------------------------------------------------

def save_params(params: ModelParams, path) -> None:
    """Header ``d D p nu tau sigma_A``, then ``v`` on one line, then ``A`` one row per line."""
    lines = [f"{params.d} {params.D} {params.p} {fmt(params.nu)} {fmt(params.tau)} {fmt(params.sigma_A)}",
             " ".join(fmt(x) for x in params.v)]
    lines += [" ".join(fmt(x) for x in row) for row in params.A]
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path) -> ModelParams:
    tokens = Path(path).read_text().split()
    d, D, p = int(tokens[0]), int(tokens[1]), int(tokens[2])
    nu, tau, sigma_A = (float(t) for t in tokens[3:6])
    body = np.array([float(t) for t in tokens[6:]])
    if body.size != d + D * D:
        raise ValueError(f"{path}: expected {d + D * D} values, found {body.size}")
    return ModelParams(A=body[d:].reshape(D, D), v=body[:d], p=p, nu=nu, tau=tau, sigma_A=sigma_A)


# --- datasets --------------------------------------------------------------
#
# Text layout: "key value..." header lines, a "points N" line, then one row per
# point: y, signal set, the D delta values, and the d*D patch entries patch by
# patch. ``.npz`` paths use a compressed binary layout with the same content.


def save_dataset(ds: Dataset, path) -> None:
    if str(path).endswith(".npz"):
        _save_npz(ds, path)
        return
    s = ds.spec
    with open(path, "w") as fh:
        fh.write(f"d {s.d}\nD {s.D}\nC {s.C}\nL {s.L}\nq {fmt(s.q)}\nsigma2 {fmt(s.sigma2)}\n")
        fh.write(f"threshold_frac {fmt(s.threshold_frac)}\n")
        fh.write(f"seed {-1 if ds.seed is None else ds.seed}\n")
        fh.write("membership " + " ".join(str(int(m)) for m in ds.partition.membership) + "\n")
        fh.write("w_star " + " ".join(fmt(x) for x in s.w_star) + "\n")
        fh.write(f"points {len(ds)}\n")
        for n in range(len(ds)):
            head = [str(int(ds.y[n])), str(int(ds.signal_set[n]))] + [str(int(x)) for x in ds.delta[n]]
            fh.write(" ".join(head + [fmt(x) for x in ds.patches[n].ravel()]) + "\n")


def load_dataset(path) -> Dataset:
    if str(path).endswith(".npz"):
        return _load_npz(path)
    header = {}
    with open(path) as fh:
        for line in fh:
            key, _, rest = line.partition(" ")
            header[key] = rest.split()
            if key == "points":
                break
        d, D = int(header["d"][0]), int(header["D"][0])
        spec = DistributionSpec(d, D, int(header["C"][0]), int(header["L"][0]), float(header["q"][0]),
                                float(header["sigma2"][0]), float(header["threshold_frac"][0]),
                                np.array([float(x) for x in header["w_star"]]))
        N = int(header["points"][0])
        rows = np.loadtxt(fh, ndmin=2) if N else np.zeros((0, 2 + D + d * D))
    if rows.shape != (N, 2 + D + d * D):
        raise ValueError(f"{path}: expected {N} rows of {2 + D + d * D} values, got {rows.shape}")
    seed = int(header["seed"][0])
    return Dataset(spec, Partition(np.array([int(m) for m in header["membership"]])),
                   rows[:, 2 + D:].reshape(N, D, d).copy(), rows[:, 0].astype(np.int8),
                   rows[:, 1].astype(np.int64), rows[:, 2:2 + D].astype(np.int8), None if seed < 0 else seed)


def _save_npz(ds: Dataset, path) -> None:
    s = ds.spec
    np.savez_compressed(
        path,
        patches=ds.patches, y=ds.y, signal_set=ds.signal_set, delta=ds.delta,
        membership=ds.partition.membership, w_star=s.w_star,
        spec=np.array([s.d, s.D, s.C, s.L, s.q, s.sigma2, s.threshold_frac]),
        seed=np.array(-1 if ds.seed is None else ds.seed),
    )


def _load_npz(path) -> Dataset:
    with np.load(path) as z:
        d, D, C, L, q, sigma2, tf = z["spec"].tolist()
        spec = DistributionSpec(int(d), int(D), int(C), int(L), q, sigma2, tf, z["w_star"])
        seed = int(z["seed"])
        return Dataset(spec, Partition(z["membership"]), z["patches"], z["y"], z["signal_set"], z["delta"],
                       None if seed < 0 else seed)


# --- partitions ------------------------------------------------------------

def load_partition(path) -> Partition:
    """Whitespace-separated set labels, one per patch."""
    return Partition(np.array([int(t) for t in Path(path).read_text().split()]))


def save_partition(partition: Partition, path) -> None:
    Path(path).write_text(" ".join(str(int(m)) for m in partition.membership) + "\n")


# --- CSV / JSON ------------------------------------------------------------

def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return fmt(x)
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_matrix_csv(path, M: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        for row in np.asarray(M):
            w.writerow([fmt(x) for x in row])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# --- PGM heatmaps ----------------------------------------------------------

def export_heatmap(matrix: np.ndarray, path) -> dict:
    """Write an ASCII P2 image, min-max scaled to 0..255, plus ``<path>.json`` with the range.

    A constant matrix becomes an all-zero raster and the sidecar says so.
    """
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("heatmap needs a 2-D matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("heatmap needs a finite matrix")
    lo, hi = float(M.min()), float(M.max())
    side = {"min": lo, "max": hi, "maxval": 255, "rows": M.shape[0], "cols": M.shape[1]}
    if hi > lo:
        pix = np.rint((M - lo) / (hi - lo) * 255).astype(np.int64)
    else:
        pix = np.zeros(M.shape, dtype=np.int64)
        side["note"] = "constant matrix; raster is all zero"
    lines = ["P2", f"{M.shape[1]} {M.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in pix]
    Path(path).write_text("\n".join(lines) + "\n")
    write_json(str(path) + ".json", side)
    return side


def read_pgm(path) -> np.ndarray:
    """Parse a P2 file (comments allowed) into an integer array."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens += line.split("#", 1)[0].split()
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM")
    w, h, _ = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if data.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {data.size}")
    return data.reshape(h, w)


def reconstruct_heatmap(path) -> np.ndarray:
    side = json.loads(Path(str(path) + ".json").read_text())
    pix = read_pgm(path).astype(np.float64)
    if side["max"] > side["min"]:
        return side["min"] + pix / 255 * (side["max"] - side["min"])
    return np.full(pix.shape, side["min"])


def gap_threshold(pixels: np.ndarray) -> int:
    """Lower edge of the widest gap between occupied intensity levels.

    Pixels ``> threshold`` form the high-intensity class. This is the
    two-cluster single-linkage split; unlike a variance criterion it never
    cuts through an occupied level run when a clean gap exists. A single
    occupied level returns that level, so no pixel is high.
    """
    levels = np.unique(np.asarray(pixels, dtype=np.int64))
    if levels.size < 2:
        return int(levels[0]) if levels.size else 0
    k = int(np.argmax(np.diff(levels)))
    return int(levels[k])
