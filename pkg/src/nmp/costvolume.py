"""Continuous indexing into (T, H, W) cost volumes and their dump formats."""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .bev import RoiSpec

VOLUME_MAGIC = b"NMPV"
OUTSIDE_COST = 1000.0


def bilinear_taps(xy: np.ndarray, roi: RoiSpec):
    """Interpolation taps for world points over the cell-centre lattice.

    Returns flat cell indices (..., 4), weights (..., 4) and an inside mask
    (...). Points outside the region get zero weights.
    """
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    inside = (x >= -roi.length_back) & (x < roi.length_fwd) & (y >= -roi.width_half) & (y < roi.width_half)
    u = np.clip((x + roi.length_back) / roi.cell - 0.5, 0.0, roi.H - 1)
    v = np.clip((y + roi.width_half) / roi.cell - 0.5, 0.0, roi.W - 1)
    r0 = np.minimum(np.floor(u).astype(int), roi.H - 1)
    c0 = np.minimum(np.floor(v).astype(int), roi.W - 1)
    r1 = np.minimum(r0 + 1, roi.H - 1)
    c1 = np.minimum(c0 + 1, roi.W - 1)
    fu = u - r0
    fv = v - c0
    idx = np.stack([r0 * roi.W + c0, r0 * roi.W + c1, r1 * roi.W + c0, r1 * roi.W + c1], axis=-1)
    wts = np.stack([(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv], axis=-1)
    wts = np.where(inside[..., None], wts, 0.0)
    return idx, wts, inside


def index_volume(volume: np.ndarray, xy: np.ndarray, roi: RoiSpec, outside: float = OUTSIDE_COST) -> np.ndarray:
    """Per-waypoint costs (..., T) for positions (..., T, 2); waypoint t reads
    slice t. Out-of-region waypoints cost ``outside``."""
    vol = np.asarray(volume, dtype=float)
    t_dim, h, w = vol.shape
    if (h, w) != (roi.H, roi.W):
        raise ValueError(f"volume grid {h}x{w} does not match region {roi.H}x{roi.W}")
    xy = np.asarray(xy, dtype=float)
    if xy.shape[-2] != t_dim:
        raise ValueError(f"trajectory has {xy.shape[-2]} steps, volume has {t_dim}")
    idx, wts, inside = bilinear_taps(xy, roi)
    flat = vol.reshape(t_dim, -1)
    t_idx = np.arange(t_dim).reshape((1,) * (xy.ndim - 2) + (t_dim, 1))
    vals = flat[t_idx, idx]
    costs = np.sum(wts * vals, axis=-1)
    return np.where(inside, costs, outside)


# ---------------------------------------------------------------- dump formats


def dump_volume(volume: np.ndarray, path) -> None:
    """NMPV header (magic, u32 T, H, W) then T*H*W little-endian f32."""
    vol = np.asarray(volume)
    t, h, w = vol.shape
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC + struct.pack("<III", t, h, w))
        fh.write(np.ascontiguousarray(vol, dtype="<f4").tobytes())


def load_volume(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != VOLUME_MAGIC:
        raise ValueError("not an NMPV file")
    t, h, w = struct.unpack("<III", blob[4:16])
    body = blob[16:]
    if len(body) != 4 * t * h * w:
        raise ValueError("NMPV payload size does not match header")
    return np.frombuffer(body, dtype="<f4").reshape(t, h, w).copy()


def dump_volume_csv(volume: np.ndarray, path, roi: RoiSpec) -> None:
    """Long format: t, row, col, x, y, cost (cell centres)."""
    vol = np.asarray(volume, dtype=np.float32)
    xs = -roi.length_back + (np.arange(roi.H) + 0.5) * roi.cell
    ys = -roi.width_half + (np.arange(roi.W) + 0.5) * roi.cell
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "row", "col", "x", "y", "cost"])
        for t in range(vol.shape[0]):
            for r in range(vol.shape[1]):
                for c in range(vol.shape[2]):
                    wr.writerow([t, r, c, f"{xs[r]:.6g}", f"{ys[c]:.6g}", repr(float(vol[t, r, c]))])


def load_volume_csv(path) -> np.ndarray:
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    rows = rows.reshape(-1, 6)
    t, h, w = (int(rows[:, i].max()) + 1 for i in range(3))
    vol = np.zeros((t, h, w), dtype=np.float32)
    vol[rows[:, 0].astype(int), rows[:, 1].astype(int), rows[:, 2].astype(int)] = rows[:, 5]
    return vol
