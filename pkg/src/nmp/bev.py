"""Bird's-eye-view rasterization of LiDAR sweeps and map layers.

The grid is SDV-centred: rows grow forward (+x), columns grow to the left
(+y). Cell (r, c) covers x in [-length_back + r*cell, ... + cell).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:
    from .scenario.model import Scenario

SOLID = "solid"

_QUANT_EPS = 1e-9
BEV_MAGIC = b"BEVT"
MAP_CHANNELS = ("road", "lane_centerline", "solid_boundary", "stop_line")


@dataclass(frozen=True)
class RoiSpec:
    length_fwd: float = 43.2
    length_back: float = 14.4
    width_half: float = 16.0
    z_min: float = -2.0
    z_max: float = 3.4
    cell: float = 0.4
    z_cell: float = 1.8
    T_prime: int = 10

    def __post_init__(self):
        for name in ("length_fwd", "length_back", "width_half", "cell", "z_cell"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.z_max <= self.z_min:
            raise ValueError("z_max must exceed z_min")
        if self.T_prime < 1:
            raise ValueError("T_prime must be >= 1")
        for label, extent, step in (
            ("H", self.length_fwd + self.length_back, self.cell),
            ("W", 2 * self.width_half, self.cell),
            ("Z", self.z_max - self.z_min, self.z_cell),
        ):
            ratio = extent / step
            if abs(ratio - round(ratio)) > 1e-6:
                raise ValueError(f"grid dimension {label} = {ratio} is not an integer")

    @property
    def H(self) -> int:
        return int(round((self.length_fwd + self.length_back) / self.cell))

    @property
    def W(self) -> int:
        return int(round(2 * self.width_half / self.cell))

    @property
    def Z(self) -> int:
        return int(round((self.z_max - self.z_min) / self.z_cell))

    @property
    def n_occupancy(self) -> int:
        return self.Z * self.T_prime

    @property
    def bounds(self) -> tuple:
        """(x_min, x_max, y_min, y_max) of the region."""
        return (-self.length_back, self.length_fwd, -self.width_half, self.width_half)

    def with_sweeps(self, t_prime: int) -> "RoiSpec":
        return RoiSpec(**{**self.__dict__, "T_prime": int(t_prime)})

    @classmethod
    def full_scale(cls) -> "RoiSpec":
        """The 704 x 400 x 27 region used for full-size runs."""
        return cls(70.4, 70.4, 40.0, -2.0, 3.4, 0.2, 0.2, 10)


@dataclass
class BevTensor:
    data: np.ndarray  # H x W x C
    channel_map: list = field(default_factory=list)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def to_nchw(self, dtype=np.float32) -> np.ndarray:
        return np.ascontiguousarray(self.data.transpose(2, 0, 1)[None], dtype=dtype)

    def channel(self, name: str) -> np.ndarray:
        return self.data[:, :, self.channel_map.index(name)]


def world_to_grid(p, roi: RoiSpec) -> Optional[tuple]:
    """(row, col) of the cell holding a point, or ``None`` outside the region.

    Accepts a Pose2 or an (x, y) pair.
    """
    x, y = (p.x, p.y) if hasattr(p, "x") else (float(p[0]), float(p[1]))
    rows, cols, ok = grid_indices(np.array([x]), np.array([y]), roi)
    if not ok[0]:
        return None
    return int(rows[0]), int(cols[0])


def grid_indices(xs: np.ndarray, ys: np.ndarray, roi: RoiSpec):
    """Vectorized floor quantization; returns rows, cols and an in-bounds mask."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    rows = np.floor((xs + roi.length_back) / roi.cell + _QUANT_EPS).astype(int)
    cols = np.floor((ys + roi.width_half) / roi.cell + _QUANT_EPS).astype(int)
    ok = (
        (xs >= -roi.length_back)
        & (xs < roi.length_fwd)
        & (ys >= -roi.width_half)
        & (ys < roi.width_half)
        & (rows >= 0)
        & (rows < roi.H)
        & (cols >= 0)
        & (cols < roi.W)
    )
    return rows, cols, ok


def cell_centers(roi: RoiSpec) -> tuple:
    """(H, W) arrays of cell-centre x and y."""
    xs = -roi.length_back + (np.arange(roi.H) + 0.5) * roi.cell
    ys = -roi.width_half + (np.arange(roi.W) + 0.5) * roi.cell
    return np.meshgrid(xs, ys, indexing="ij")


def occupancy_channel_names(roi: RoiSpec) -> list:
    return [f"sweep{s}_z{z}" for s in range(roi.T_prime) for z in range(roi.Z)]


def rasterize_sweeps(points: np.ndarray, roi: RoiSpec) -> BevTensor:
    """Binary occupancy; channel = sweep_index * Z + z_slice."""
    pts = np.asarray(points, dtype=float).reshape(-1, 4)
    if not np.all(np.isfinite(pts)):
        raise ValueError("point coordinates must be finite")
    data = np.zeros((roi.H, roi.W, roi.n_occupancy), dtype=np.float32)
    if len(pts):
        sweep = pts[:, 3].astype(int)
        if np.any(sweep < 0) or np.any(sweep >= roi.T_prime) or np.any(sweep != pts[:, 3]):
            raise ValueError(f"sweep index must be an integer in [0, {roi.T_prime})")
        rows, cols, ok = grid_indices(pts[:, 0], pts[:, 1], roi)
        zs = np.floor((pts[:, 2] - roi.z_min) / roi.z_cell + _QUANT_EPS).astype(int)
        ok &= (pts[:, 2] >= roi.z_min) & (pts[:, 2] < roi.z_max) & (zs >= 0) & (zs < roi.Z)
        data[rows[ok], cols[ok], sweep[ok] * roi.Z + zs[ok]] = 1.0
    return BevTensor(data, occupancy_channel_names(roi))


# ---------------------------------------------------------------- map layers


def polygon_mask(polygon: np.ndarray, roi: RoiSpec) -> np.ndarray:
    """Cells whose centre lies inside the polygon (even-odd rule)."""
    poly = np.asarray(polygon, dtype=float).reshape(-1, 2)
    mask = np.zeros((roi.H, roi.W), dtype=bool)
    if len(poly) < 3:
        return mask
    cx, cy = cell_centers(roi)
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        if ay == by:
            continue
        crosses = (ay > cy) != (by > cy)
        x_at = ax + (cy - ay) * (bx - ax) / (by - ay)
        mask ^= crosses & (cx < x_at)
    return mask


def trace_segment(a, b, roi: RoiSpec) -> list:
    """Every grid cell the segment a-b passes through (grid traversal)."""
    # continuous grid coordinates
    u0 = (a[0] + roi.length_back) / roi.cell
    v0 = (a[1] + roi.width_half) / roi.cell
    u1 = (b[0] + roi.length_back) / roi.cell
    v1 = (b[1] + roi.width_half) / roi.cell
    r, c = math.floor(u0), math.floor(v0)
    r_end, c_end = math.floor(u1), math.floor(v1)
    du, dv = u1 - u0, v1 - v0
    step_r = 1 if du > 0 else -1
    step_c = 1 if dv > 0 else -1
    t_dr = abs(1.0 / du) if du != 0 else math.inf
    t_dc = abs(1.0 / dv) if dv != 0 else math.inf
    t_r = ((r + 1 - u0) if du > 0 else (u0 - r)) * t_dr if du != 0 else math.inf
    t_c = ((c + 1 - v0) if dv > 0 else (v0 - c)) * t_dc if dv != 0 else math.inf
    cells = [(r, c)]
    max_steps = abs(r_end - r) + abs(c_end - c) + 2
    for _ in range(max_steps):
        if (r, c) == (r_end, c_end):
            break
        if t_r < t_c:
            if t_r > 1.0:
                break
            r += step_r
            t_r += t_dr
        else:
            if t_c > 1.0:
                break
            c += step_c
            t_c += t_dc
        cells.append((r, c))
    return cells


def polyline_mask(points: np.ndarray, roi: RoiSpec) -> np.ndarray:
    """One-cell-wide stroke of a polyline."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    mask = np.zeros((roi.H, roi.W), dtype=bool)
    for a, b in zip(pts[:-1], pts[1:]):
        a, b = _clip_segment(a, b, roi)
        if a is None:
            continue
        for r, c in trace_segment(a, b, roi):
            if 0 <= r < roi.H and 0 <= c < roi.W:
                mask[r, c] = True
    return mask


def _clip_segment(a, b, roi: RoiSpec):
    """Liang-Barsky clip to the region so traversal stays bounded."""
    x0, x1, y0, y1 = roi.bounds
    # shrink the far edges a hair so endpoints land in the last cell
    eps = 1e-9
    d = b - a
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], a[0] - x0), (d[0], x1 - eps - a[0]), (-d[1], a[1] - y0), (d[1], y1 - eps - a[1])):
        if p == 0:
            if q < 0:
                return None, None
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return None, None
    return a + t0 * d, a + t1 * d


def rasterize_map(scenario: Scenario, roi: RoiSpec, t: float = 0.0) -> BevTensor:
    """Four map layers: drivable road (filled), lane centrelines, solid
    boundaries and stop-lines that are active (red) at time ``t`` (strokes)."""
    data = np.zeros((roi.H, roi.W, len(MAP_CHANNELS)), dtype=np.float32)
    if len(scenario.road) >= 3:
        data[:, :, 0] = polygon_mask(scenario.road, roi)
    for lane in scenario.lanes:
        data[:, :, 1] = np.maximum(data[:, :, 1], polyline_mask(lane.centerline, roi))
    for b in scenario.boundaries:
        if b.style == SOLID:
            data[:, :, 2] = np.maximum(data[:, :, 2], polyline_mask(b.points, roi))
    for line in scenario.stop_lines:
        if scenario.stop_line_active(line, t):
            data[:, :, 3] = np.maximum(data[:, :, 3], polyline_mask(np.stack([line.p0, line.p1]), roi))
    return BevTensor(data, list(MAP_CHANNELS))


def stack(*tensors: BevTensor) -> BevTensor:
    data = np.concatenate([t.data for t in tensors], axis=2)
    names = [n for t in tensors for n in t.channel_map]
    return BevTensor(data, names)


# ---------------------------------------------------------------- dump format


def dump_bev(tensor: BevTensor, path) -> None:
    """BEVT header (magic, u32 H, W, C) then H*W*C little-endian f32."""
    h, w, c = tensor.data.shape
    with open(path, "wb") as fh:
        fh.write(BEV_MAGIC + struct.pack("<III", h, w, c))
        fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def load_bev(path) -> BevTensor:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != BEV_MAGIC:
        raise ValueError("not a BEVT file")
    h, w, c = struct.unpack("<III", blob[4:16])
    body = blob[16:]
    if len(body) != 4 * h * w * c:
        raise ValueError("BEVT payload size does not match header")
    return BevTensor(np.frombuffer(body, dtype="<f4").reshape(h, w, c).copy(), [])
