import numpy as np
import pytest
from shapely.geometry import LineString, Point, Polygon, box as shapely_box

from nmp.bev import (
    MAP_CHANNELS,
    RoiSpec,
    cell_centers,
    dump_bev,
    grid_indices,
    load_bev,
    polygon_mask,
    polyline_mask,
    rasterize_map,
    rasterize_sweeps,
    stack,
    world_to_grid,
)
from nmp.geometry import Pose2

from helpers import solid, stop_line, straight_scenario

ROI = RoiSpec()


def test_desk_grid_shape():
    assert (ROI.H, ROI.W, ROI.Z) == (144, 80, 3)
    assert ROI.n_occupancy == 30
    assert ROI.with_sweeps(5).n_occupancy == 15


def test_full_scale_preset_shape():
    full = RoiSpec.full_scale()
    assert (full.H, full.W) == (704, 400)


def test_origin_quantization_fine_grid():
    roi = RoiSpec(length_fwd=14.72, length_back=14.08, width_half=8.0, cell=0.2)
    assert (roi.H, roi.W) == (144, 80)
    assert world_to_grid(Pose2(0.0, 0.0), roi) == (70, 40)


def test_desk_origin_cell():
    assert world_to_grid((0.0, 0.0), ROI) == (36, 40)


def test_far_boundary_and_outside():
    assert world_to_grid((ROI.length_fwd - 1e-3, ROI.width_half - 1e-3), ROI) == (ROI.H - 1, ROI.W - 1)
    assert world_to_grid((ROI.length_fwd, 0.0), ROI) is None
    assert world_to_grid((0.0, -ROI.width_half - 0.01), ROI) is None
    assert world_to_grid((-ROI.length_back, -ROI.width_half), ROI) == (0, 0)


def test_grid_rejects_non_integer_dims():
    with pytest.raises(ValueError):
        RoiSpec(cell=0.3)


def test_empty_points_all_zero():
    t = rasterize_sweeps(np.zeros((0, 4)), ROI)
    assert t.data.shape == (144, 80, 30) and not t.data.any()


def test_single_point_single_voxel():
    t = rasterize_sweeps(np.array([[1.0, 2.0, 0.5, 4]]), ROI)
    nz = np.argwhere(t.data)
    # row floor((1+14.4)/0.4)=38, col floor((2+16)/0.4)=45, z floor(2.5/1.8)=1, channel 4*3+1
    assert nz.tolist() == [[38, 45, 13]]


def test_duplicate_points_idempotent():
    pts = np.array([[1.0, 2.0, 0.5, 0], [1.01, 2.01, 0.6, 0]])
    t = rasterize_sweeps(pts, ROI)
    assert t.data.sum() == 1.0


def test_out_of_range_points_dropped():
    pts = np.array([[100.0, 0, 0, 0], [0, 0, 10.0, 0], [0, 0, -5.0, 0]])
    assert not rasterize_sweeps(pts, ROI).data.any()


def test_bad_points_rejected():
    with pytest.raises(ValueError):
        rasterize_sweeps(np.array([[np.nan, 0, 0, 0]]), ROI)
    with pytest.raises(ValueError):
        rasterize_sweeps(np.array([[0, 0, 0, 10]]), ROI)


def test_every_voxel_traces_back_to_a_point():
    rng = np.random.default_rng(3)
    pts = np.column_stack([
        rng.uniform(-20, 50, 500), rng.uniform(-20, 20, 500), rng.uniform(-3, 4, 500), rng.integers(0, 10, 500)
    ]).astype(float)
    t = rasterize_sweeps(pts, ROI)
    for r, c, ch in np.argwhere(t.data):
        s, z = divmod(ch, ROI.Z)
        x0 = -ROI.length_back + r * ROI.cell
        y0 = -ROI.width_half + c * ROI.cell
        z0 = ROI.z_min + z * ROI.z_cell
        hit = (
            (pts[:, 3] == s)
            & (pts[:, 0] >= x0 - 1e-9) & (pts[:, 0] < x0 + ROI.cell)
            & (pts[:, 1] >= y0 - 1e-9) & (pts[:, 1] < y0 + ROI.cell)
            & (pts[:, 2] >= z0 - 1e-9) & (pts[:, 2] < z0 + ROI.z_cell)
        )
        assert hit.any()


def test_no_map_elements_all_zero():
    sc = straight_scenario(road=np.zeros((0, 2)), lanes=[])
    t = rasterize_map(sc, ROI)
    assert t.channel_map == list(MAP_CHANNELS) and not t.data.any()


def test_straight_road_area():
    w = 3.5
    sc = straight_scenario(road=[[-5.0, -w / 2], [30.0, -w / 2], [30.0, w / 2], [-5.0, w / 2]])
    road = rasterize_map(sc, ROI).channel("road")
    expected = w * 35.0 / ROI.cell**2
    perimeter_cells = 2 * (w + 35.0) / ROI.cell
    assert abs(road.sum() - expected) <= perimeter_cells


def test_polygon_mask_matches_centre_containment():
    poly = np.array([[-3.0, -2.2], [10.0, -1.0], [6.0, 5.3], [-2.0, 3.0]])
    mask = polygon_mask(poly, ROI)
    P = Polygon(poly)
    cx, cy = cell_centers(ROI)
    expected = np.vectorize(lambda x, y: P.contains(Point(x, y)))(cx, cy)
    # centres lying on an edge may go either way
    on_edge = np.vectorize(lambda x, y: P.exterior.distance(Point(x, y)) < 1e-9)(cx, cy)
    assert on_edge.sum() < 5
    assert ((mask != expected) & ~on_edge).sum() == 0


def _traced_oracle(points, roi):
    """Cells whose open square the segment interior intersects (shapely)."""
    line = LineString(points)
    mask = np.zeros((roi.H, roi.W), dtype=bool)
    x0, _, y0, _ = roi.bounds
    minx, miny, maxx, maxy = line.bounds
    r0 = max(int((minx - x0) // roi.cell) - 1, 0)
    r1 = min(int((maxx - x0) // roi.cell) + 1, roi.H - 1)
    c0 = max(int((miny - y0) // roi.cell) - 1, 0)
    c1 = min(int((maxy - y0) // roi.cell) + 1, roi.W - 1)
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            cell = shapely_box(x0 + r * roi.cell, y0 + c * roi.cell, x0 + (r + 1) * roi.cell, y0 + (c + 1) * roi.cell)
            inter = line.intersection(cell)
            if inter.length > 1e-9:
                mask[r, c] = True
    return mask


@pytest.mark.parametrize("seed", range(8))
def test_polyline_stroke_matches_line_trace(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform([-10, -12], [40, 12], (3, 2))
    got = polyline_mask(pts, ROI)
    expected = _traced_oracle(pts, ROI)
    # cells touched only at a corner are allowed either way
    assert np.all(got[expected])
    extra = got & ~expected
    assert extra.sum() <= 2


def test_boundary_layer_is_only_solid_lines():
    sc = straight_scenario(boundaries=[solid(1.75)])
    t = rasterize_map(sc, ROI)
    b = t.channel("solid_boundary")
    rows, cols = np.nonzero(b)
    _, col, _ = grid_indices(np.array([0.0]), np.array([1.75]), ROI)
    assert set(cols.tolist()) == {int(col[0])}
    assert len(set(rows.tolist())) == ROI.H


def test_stop_line_layer_follows_signal():
    red = rasterize_map(straight_scenario(stop_lines=[stop_line(20.0)]), ROI).channel("stop_line")
    green = rasterize_map(straight_scenario(stop_lines=[stop_line(20.0, red=False)]), ROI).channel("stop_line")
    assert red.sum() > 0 and green.sum() == 0


def test_stack_and_dump_roundtrip(tmp_path):
    occ = rasterize_sweeps(np.array([[1.0, 2.0, 0.5, 4]]), ROI)
    m = rasterize_map(straight_scenario(), ROI)
    t = stack(occ, m)
    assert t.data.shape == (144, 80, 34)
    assert t.to_nchw().shape == (1, 34, 144, 80)
    p = tmp_path / "x.bevt"
    dump_bev(t, p)
    blob = p.read_bytes()
    assert blob[:4] == b"BEVT" and len(blob) == 16 + 4 * 144 * 80 * 34
    back = load_bev(p)
    assert back.data.tobytes() == t.data.astype("<f4").tobytes()
    p.write_bytes(blob[:-3])
    with pytest.raises(ValueError):
        load_bev(p)
