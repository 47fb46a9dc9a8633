import numpy as np
import pytest

from homogch.geometry import (
    CellGeometry,
    GeometryError,
    boundary_faces,
    build_channel_cell,
    build_obstacle_cell,
    empty_cell,
    load_mask,
    mask_from_text,
    mask_to_text,
    n_components,
    percolates,
    porosity,
    save_mask,
)


def test_wavy_channel_porosity_matches_cross_section():
    cell = build_channel_cell(0.27, 0.46, 128)
    assert abs(cell.porosity - 0.46) <= 0.01


def test_full_cross_section_is_empty_cell():
    cell = build_channel_cell(0.0, 1.0, 64)
    assert cell.porosity == 1.0
    assert (~cell.mask).sum() == 0
    assert boundary_faces(cell) == []


def test_straight_channel_porosity_is_exact():
    cell = build_channel_cell(0.0, 0.5, 128)
    assert porosity(cell) == 0.5


def test_all_solid_porosity_zero():
    cell = CellGeometry(np.zeros((16, 16), dtype=bool))
    assert porosity(cell) == 0.0


@pytest.mark.parametrize("amp, cs", [(-0.1, 0.5), (0.0, 0.0), (0.0, 1.2), (0.6, 0.5)])
def test_channel_parameter_errors(amp, cs):
    with pytest.raises(GeometryError):
        build_channel_cell(amp, cs, 64)


def test_low_resolution_rejected():
    with pytest.raises(GeometryError):
        build_channel_cell(0.1, 0.4, 8)


def test_disconnected_fluid_rejected():
    # a very thin, steep channel breaks into pieces on a coarse grid
    with pytest.raises(GeometryError):
        build_channel_cell(0.45, 0.02, 32)


def test_straight_channel_faces_are_horizontal_walls():
    cell = build_channel_cell(0.0, 0.5, 64)
    faces = boundary_faces(cell)
    assert len(faces) == 2 * 64
    assert {f.normal for f in faces} == {(0, 1), (0, -1)}
    ys = sorted({round(f.location[1], 12) for f in faces})
    assert ys == [0.25, 0.75]


def test_wavy_channel_faces_have_both_orientations():
    normals = {f.normal for f in boundary_faces(build_channel_cell(0.1, 0.46, 64))}
    assert normals == {(1, 0), (-1, 0), (0, 1), (0, -1)}


def test_faces_point_from_fluid_into_solid():
    cell = build_obstacle_cell(0.3, 32)
    for f in boundary_faces(cell):
        j = (f.j + f.normal[1]) % cell.ny
        i = (f.i + f.normal[0]) % cell.nx
        assert cell.mask[f.j, f.i] and not cell.mask[j, i]


def test_translation_invariance_of_porosity_and_faces():
    cell = build_channel_cell(0.1, 0.46, 64)
    shifted = CellGeometry(np.roll(cell.mask, 17, axis=1))
    assert shifted.porosity == cell.porosity
    key = lambda fs: sorted(f.normal for f in fs)  # noqa: E731
    assert key(boundary_faces(shifted)) == key(boundary_faces(cell))


def test_refinement_changes_porosity_by_o_of_h():
    for n in (32, 64, 128):
        p1 = build_channel_cell(0.1, 0.46, n).porosity
        p2 = build_channel_cell(0.1, 0.46, 2 * n).porosity
        assert abs(p1 - p2) <= 2.0 / n


@pytest.mark.parametrize("cell", [
    build_channel_cell(0.0, 1.0, 32),
    build_channel_cell(0.0, 0.5, 32),
    build_obstacle_cell(0.2, 32),
])
def test_faces_empty_iff_porosity_one(cell):
    assert (len(boundary_faces(cell)) == 0) == (cell.porosity == 1.0)


def test_percolation_directions():
    channel = build_channel_cell(0.1, 0.46, 64).mask
    assert percolates(channel, axis=1)
    assert not percolates(channel, axis=0)
    obstacle = build_obstacle_cell(0.2, 32).mask
    assert percolates(obstacle, axis=0) and percolates(obstacle, axis=1)
    blob = np.zeros((16, 16), dtype=bool)
    blob[4:10, 4:10] = True
    assert n_components(blob) == 1
    assert not percolates(blob, axis=0) and not percolates(blob, axis=1)


def test_mask_text_round_trip(tmp_path):
    cell = build_channel_cell(0.1, 0.46, 32)
    text = mask_to_text(cell.mask)
    assert set(text) <= {"0", "1", "\n"}
    assert np.array_equal(mask_from_text(text), cell.mask)
    save_mask(cell, tmp_path / "mask.txt")
    again = load_mask(tmp_path / "mask.txt")
    assert again.digest() == cell.digest()


def test_mask_text_top_row_is_high_y():
    mask = np.zeros((4, 4), dtype=bool)
    mask[3, :] = True
    assert mask_to_text(mask).splitlines()[0] == "1111"


def test_malformed_mask_text():
    with pytest.raises(GeometryError):
        mask_from_text("0101\n011\n")
    with pytest.raises(GeometryError):
        mask_from_text("01x1\n")


def test_empty_cell_helper():
    assert empty_cell(16).porosity == 1.0
