import numpy as np
import pytest

from gpreg.errors import ConfigError, EmptyInputError, ParseError
from gpreg.pointcloud import BBox, PointCloud, bbox, read_cloud, write_cloud

from conftest import uniform_cloud


def test_write_read_round_trip_is_exact(tmp_path):
    cloud = uniform_cloud(50, seed=1)
    path = tmp_path / "c.xyz"
    write_cloud(cloud, path)
    back = read_cloud(path)
    assert np.array_equal(back.xyz, cloud.xyz)


def test_reader_accepts_commas_and_comments(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# header\n1,2,3\n\n4 5 6  # trailing\n7\t8\t9\n")
    cloud = read_cloud(path, role="moving")
    assert cloud.role == "moving"
    assert np.array_equal(cloud.xyz, [[1, 2, 3], [4, 5, 6], [7, 8, 9]])


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2 3\n4 five 6\n")
    with pytest.raises(ParseError) as info:
        read_cloud(path)
    assert info.value.line_number == 2


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.xyz"
    path.write_text("# nothing\n")
    with pytest.raises(EmptyInputError):
        read_cloud(path)


def test_xyz_is_read_only():
    cloud = uniform_cloud(5)
    with pytest.raises(ValueError):
        cloud.xyz[0, 0] = 1.0


def test_bbox_and_union():
    a = PointCloud.from_arrays([[0, 0], [2, 1]], [0, 0])
    b = PointCloud.from_arrays([[-1, 0.5], [1, 3]], [0, 0])
    box = bbox(a).union(bbox(b))
    assert (box.x_min, box.x_max, box.y_min, box.y_max) == (-1, 2, 0, 3)
    assert box.width == 3 and box.height == 3
    assert np.allclose(box.center, [0.5, 1.5])


def test_degenerate_bbox_rejected():
    with pytest.raises(ConfigError):
        BBox(0, 0, 0, 1)
    with pytest.raises(EmptyInputError):
        bbox(PointCloud.from_arrays(np.zeros((0, 2)), []))


def test_take_and_crop():
    cloud = uniform_cloud(100, seed=2)
    box = BBox(0, 3, 0, 3)
    inside = cloud.crop(box)
    assert np.all(box.contains(inside.xy))
    assert len(cloud.take([3, 1])) == 2
