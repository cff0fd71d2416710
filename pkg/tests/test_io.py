import io

import numpy as np
import pytest

from gridquery import (
    PointFileError,
    load_cloud,
    load_cloud_ascii,
    load_cloud_binary,
    save_cloud_ascii,
    save_cloud_binary,
)

from conftest import make_cloud


class TestAsciiFormat:
    def test_roundtrip_positions_and_features(self, tmp_path):
        cloud = make_cloud([[0.5, -1.25, 3.0], [2, 2, 2]], features=[[1.0, 0.5], [0.0, 7.0]])
        path = tmp_path / "c.txt"
        save_cloud_ascii(cloud, path)
        back = load_cloud_ascii(path)
        np.testing.assert_array_equal(back.positions, cloud.positions)
        np.testing.assert_array_equal(back.features, cloud.features)
        assert back.weights.tolist() == [1.0, 1.0]

    def test_comments_and_blank_lines_ignored(self):
        text = "# header\n\n0 0 0\n# mid\n1 1 1\n"
        cloud = load_cloud_ascii(io.StringIO(text))
        assert cloud.n == 2

    def test_non_numeric_token_reports_line(self):
        text = "0 0 0\n1 1 1\n2 2 2\n3 3 3\n4 oops 4\n"
        with pytest.raises(PointFileError) as err:
            load_cloud_ascii(io.StringIO(text))
        assert err.value.line == 5
        assert "line 5" in str(err.value)

    def test_short_line_reports_line(self):
        with pytest.raises(PointFileError) as err:
            load_cloud_ascii(io.StringIO("0 0 0\n1 1\n"))
        assert err.value.line == 2

    def test_inconsistent_feature_dims_rejected(self):
        with pytest.raises(PointFileError) as err:
            load_cloud_ascii(io.StringIO("0 0 0 1 2\n1 1 1\n"))
        assert err.value.line == 2

    def test_empty_file_rejected(self):
        with pytest.raises(PointFileError):
            load_cloud_ascii(io.StringIO("# nothing\n"))


class TestBinaryFormat:
    def test_roundtrip(self, tmp_path):
        cloud = make_cloud([[0.5, -1.25, 3.0], [2, 2, 2]], features=[[1.0, 0.5], [0.0, 7.0]])
        path = tmp_path / "c.pcf"
        save_cloud_binary(cloud, path)
        back = load_cloud_binary(path)
        # float32 storage
        np.testing.assert_allclose(back.positions, cloud.positions, atol=1e-6)
        np.testing.assert_allclose(back.features, cloud.features, atol=1e-6)

    def test_bad_magic(self):
        with pytest.raises(PointFileError):
            load_cloud_binary(io.BytesIO(b"NOPE" + b"\x00" * 16))

    def test_truncated_payload(self, tmp_path):
        cloud = make_cloud([[0, 0, 0], [1, 1, 1]])
        path = tmp_path / "c.pcf"
        save_cloud_binary(cloud, path)
        data = path.read_bytes()
        with pytest.raises(PointFileError):
            load_cloud_binary(io.BytesIO(data[:-4]))


class TestSniffingLoader:
    def test_dispatches_on_magic(self, tmp_path):
        cloud = make_cloud([[1, 2, 3]])
        a, b = tmp_path / "a.txt", tmp_path / "b.pcf"
        save_cloud_ascii(cloud, a)
        save_cloud_binary(cloud, b)
        assert load_cloud(a).n == 1
        assert load_cloud(b).n == 1
