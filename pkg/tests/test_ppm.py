"""PPM P6 reading and writing."""

import numpy as np
import pytest

from adair.errors import MalformedHeader, TruncatedPayload
from adair.ppm import read_image, write_image


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(3, 13, 17)).astype(np.float64) / 255.0
    path = tmp_path / "img.ppm"
    write_image(path, img)
    again = read_image(path)
    np.testing.assert_array_equal(again, img)
    write_image(tmp_path / "img2.ppm", again)
    assert (tmp_path / "img2.ppm").read_bytes() == path.read_bytes()


def test_known_2x2_fixture(tmp_path):
    payload = bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 128, 128, 128])
    path = tmp_path / "fix.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + payload)
    img = read_image(path)
    assert img.shape == (3, 2, 2)
    np.testing.assert_allclose(img[:, 0, 0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(img[:, 0, 1], [0.0, 1.0, 0.0])
    np.testing.assert_allclose(img[:, 1, 0], [0.0, 0.0, 1.0])
    np.testing.assert_allclose(img[:, 1, 1], [128 / 255] * 3)


def test_header_comments_are_skipped(tmp_path):
    path = tmp_path / "c.ppm"
    path.write_bytes(b"P6\n# made by hand\n1 1\n# again\n255\n\x01\x02\x03")
    img = read_image(path)
    np.testing.assert_allclose(img.reshape(3), np.array([1, 2, 3]) / 255.0)


def test_malformed_magic(tmp_path):
    path = tmp_path / "bad.ppm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes(12))
    with pytest.raises(MalformedHeader):
        read_image(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "short.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(TruncatedPayload):
        read_image(path)


def test_nonnumeric_header(tmp_path):
    path = tmp_path / "odd.ppm"
    path.write_bytes(b"P6\ntwo 2\n255\n" + bytes(12))
    with pytest.raises(MalformedHeader):
        read_image(path)
