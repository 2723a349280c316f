import numpy as np
import pytest

from rscorrect.io import read_bundle, read_pfm, read_ppm, to_uint8, write_bundle, write_pfm, write_ppm
from rscorrect.motion import FieldBundle


@pytest.mark.parametrize("channels", [1, 3])
def test_pfm_round_trip_bit_exact(tmp_path, channels):
    img = np.random.default_rng(0).random((7, 5, channels)).astype(np.float32).astype(np.float64)
    write_pfm(tmp_path / "a.pfm", img)
    back = read_pfm(tmp_path / "a.pfm")
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, img)


def test_pfm_header_and_row_order(tmp_path):
    img = np.arange(6, dtype=np.float64).reshape(2, 3, 1)
    write_pfm(tmp_path / "a.pfm", img)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n3 2\n-1.0\n")
    data = np.frombuffer(raw[len(b"Pf\n3 2\n-1.0\n"):], dtype="<f4")
    np.testing.assert_array_equal(data, [3, 4, 5, 0, 1, 2])  # bottom row first


def test_pfm_two_channel_field(tmp_path):
    f = np.random.default_rng(1).standard_normal((4, 4, 2)).astype(np.float32).astype(np.float64)
    write_pfm(tmp_path / "f.pfm", f)
    np.testing.assert_array_equal(read_pfm(tmp_path / "f.pfm", channels=2), f)


def test_pfm_rejects_garbage(tmp_path):
    (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n255\nabc")
    with pytest.raises(ValueError):
        read_pfm(tmp_path / "x.pfm")


def test_ppm_clamps_and_scales(tmp_path):
    img = np.array([[[-0.5, 0.5, 2.0]]])
    write_ppm(tmp_path / "a.ppm", img)
    raw = (tmp_path / "a.ppm").read_bytes()
    assert raw == b"P6\n1 1\n255\n" + bytes([0, 128, 255])
    np.testing.assert_allclose(read_ppm(tmp_path / "a.ppm"), to_uint8(img) / 255.0)


def test_bundle_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    b = FieldBundle(rng.standard_normal((3, 5, 6, 2)).astype(np.float32).astype(np.float64),
                    rng.standard_normal((3, 5, 6)).astype(np.float32).astype(np.float64))
    paths = write_bundle(tmp_path / "b", b)
    assert len(paths) == 4
    back = read_bundle(tmp_path / "b")
    np.testing.assert_array_equal(back.fields, b.fields)
    np.testing.assert_array_equal(back.weights, b.weights)
