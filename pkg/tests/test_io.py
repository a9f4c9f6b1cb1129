import numpy as np
import pytest

from instconv import io


def test_ppm_round_trip(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3)) / 255.0
    io.write_ppm(tmp_path / "a.ppm", rgb)
    np.testing.assert_array_equal(io.read_ppm(tmp_path / "a.ppm"), rgb)


def test_ppm_with_comments_and_16bit(tmp_path):
    px = np.array([[[0, 1000, 65535], [7, 8, 9]]], dtype=">u2")
    (tmp_path / "b.ppm").write_bytes(b"P6\n# made by hand\n2 1\n# another\n65535\n" + px.tobytes())
    np.testing.assert_array_equal(io.read_ppm(tmp_path / "b.ppm"), px.astype(float) / 65535)


@pytest.mark.parametrize("bits", [8, 16])
def test_pgm_round_trip(tmp_path, bits):
    vals = np.random.default_rng(1).integers(0, 2 ** bits, size=(6, 4))
    io.write_pgm(tmp_path / "a.pgm", vals, bits=bits)
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "a.pgm"), vals)


def test_pgm_range_checked(tmp_path):
    with pytest.raises(ValueError):
        io.write_pgm(tmp_path / "a.pgm", np.array([[256]]), bits=8)


def test_malformed_files(tmp_path):
    (tmp_path / "x.ppm").write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(io.FormatError):
        io.read_ppm(tmp_path / "x.ppm")
    (tmp_path / "y.ppm").write_bytes(b"P6\n4 4\n255\n\x00\x00")
    with pytest.raises(io.FormatError):
        io.read_ppm(tmp_path / "y.ppm")
    (tmp_path / "z.fr").write_bytes(b"FR1\n2 2\n" + b"\x00" * 12)
    with pytest.raises(io.FormatError):
        io.read_float_raster(tmp_path / "z.fr")
    (tmp_path / "w.fr").write_bytes(b"XX\n")
    with pytest.raises(io.FormatError):
        io.read_float_raster(tmp_path / "w.fr")


def test_segment_map_round_trip(tmp_path):
    labels = np.random.default_rng(2).integers(0, 300, size=(9, 11))
    io.write_segment_map(tmp_path / "s.pgm", labels, k=64, sigma=1.0)
    assert io.read_segment_map(tmp_path / "s.pgm").tobytes() == labels.astype(np.int32).tobytes()
    side = io.read_sidecar(tmp_path / "s.pgm")
    assert side["segment_count"] == str(labels.max() + 1) and side["k"] == "64"


def test_float_raster_round_trip(tmp_path):
    vals = np.random.default_rng(3).uniform(0, 10, size=(4, 6)).astype(np.float32)
    io.write_float_raster(tmp_path / "d.fr", vals)
    data = (tmp_path / "d.fr").read_bytes()
    assert data.startswith(b"FR1\n4 6\n") and len(data) == 8 + 4 * 24
    np.testing.assert_array_equal(io.read_float_raster(tmp_path / "d.fr"), vals)
    with pytest.raises(ValueError):
        io.write_float_raster(tmp_path / "e.fr", np.zeros((2, 2, 2)))


def test_preview_sidecar(tmp_path):
    d = np.linspace(1.5, 4.25, 20).reshape(4, 5)
    io.write_preview(tmp_path / "p.pgm", d)
    img = io.read_pgm(tmp_path / "p.pgm")
    assert img.min() == 0 and img.max() == 255
    side = io.read_sidecar(tmp_path / "p.pgm")
    assert float(side["min"]) == 1.5 and float(side["max"]) == 4.25


def test_config_round_trip_and_validation():
    cfg = io.RunConfig(k=32, lr=5e-4, head="sc", cx=10.5)
    back = io.parse_config(cfg.to_text())
    assert back == cfg
    assert io.parse_config("# only a comment\n\n") == io.RunConfig()
    for bad in ("unknown = 3", "k = many", "just words"):
        with pytest.raises(io.FormatError):
            io.parse_config(bad)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    params = {"b.w": rng.normal(size=(2, 3, 3, 3)), "a.b": rng.normal(size=2)}
    io.save_checkpoint(tmp_path / "c.bin", params, {"head": "ic"})
    back, meta = io.load_checkpoint(tmp_path / "c.bin")
    assert meta == {"head": "ic"}
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()
    (tmp_path / "d.bin").write_bytes((tmp_path / "c.bin").read_bytes()[:-8])
    with pytest.raises(io.FormatError):
        io.load_checkpoint(tmp_path / "d.bin")
