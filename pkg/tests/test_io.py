import numpy as np
import pytest

from nssc.io import (
    FormatError,
    IntegrityError,
    UnsupportedVersionError,
    read_dictionary,
    read_grid,
    read_map,
    read_pfm,
    read_pgm,
    write_dictionary,
    write_grid,
    write_pfm,
    write_pgm,
)
from nssc.model import Dictionary


class TestPGM:
    def test_ascii(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_text("P2\n# comment\n2 2\n255\n0 1\n2 3\n")
        np.testing.assert_array_equal(read_pgm(p), [[0, 1], [2, 3]])

    @pytest.mark.parametrize("maxval", [255, 4000])
    def test_binary_round_trip(self, tmp_path, rng, maxval):
        grid = rng.integers(0, maxval + 1, (5, 7))
        p = tmp_path / "b.pgm"
        write_pgm(p, grid, maxval=maxval)
        np.testing.assert_array_equal(read_pgm(p), grid)

    def test_ascii_round_trip(self, tmp_path, rng):
        grid = rng.integers(0, 256, (3, 4))
        p = tmp_path / "c.pgm"
        write_pgm(p, grid, binary=False)
        np.testing.assert_array_equal(read_pgm(p), grid)

    def test_truncated_p5(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
        with pytest.raises(FormatError, match="expected 16 bytes, found 10") as info:
            read_pgm(p)
        assert info.value.offset == 11

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.pgm"
        p.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(FormatError):
            read_pgm(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "h.pgm"
        p.write_bytes(b"P5\nx 4\n255\n" + bytes(16))
        with pytest.raises(FormatError, match="width"):
            read_pgm(p)


class TestPFM:
    @pytest.mark.parametrize("little", [True, False])
    def test_round_trip_bit_exact(self, tmp_path, rng, little):
        grid = rng.standard_normal((6, 9)).astype(np.float32).astype(np.float64)
        p = tmp_path / "a.pfm"
        write_pfm(p, grid, little_endian=little)
        out = read_pfm(p)
        assert out.tobytes() == grid.tobytes()
        raw = p.read_bytes()
        write_pfm(tmp_path / "b.pfm", out, little_endian=little)
        assert (tmp_path / "b.pfm").read_bytes() == raw

    def test_rows_bottom_up(self, tmp_path):
        p = tmp_path / "r.pfm"
        p.write_bytes(b"Pf\n1 2\n-1.0\n" + np.array([1.0, 2.0], "<f4").tobytes())
        np.testing.assert_array_equal(read_pfm(p), [[2.0], [1.0]])

    def test_colour_rejected(self, tmp_path):
        p = tmp_path / "c.pfm"
        p.write_bytes(b"PF\n1 1\n-1.0\n" + bytes(12))
        with pytest.raises(FormatError, match="colour"):
            read_pfm(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.pfm"
        p.write_bytes(b"Pf\n2 2\n-1.0\n" + bytes(8))
        with pytest.raises(FormatError, match="expected 16 bytes, found 8"):
            read_pfm(p)


class TestGrid:
    def test_round_trip(self, tmp_path, rng):
        grid = rng.standard_normal((3, 5))
        p = tmp_path / "g.txt"
        write_grid(p, grid)
        assert read_grid(p).tobytes() == grid.tobytes()

    def test_count_mismatch(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("2 2\n1 2 3\n")
        with pytest.raises(FormatError):
            read_grid(p)

    def test_zero_is_missing(self, tmp_path):
        p = tmp_path / "d.pgm"
        write_pgm(p, np.array([[0, 32], [16, 0]]))
        m = read_map(p, zero_is_missing=True, scale=16)
        np.testing.assert_array_equal(m.values, [[0, 2], [1, 0]])
        np.testing.assert_array_equal(m.mask, [[True, False], [False, True]])


class TestDictionaryFile:
    def test_round_trip(self, tmp_path, rng):
        d = Dictionary(rng.standard_normal((12, 7)), (3, 4))
        p = tmp_path / "d.nssc"
        write_dictionary(p, d)
        out = read_dictionary(p)
        assert out.patch_dims == (3, 4)
        assert out.atoms.tobytes() == d.atoms.tobytes()

    def test_corrupted_byte(self, tmp_path, rng):
        p = tmp_path / "d.nssc"
        write_dictionary(p, Dictionary(rng.standard_normal((4, 3)), (2, 2)))
        data = bytearray(p.read_bytes())
        data[40] ^= 0x01
        p.write_bytes(bytes(data))
        with pytest.raises(IntegrityError):
            read_dictionary(p)

    def test_version_bump(self, tmp_path, rng):
        p = tmp_path / "d.nssc"
        write_dictionary(p, Dictionary(rng.standard_normal((4, 3)), (2, 2)))
        data = bytearray(p.read_bytes())
        data[9] = 2
        p.write_bytes(bytes(data))
        with pytest.raises(UnsupportedVersionError, match="version 2"):
            read_dictionary(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "d.nssc"
        p.write_bytes(b"NOT-A-DICT" + bytes(60))
        with pytest.raises(FormatError, match="magic"):
            read_dictionary(p)

    def test_size_mismatch(self, tmp_path, rng):
        p = tmp_path / "d.nssc"
        write_dictionary(p, Dictionary(rng.standard_normal((4, 3)), (2, 2)))
        data = p.read_bytes()
        p.write_bytes(data[:30] + data[38:])
        with pytest.raises(FormatError, match="payload"):
            read_dictionary(p)
