import json
import zlib

import numpy as np
import pytest

from mosaicgen.backend import GenerationRequest, generate, iter_mfat_results
from mosaicgen.catalog import Category, build_prompt
from mosaicgen.geometry import CanvasSpec, MosaicCenter, plan_regions
from mosaicgen.mfat import (
    ALIGNMENT,
    BadMagic,
    ChecksumMismatch,
    CorruptIndex,
    VersionUnsupported,
    parse_tensor_name,
    read_mfat,
    tensor_name,
    write_mfat,
)
from mosaicgen.synthetic import SyntheticBackend

CAT = Category(id=5, name="parrot", definition="a colorful bird", bucket="common")


def tiny_result(seed=3, steps=2, dtype="f32", n=1):
    spec = CanvasSpec(object_count=n, width=128 if n == 1 else 256,
                      height=96 if n == 1 else 192,
                      jitter_ratio=0.375, overlap_x=16, overlap_y=16)
    rng = np.random.default_rng(seed)
    from mosaicgen.geometry import jitter_center

    center = jitter_center(spec, rng)
    plan = plan_regions(spec, center, rng)
    prompts = tuple(build_prompt(CAT, "photo_single") for _ in plan.regions)
    request = GenerationRequest(plan=plan, prompts=prompts, seed=seed, steps=steps)
    return generate(request, SyntheticBackend(dtype=dtype))


def assert_results_equal(a, b):
    assert np.array_equal(a.image, b.image)
    assert a.backend_id == b.backend_id
    assert a.token_map == b.token_map
    assert a.request == b.request
    assert len(a.stacks) == len(b.stacks)
    for sa, sb in zip(a.stacks, b.stacks):
        assert sa.region_index == sb.region_index
        assert sorted(sa.entries) == sorted(sb.entries)
        for key in sa.entries:
            ta, tb = sa.entries[key], sb.entries[key]
            assert ta.dtype == tb.dtype
            assert ta.tobytes() == tb.tobytes()


class TestRoundTrip:
    @pytest.mark.parametrize("dtype", ["f16", "f32"])
    def test_lossless(self, tmp_path, dtype):
        result = tiny_result(dtype=dtype)
        path = write_mfat(result, tmp_path / "canvas0")
        assert_results_equal(read_mfat(path), result)

    def test_multi_region(self, tmp_path):
        result = tiny_result(n=4)
        path = write_mfat(result, tmp_path / "canvas1")
        assert_results_equal(read_mfat(path), result)

    def test_payload_alignment(self, tmp_path):
        result = tiny_result()
        path = write_mfat(result, tmp_path / "canvas2")
        data = path.read_bytes()
        header_len = int.from_bytes(data[5:9], "little")
        header = json.loads(data[9:9 + header_len])
        assert header["tensors"]
        for entry in header["tensors"]:
            assert entry["byte_offset"] % ALIGNMENT == 0

    def test_write_is_deterministic(self, tmp_path):
        result = tiny_result()
        p1 = write_mfat(result, tmp_path / "x" / "canvas")
        p2 = write_mfat(result, tmp_path / "y" / "canvas")
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.with_suffix(".png").read_bytes() == p2.with_suffix(".png").read_bytes()


class TestCorruption:
    def corrupt(self, tmp_path, mutate):
        path = write_mfat(tiny_result(), tmp_path / "victim")
        data = bytearray(path.read_bytes())
        mutate(data)
        path.write_bytes(bytes(data))
        return path

    def test_bad_magic(self, tmp_path):
        path = self.corrupt(tmp_path, lambda d: d.__setitem__(0, ord("X")))
        with pytest.raises(BadMagic):
            read_mfat(path)

    def test_version_unsupported(self, tmp_path):
        path = self.corrupt(tmp_path, lambda d: d.__setitem__(4, 2))
        with pytest.raises(VersionUnsupported):
            read_mfat(path)

    def test_truncated_payload(self, tmp_path):
        path = write_mfat(tiny_result(), tmp_path / "victim")
        data = path.read_bytes()
        path.write_bytes(data[:len(data) - 100])
        with pytest.raises(CorruptIndex):
            read_mfat(path)

    def test_checksum_mismatch(self, tmp_path):
        def flip_payload_byte(d):
            header_len = int.from_bytes(d[5:9], "little")
            header = json.loads(bytes(d[9:9 + header_len]))
            offset = header["tensors"][0]["byte_offset"]
            d[offset] ^= 0xFF

        path = self.corrupt(tmp_path, flip_payload_byte)
        with pytest.raises(ChecksumMismatch):
            read_mfat(path)

    def test_tiny_file_bad_magic(self, tmp_path):
        path = tmp_path / "short.mfat"
        path.write_bytes(b"MF")
        with pytest.raises(BadMagic):
            read_mfat(path)

    def test_header_overruns_file(self, tmp_path):
        def lie_about_header(d):
            d[5:9] = (2**31).to_bytes(4, "little")

        path = self.corrupt(tmp_path, lie_about_header)
        with pytest.raises(CorruptIndex):
            read_mfat(path)


def test_tensor_names():
    name = tensor_name(2, 13, "up1-8")
    assert name == "region2/t13/layerup1-8"
    assert parse_tensor_name(name) == (2, 13, "up1-8")
    with pytest.raises(CorruptIndex):
        parse_tensor_name("nonsense")


def test_iter_mfat_results(tmp_path):
    result = tiny_result()
    write_mfat(result, tmp_path / "one")
    loaded = list(iter_mfat_results(tmp_path))
    assert len(loaded) == 1
    assert_results_equal(loaded[0], result)


def test_crc_recorded_matches_zlib(tmp_path):
    result = tiny_result()
    path = write_mfat(result, tmp_path / "crc")
    data = path.read_bytes()
    header_len = int.from_bytes(data[5:9], "little")
    header = json.loads(data[9:9 + header_len])
    entry = header["tensors"][0]
    blob = data[entry["byte_offset"]:entry["byte_offset"] + entry["byte_length"]]
    assert zlib.crc32(blob) & 0xFFFFFFFF == entry["crc32"]
