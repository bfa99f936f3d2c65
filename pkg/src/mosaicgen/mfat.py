"""MFAT v1: bit-exact container for a GenerationResult's attention tensors.

Layout: 5 magic bytes ``4D 46 41 54 01`` ("MFAT" + version), a little-endian
u32 header length, a UTF-8 JSON header, then tensor payloads. Each payload
starts on a 64-byte boundary and holds little-endian row-major data with
axis order (heads, h, w, tokens). The header's tensor table records name,
dtype, shape, byte offset/length and a CRC32 per payload. The decoded image
lives in a sibling PNG referenced by relative path in the header.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

from .backend import AttentionStack, GenerationRequest, GenerationResult, TokenMap
from .catalog import PromptSpec
from .errors import FormatError
from .geometry import plan_from_dict, plan_to_dict

MAGIC = b"MFAT"
VERSION = 1
ALIGNMENT = 64

_DTYPES = {"f16": np.dtype("<f2"), "f32": np.dtype("<f4")}


class BadMagic(FormatError):
    pass


class VersionUnsupported(FormatError):
    pass


class CorruptIndex(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass


def tensor_name(region_index: int, step: int, layer_id: str) -> str:
    return f"region{region_index}/t{step}/layer{layer_id}"


def parse_tensor_name(name: str) -> tuple[int, int, str]:
    try:
        region_part, step_part, layer_part = name.split("/")
        assert region_part.startswith("region") and step_part.startswith("t")
        assert layer_part.startswith("layer")
        return int(region_part[6:]), int(step_part[1:]), layer_part[5:]
    except (ValueError, AssertionError):
        raise CorruptIndex(f"malformed tensor name {name!r}") from None


def _dtype_tag(dtype: np.dtype) -> str:
    for tag, dt in _DTYPES.items():
        if dt == dtype:
            return tag
    raise ValueError(f"unsupported tensor dtype {dtype}; use f16 or f32")


def _pad_to(n: int, alignment: int = ALIGNMENT) -> int:
    return (alignment - n % alignment) % alignment


def write_mfat(result: GenerationResult, sink) -> Path:
    """Write ``<sink>.mfat`` plus the sibling PNG; returns the .mfat path."""
    path = Path(sink)
    if path.suffix != ".mfat":
        path = path.with_suffix(".mfat")
    png_path = path.with_suffix(".png")

    payloads: list[bytes] = []
    table: list[dict] = []
    for stack in result.stacks:
        for (t, layer_id) in sorted(stack.entries):
            tensor = stack.entries[(t, layer_id)]
            dtype_tag = _dtype_tag(tensor.dtype)
            blob = np.ascontiguousarray(tensor.astype(_DTYPES[dtype_tag], copy=False)).tobytes()
            table.append({
                "name": tensor_name(stack.region_index, t, layer_id),
                "dtype": dtype_tag,
                "shape": list(tensor.shape),
                "byte_length": len(blob),
                "crc32": zlib.crc32(blob) & 0xFFFFFFFF,
            })
            payloads.append(blob)

    request = result.request
    header = {
        "plan": plan_to_dict(request.plan),
        "prompts": [
            {
                "text": p.text, "subject_start": p.subject_start,
                "subject_end": p.subject_end, "category_id": p.category_id,
                "template_id": p.template_id,
            }
            for p in request.prompts
        ],
        "token_map": {
            "tokens": [list(row) for row in result.token_map.tokens],
            "subject_token_indices": [list(row)
                                      for row in result.token_map.subject_token_indices],
        },
        "sampler": {
            "seed": request.seed, "steps": request.steps,
            "guidance_scale": request.guidance_scale,
            "scheduler_id": request.scheduler_id,
        },
        "backend_id": result.backend_id,
        "image": png_path.name,
        "tensors": table,
    }

    # offsets live inside the header, so iterate to a fixed point: offsets
    # only grow with header length, hence the loop terminates
    for entry in table:
        entry["byte_offset"] = 0
    prev_len = -1
    while True:
        header_bytes = json.dumps(header, sort_keys=True,
                                  separators=(",", ":")).encode("utf-8")
        if len(header_bytes) == prev_len:
            break
        prev_len = len(header_bytes)
        offset = 5 + 4 + len(header_bytes)
        for entry, blob in zip(table, payloads):
            offset += _pad_to(offset)
            entry["byte_offset"] = offset
            offset += len(blob)

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]))
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        pos = 5 + 4 + len(header_bytes)
        for entry, blob in zip(table, payloads):
            pad = _pad_to(pos)
            fh.write(b"\x00" * pad)
            pos += pad
            assert pos == entry["byte_offset"]
            fh.write(blob)
            pos += len(blob)

    Image.fromarray(result.image, mode="RGB").save(png_path, format="PNG")
    return path


def read_mfat(source) -> GenerationResult:
    """Parse an MFAT file back into a GenerationResult (loads the sibling PNG)."""
    path = Path(source)
    data = path.read_bytes()
    if len(data) < 9 or data[:4] != MAGIC:
        raise BadMagic(f"{path}: not an MFAT file")
    if data[4] != VERSION:
        raise VersionUnsupported(f"{path}: version {data[4]}, reader supports {VERSION}")
    header_len = int.from_bytes(data[5:9], "little")
    if 9 + header_len > len(data):
        raise CorruptIndex(f"{path}: header length {header_len} exceeds file size")
    try:
        header = json.loads(data[9:9 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptIndex(f"{path}: header is not valid JSON: {exc}") from None

    try:
        plan = plan_from_dict(header["plan"])
        prompts = tuple(PromptSpec(**p) for p in header["prompts"])
        token_map = TokenMap(
            tokens=tuple(tuple(row) for row in header["token_map"]["tokens"]),
            subject_token_indices=tuple(
                tuple(row) for row in header["token_map"]["subject_token_indices"]),
        )
        sampler = header["sampler"]
        request = GenerationRequest(
            plan=plan, prompts=prompts, seed=sampler["seed"], steps=sampler["steps"],
            guidance_scale=sampler["guidance_scale"], scheduler_id=sampler["scheduler_id"],
        )
        table = header["tensors"]
        backend_id = header["backend_id"]
        image_name = header["image"]
    except (KeyError, TypeError) as exc:
        raise CorruptIndex(f"{path}: incomplete header: {exc}") from None

    stacks: dict[int, AttentionStack] = {
        r.index: AttentionStack(region_index=r.index) for r in plan.regions}
    for entry in table:
        region_index, step, layer_id = parse_tensor_name(entry["name"])
        if region_index not in stacks:
            raise CorruptIndex(f"{path}: tensor {entry['name']} references unknown region")
        offset, length = entry["byte_offset"], entry["byte_length"]
        if offset < 0 or length < 0 or offset + length > len(data):
            raise CorruptIndex(
                f"{path}: tensor {entry['name']} spans [{offset}, {offset + length}) "
                f"outside file of {len(data)} bytes")
        if offset % ALIGNMENT != 0:
            raise CorruptIndex(f"{path}: tensor {entry['name']} not {ALIGNMENT}-byte aligned")
        blob = data[offset:offset + length]
        crc = zlib.crc32(blob) & 0xFFFFFFFF
        if crc != entry["crc32"]:
            raise ChecksumMismatch(
                f"{path}: tensor {entry['name']} crc32 {crc:#010x} != "
                f"recorded {entry['crc32']:#010x}")
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CorruptIndex(f"{path}: tensor {entry['name']} has dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape)) * dtype.itemsize
        if expected != length:
            raise CorruptIndex(
                f"{path}: tensor {entry['name']} shape {shape} needs {expected} bytes, "
                f"table records {length}")
        tensor = np.frombuffer(blob, dtype=dtype).reshape(shape)
        stacks[region_index].entries[(step, layer_id)] = tensor

    image = np.asarray(Image.open(path.parent / image_name).convert("RGB"))
    return GenerationResult(
        image=image,
        stacks=[stacks[r.index] for r in plan.regions],
        token_map=token_map,
        backend_id=backend_id,
        request=request,
    )
