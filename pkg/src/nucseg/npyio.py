"""Bit-exact NPY v1.0 reader/writer and access to the on-disk dataset layout.

The dataset ships as two NPY files: ``images.npy`` with shape ``(N, H, W, 3)``
uint8 and ``labels.npy`` with shape ``(N, H, W, 2)`` integer, where label
plane 0 holds instance ids and plane 1 class ids.
"""

from __future__ import annotations

import ast
import struct
from dataclasses import dataclass

import numpy as np

from .types import ClassMap, InstanceMap, MultiChannelImage, N_CLASSES

MAGIC = b"\x93NUMPY"
HEADER_ALIGN = 64

# descr -> little-endian numpy dtype.  Only these are accepted.
SUPPORTED_DESCRS = {
    "|u1": np.dtype("u1"),
    "<u2": np.dtype("<u2"),
    "<i4": np.dtype("<i4"),
    "<u4": np.dtype("<u4"),
    "<f4": np.dtype("<f4"),
    "<f8": np.dtype("<f8"),
}
_DTYPE_TO_DESCR = {
    np.dtype(np.uint8): "|u1",
    np.dtype(np.uint16): "<u2",
    np.dtype(np.int32): "<i4",
    np.dtype(np.uint32): "<u4",
    np.dtype(np.float32): "<f4",
    np.dtype(np.float64): "<f8",
}

_LABEL_DTYPES = (np.dtype(np.uint16), np.dtype(np.int32), np.dtype(np.uint32))


@dataclass(frozen=True)
class NpyHeader:
    """Parsed NPY v1.0 header fields."""

    descr: str
    fortran_order: bool
    shape: tuple[int, ...]


def write_npy(array: np.ndarray) -> bytes:
    """Serialize an array as an NPY v1.0 byte stream.

    Emits C-order payload with a space-padded header dict so the total header
    size is a multiple of 64 bytes.  Deterministic: equal arrays produce
    byte-identical output.
    """
    arr = np.ascontiguousarray(array)
    descr = _DTYPE_TO_DESCR.get(arr.dtype.newbyteorder("="))
    if descr is None:
        raise ValueError(f"unsupported dtype: {array.dtype}")
    arr = arr.astype(SUPPORTED_DESCRS[descr], copy=False)
    dict_str = (
        f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {tuple(arr.shape)!r}, }}"
    )
    base = len(MAGIC) + 2 + 2  # magic + version + u16 length field
    header_len = len(dict_str) + 1  # newline terminator
    total = base + header_len
    pad = (-total) % HEADER_ALIGN
    header_len += pad
    if header_len > 0xFFFF:
        raise ValueError("header too large for NPY v1.0")
    out = bytearray()
    out += MAGIC
    out += bytes((1, 0))
    out += struct.pack("<H", header_len)
    out += dict_str.encode("latin-1")
    out += b" " * pad
    out += b"\n"
    out += arr.tobytes(order="C")
    return bytes(out)


def parse_header(data: bytes) -> tuple[NpyHeader, int]:
    """Parse an NPY v1.0 header; returns the header and the payload offset."""
    if len(data) < 10:
        raise ValueError("truncated NPY header")
    if data[:6] != MAGIC:
        raise ValueError("bad NPY magic")
    major, minor = data[6], data[7]
    if (major, minor) != (1, 0):
        raise ValueError(f"unsupported NPY version {major}.{minor}")
    (header_len,) = struct.unpack("<H", data[8:10])
    offset = 10 + header_len
    if len(data) < offset:
        raise ValueError("truncated NPY header")
    try:
        meta = ast.literal_eval(data[10:offset].decode("latin-1"))
    except (ValueError, SyntaxError) as exc:
        raise ValueError("malformed NPY header dict") from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise ValueError("malformed NPY header dict")
    descr, fortran, shape = meta["descr"], meta["fortran_order"], meta["shape"]
    if fortran is True:
        raise ValueError("Fortran order unsupported")
    if fortran is not False:
        raise ValueError("malformed NPY header dict")
    if not isinstance(descr, str) or descr not in SUPPORTED_DESCRS:
        raise ValueError(f"unsupported dtype descr: {descr!r}")
    if not (
        isinstance(shape, tuple)
        and all(isinstance(n, int) and n >= 0 for n in shape)
    ):
        raise ValueError("malformed NPY header dict")
    return NpyHeader(descr, False, shape), offset


def read_npy(data: bytes) -> np.ndarray:
    """Decode an NPY v1.0 byte stream into a C-order array."""
    header, offset = parse_header(bytes(data))
    dtype = SUPPORTED_DESCRS[header.descr]
    count = int(np.prod(header.shape, dtype=np.int64)) if header.shape else 1
    expected = count * dtype.itemsize
    payload = data[offset:]
    if len(payload) < expected:
        raise ValueError("truncated payload")
    if len(payload) > expected:
        raise ValueError("trailing bytes after payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(header.shape)
    return arr.copy()


def read_npy_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_npy(fh.read())


def write_npy_file(path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(write_npy(array))


@dataclass(frozen=True)
class DatasetHandle:
    """In-memory view of a loaded image/label dataset.

    Indexing yields ``(MultiChannelImage, InstanceMap, ClassMap)`` triples.
    The backing arrays are read-only, so handles can be shared across threads.
    """

    images: np.ndarray
    labels: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def label_shape(self) -> tuple[int, int, int]:
        return tuple(self.labels.shape[1:])

    def __len__(self) -> int:
        return self.n_samples

    def __getitem__(self, i: int) -> tuple[MultiChannelImage, InstanceMap, ClassMap]:
        if not 0 <= i < self.n_samples:
            raise IndexError(f"index out of bounds: {i}")
        return (
            MultiChannelImage(self.images[i]),
            InstanceMap(self.labels[i, :, :, 0]),
            ClassMap(self.labels[i, :, :, 1]),
        )


def load_dataset(images_path, labels_path) -> DatasetHandle:
    """Load paired ``images.npy`` / ``labels.npy`` files and validate them."""
    images = read_npy_file(images_path)
    labels = read_npy_file(labels_path)
    if images.ndim != 4 or images.shape[3] != 3 or images.dtype != np.uint8:
        raise ValueError(f"images must be (N, H, W, 3) u8, got {images.shape} {images.dtype}")
    if labels.ndim != 4 or labels.shape[3] != 2 or labels.dtype not in _LABEL_DTYPES:
        raise ValueError(
            f"labels must be (N, H, W, 2) of <u2, <i4 or <u4, got {labels.shape} {labels.dtype}"
        )
    if images.shape[0] != labels.shape[0]:
        raise ValueError("sample count mismatch")
    if images.shape[1:3] != labels.shape[1:3]:
        raise ValueError("image/label H,W mismatch")
    labels = labels.astype(np.int64)
    if labels[:, :, :, 0].min() < 0:
        raise ValueError("negative instance label")
    classes = labels[:, :, :, 1]
    if classes.min() < 0 or classes.max() > N_CLASSES:
        raise ValueError("class id out of range")
    images = images.copy()
    images.flags.writeable = False
    labels.flags.writeable = False
    return DatasetHandle(images, labels)
