"""Binary voxel volumes: data model, PGV1 file I/O, subvolume sampling and the
central-slice mask.

Arrays are indexed ``data[x, y, z]``.  On disk the payload is written
x-fastest, which for a numpy array indexed ``[x, y, z]`` is Fortran order.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

FORMAT_TAG = "PGV1"


class Phase(IntEnum):
    VOID = 0
    SOLID = 1


class VolumeFormatError(ValueError):
    """Base class for malformed PGV1 files."""


class HeaderError(VolumeFormatError):
    pass


class PayloadLengthError(VolumeFormatError):
    pass


class IllegalPhaseError(VolumeFormatError):
    pass


def _as_phase_array(data, ndim: int) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}D array, got shape {arr.shape}")
    if any(n < 1 for n in arr.shape):
        raise ValueError(f"all extents must be >= 1, got {arr.shape}")
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    elif not np.all((arr == 0) | (arr == 1)):
        raise IllegalPhaseError("phase labels must be 0 (void) or 1 (solid)")
    arr = np.array(arr, dtype=np.uint8, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class VoxelVolume:
    """Immutable two-phase voxel grid.

    ``data`` holds 0 for VOID and 1 for SOLID.  ``voxel_size`` is carried
    along as metadata only; every metric in this package is in voxel units.
    """

    data: np.ndarray
    voxel_size: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "data", _as_phase_array(self.data, 3))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def __eq__(self, other):
        if not isinstance(other, VoxelVolume):
            return NotImplemented
        return (
            self.voxel_size == other.voxel_size
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None

    def phase_mask(self, phase: Phase) -> np.ndarray:
        return self.data == int(phase)

    @classmethod
    def filled(cls, dims, phase: Phase, voxel_size: float = 1.0) -> "VoxelVolume":
        return cls(np.full(dims, int(phase), dtype=np.uint8), voxel_size)


@dataclass(frozen=True, eq=False)
class Slice2D:
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_phase_array(self.data, 2))

    @property
    def dims(self) -> tuple[int, int]:
        return tuple(int(n) for n in self.data.shape)

    def __eq__(self, other):
        if not isinstance(other, Slice2D):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True)
class VolumeHeader:
    dims: tuple[int, int, int]
    voxel_size_um: float = 1.0
    phases: tuple[tuple[str, str], ...] = (("0", "void"), ("1", "solid"))
    format_version: str = FORMAT_TAG
    order: str = "x-fastest"

    def to_json(self) -> str:
        doc = {
            "format": self.format_version,
            "dims": list(self.dims),
            "voxel_size_um": self.voxel_size_um,
            "order": self.order,
            "phases": dict(self.phases),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "VolumeHeader":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise HeaderError(f"header is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise HeaderError("header must be a JSON object")
        if doc.get("format") != FORMAT_TAG:
            raise HeaderError(f"unsupported format {doc.get('format')!r}")
        if doc.get("order", "x-fastest") != "x-fastest":
            raise HeaderError(f"unsupported storage order {doc.get('order')!r}")
        dims = doc.get("dims")
        if (
            not isinstance(dims, list)
            or len(dims) != 3
            or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in dims)
        ):
            raise HeaderError(f"dims must be three positive integers, got {dims!r}")
        phases = doc.get("phases", {"0": "void", "1": "solid"})
        if phases != {"0": "void", "1": "solid"}:
            raise HeaderError(f"unsupported phase encoding {phases!r}")
        try:
            voxel_size = float(doc.get("voxel_size_um", 1.0))
        except (TypeError, ValueError) as exc:
            raise HeaderError("voxel_size_um must be a number") from exc
        return cls(dims=tuple(dims), voxel_size_um=voxel_size)


def _stem(path) -> Path:
    path = Path(path)
    if path.suffix in (".json", ".raw"):
        path = path.with_suffix("")
    return path


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def volume_io_save(vol: VoxelVolume, path) -> None:
    """Write ``vol`` as ``<stem>.json`` + ``<stem>.raw``.

    ``path`` may name the stem or either of the two files.
    """
    stem = _stem(path)
    header = VolumeHeader(dims=vol.dims, voxel_size_um=vol.voxel_size)
    atomic_write_bytes(stem.with_suffix(".raw"), vol.data.tobytes(order="F"))
    atomic_write_bytes(stem.with_suffix(".json"), header.to_json().encode())


def volume_io_load(path) -> VoxelVolume:
    stem = _stem(path)
    header_path, raw_path = stem.with_suffix(".json"), stem.with_suffix(".raw")
    for p in (header_path, raw_path):
        if not p.is_file():
            raise FileNotFoundError(f"missing PGV1 component: {p}")
    header = VolumeHeader.from_json(header_path.read_text())
    payload = raw_path.read_bytes()
    nx, ny, nz = header.dims
    expected = nx * ny * nz
    if len(payload) != expected:
        raise PayloadLengthError(
            f"{raw_path}: payload has {len(payload)} bytes, header dims need {expected}"
        )
    flat = np.frombuffer(payload, dtype=np.uint8)
    bad = flat > 1
    if bad.any():
        idx = int(np.argmax(bad))
        raise IllegalPhaseError(f"{raw_path}: byte {idx} has illegal phase value {flat[idx]}")
    data = flat.reshape(header.dims, order="F")
    return VoxelVolume(data, header.voxel_size_um)


def list_volumes(directory) -> list[Path]:
    """Sorted PGV1 stems found in ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    stems = []
    for header in sorted(directory.glob("*.json")):
        if header.with_suffix(".raw").is_file():
            stems.append(header.with_suffix(""))
    return stems


def extract_subvolume(vol: VoxelVolume, origin, size: int) -> VoxelVolume:
    origin = tuple(int(o) for o in origin)
    if len(origin) != 3 or size < 1:
        raise ValueError(f"bad subvolume request origin={origin} size={size}")
    for o, n in zip(origin, vol.dims):
        if o < 0 or o + size > n:
            raise IndexError(
                f"subvolume at {origin} with edge {size} exceeds volume dims {vol.dims}"
            )
    x, y, z = origin
    return VoxelVolume(vol.data[x : x + size, y : y + size, z : z + size], vol.voxel_size)


def random_origins(dims, size: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` origins drawn uniformly over admissible positions, shape (count, 3)."""
    if size > min(dims):
        raise ValueError(f"subvolume edge {size} exceeds volume dims {tuple(dims)}")
    if count < 1:
        raise ValueError("count must be >= 1")
    highs = np.array([n - size + 1 for n in dims])
    return rng.integers(0, highs, size=(count, 3))


def sample_random_subvolumes(
    vol: VoxelVolume, size: int, count: int, seed=None
) -> list[VoxelVolume]:
    """Draw ``count`` random cubes of edge ``size``.

    ``seed`` may be an int or an existing ``numpy.random.Generator``; in the
    latter case the generator is advanced.
    """
    rng = np.random.default_rng(seed)
    origins = random_origins(vol.dims, size, count, rng)
    return [extract_subvolume(vol, o, size) for o in origins]


def central_index(n: int) -> int:
    return n // 2


def central_slice(vol: VoxelVolume) -> Slice2D:
    """The mask M: the ``z = nz // 2`` plane."""
    return Slice2D(vol.data[:, :, central_index(vol.dims[2])])


def insert_central(vol: VoxelVolume, s: Slice2D) -> VoxelVolume:
    """Return a copy of ``vol`` with its central z-plane replaced by ``s``."""
    if s.dims != vol.dims[:2]:
        raise ValueError(f"slice dims {s.dims} do not match volume plane {vol.dims[:2]}")
    data = vol.data.copy()
    data[:, :, central_index(vol.dims[2])] = s.data
    return VoxelVolume(data, vol.voxel_size)


def binarize(raw, threshold: float = 0.0, voxel_size: float = 1.0) -> VoxelVolume:
    """SOLID where ``raw > threshold``.  Accepts an array or a Tensor."""
    values = np.asarray(getattr(raw, "data", raw))
    if values.ndim != 3:
        raise ValueError(f"binarize expects a 3D array, got shape {values.shape}")
    return VoxelVolume((values > threshold).astype(np.uint8), voxel_size)


def to_signed(data: np.ndarray) -> np.ndarray:
    """Phase labels to network encoding: SOLID -> +1, VOID -> -1."""
    return 2.0 * np.asarray(data, dtype=np.float64) - 1.0
