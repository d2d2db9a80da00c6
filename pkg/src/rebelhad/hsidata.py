"""Hyperspectral cubes, masks, their file formats and a synthetic scene generator.

Cubes are held band-sequential as float64 arrays of shape ``(bands, height,
width)``. On disk they use the HCF1 layout::

    bytes 0-3    magic b"HCF1"
    bytes 4-15   height, width, bands as little-endian uint32
    bytes 16-    height*width*bands little-endian float32, band-sequential,
                 row-major within each band plane

Score maps are HCF1 files with one band. Ground-truth masks are binary PGM
(P5, maxval 255, 0 = background, 255 = anomaly).
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError, SpecError
from .rng import SplitMix64

MAGIC = b"HCF1"
HEADER = struct.Struct("<4s3I")
# refuse headers that would describe more than 4 GiB of payload
MAX_PAYLOAD_BYTES = 1 << 32


@dataclass(frozen=True, eq=False)
class HsiCube:
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"cube data must be (bands, height, width) with all dims >= 1, got {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def bands(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def pixels(self):
        """Pixel spectra as a ``(height*width, bands)`` matrix."""
        return self.data.reshape(self.bands, -1).T

    def __eq__(self, other):
        if not isinstance(other, HsiCube):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class GroundTruthMask:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=bool, copy=True)
        if labels.ndim != 2:
            raise ValueError("mask labels must be 2-D")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GroundTruthMask):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    bands: int = 20
    endmembers: int = 4
    anomaly_count: int = 0
    anomaly_size: int = 2
    anomaly_contrast: float = 0.0
    noise_sigma: float = 0.01
    smoothness: int = 4
    seed: int = 0

    def validate(self):
        if min(self.height, self.width, self.bands) < 1:
            raise SpecError("height, width and bands must be >= 1")
        if self.endmembers < 2:
            raise SpecError("need at least 2 endmembers")
        if self.anomaly_count < 0 or self.anomaly_size < 1:
            raise SpecError("anomaly_count must be >= 0 and anomaly_size >= 1")
        if self.anomaly_contrast < 0 or self.noise_sigma < 0 or self.smoothness < 0:
            raise SpecError("contrast, noise and smoothness must be nonnegative")
        if self.anomaly_count and self.anomaly_size > min(self.height, self.width) - 2:
            raise SpecError(
                f"anomaly_size {self.anomaly_size} does not fit a {self.height}x{self.width} scene with a 1-pixel border"
            )


def atomic_write(path, payload: bytes):
    """Write ``payload`` to ``path`` via a temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_cube(cube: HsiCube) -> bytes:
    header = HEADER.pack(MAGIC, cube.height, cube.width, cube.bands)
    return header + cube.data.astype("<f4").tobytes()


def decode_cube(raw: bytes, source="<bytes>") -> HsiCube:
    if len(raw) < HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(raw)} bytes)")
    magic, h, w, b = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    for name, val in (("height", h), ("width", w), ("bands", b)):
        if val < 1:
            raise FormatError(f"{source}: {name} must be >= 1, got {val}")
    count = h * w * b
    if count * 4 > MAX_PAYLOAD_BYTES:
        raise FormatError(f"{source}: dimension overflow (height*width*bands = {count})")
    payload = len(raw) - HEADER.size
    if payload < count * 4:
        raise FormatError(f"{source}: truncated payload ({payload} bytes, need {count * 4})")
    if payload > count * 4:
        raise FormatError(f"{source}: {payload - count * 4} trailing bytes after payload")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=HEADER.size)
    return HsiCube(data.astype(np.float64).reshape(b, h, w))


def read_cube(path) -> HsiCube:
    return decode_cube(Path(path).read_bytes(), source=str(path))


def write_cube(cube: HsiCube, path):
    """Write ``cube`` as HCF1. Values are stored as float32."""
    atomic_write(path, encode_cube(cube))


def read_scores(path) -> np.ndarray:
    cube = read_cube(path)
    if cube.bands != 1:
        raise FormatError(f"{path}: score map must have 1 band, got {cube.bands}")
    return cube.data[0].copy()


def write_scores(scores, path):
    write_cube(HsiCube(np.asarray(scores, dtype=np.float64)[None]), path)


def encode_pgm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def decode_pgm(raw: bytes, source="<bytes>") -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{source}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise FormatError(f"{source}: bad magic {tokens[0]!r}, expected P5")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{source}: non-integer PGM header field") from exc
    if maxval != 255:
        raise FormatError(f"{source}: maxval must be 255, got {maxval}")
    if w < 1 or h < 1:
        raise FormatError(f"{source}: width and height must be >= 1")
    if len(raw) - pos < w * h:
        raise FormatError(f"{source}: truncated raster")
    return np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def read_mask(path) -> GroundTruthMask:
    return GroundTruthMask(decode_pgm(Path(path).read_bytes(), source=str(path)) > 0)


def write_mask(mask: GroundTruthMask, path):
    atomic_write(path, encode_pgm(mask.labels.astype(np.uint8) * 255))


def write_pgm_preview(values, path):
    """Min-max scale a 2-D array to 8 bits and write it as PGM."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    atomic_write(path, encode_pgm(np.round(scaled * 255).astype(np.uint8)))


def select_bands(cube: HsiCube, first_k: int) -> HsiCube:
    if not 1 <= first_k <= cube.bands:
        raise ValueError(f"first_k must be in [1, {cube.bands}], got {first_k}")
    return HsiCube(cube.data[:first_k])


def normalize(cube: HsiCube) -> HsiCube:
    """Global min-max scaling to [0, 1]; a constant cube becomes all zeros."""
    return HsiCube(_minmax(cube.data))


def _minmax(a):
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def synth_scene(spec: SceneSpec) -> tuple[HsiCube, GroundTruthMask]:
    """Generate a normalized background scene with implanted square anomalies.

    The background mixes ``endmembers`` smooth random spectra with box-blurred
    random abundance fields. Each anomaly replaces a square of pixels by their
    own background spectra shifted by ``anomaly_contrast`` along a random unit
    spectral direction, so a contrast of 0 leaves the scene untouched.
    """
    spec.validate()
    rng = SplitMix64(spec.seed)
    h, w, b, e = spec.height, spec.width, spec.bands, spec.endmembers

    spectra = np.empty((e, b))
    for k in range(e):
        raw = rng.uniform(b)[None, :]
        spectra[k] = 0.1 + 0.8 * kernels.box_blur(raw, min(2, b // 2))[0]

    fields = np.empty((e, h, w))
    for k in range(e):
        blurred = kernels.box_blur(rng.uniform(h * w).reshape(h, w), spec.smoothness)
        fields[k] = _minmax(blurred) ** 2 + 1e-3
    abundances = fields / fields.sum(axis=0)
    cube = np.einsum("ehw,eb->bhw", abundances, spectra)

    labels = np.zeros((h, w), dtype=bool)
    s = spec.anomaly_size
    placed = []
    for _ in range(spec.anomaly_count):
        for _attempt in range(1000):
            r = 1 + rng.integers(h - s - 1)
            c = 1 + rng.integers(w - s - 1)
            if all(r + s <= pr or pr + s <= r or c + s <= pc or pc + s <= c for pr, pc in placed):
                break
        else:
            raise SpecError(f"could not place anomaly {len(placed) + 1} without overlap after 1000 tries")
        placed.append((r, c))
        direction = rng.normal(b)
        direction /= np.linalg.norm(direction)
        cube[:, r:r + s, c:c + s] += spec.anomaly_contrast * direction[:, None, None]
        labels[r:r + s, c:c + s] = True

    if spec.noise_sigma > 0:
        cube = cube + spec.noise_sigma * rng.normal(b * h * w).reshape(b, h, w)
    # quantize to the float32 grid so a written scene reads back bit-identically
    data = _minmax(cube).astype(np.float32).astype(np.float64)
    return HsiCube(data), GroundTruthMask(labels)


def list_cubes(directory):
    """Sorted HCF1 files (``*.hcf``) in ``directory``."""
    return sorted(p for p in Path(directory).glob("*.hcf") if p.is_file())


def load_corpus(directory, first_k=None):
    """Read every cube in ``directory`` (optionally keeping the first bands)."""
    cubes = []
    for path in list_cubes(directory):
        cube = read_cube(path)
        if first_k is not None:
            cube = select_bands(cube, first_k)
        cubes.append(cube)
    return cubes
