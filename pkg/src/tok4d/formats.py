"""Binary and text file formats.

All binary formats are little-endian and fully loaded (no partial reads):

* ATOK token file: magic ``ATOK``, version u32=1, modality u8, discrete
  flag u8, bounds 4x u32, C u32, L u64, then L records of (4x u32
  coordinates, C x f32 features).  Discrete files store integer codebook
  ids f32-encoded with C=8.
* ATFT feature file: magic ``ATFT``, version u32=1, D u32, n u64,
  then n x D f32.
* AVID raw video: magic ``AVID``, version u32=1, T,H,W u32, then
  T*H*W*3 bytes of 8-bit RGB.
* ATCK checkpoint: magic ``ATCK``, version u32=1, config block of six u32
  (blocks, width, heads, latent dim, semantic dim, gaussians per token),
  then named sections of (name length u32, UTF-8 name, element count u64,
  f32 data).

Images are binary PPM (P6, maxval 255).  Pixel values convert to floats by
an exact divide by 255.  Splat files and camera manifests are whitespace
text; training configs are ``key=value`` lines.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    ConfigError,
    InvariantViolation,
    TruncatedStream,
    UnsupportedVersion,
)
from .tokens import Modality, TokenSet

ATOK_MAGIC = b"ATOK"
ATFT_MAGIC = b"ATFT"
AVID_MAGIC = b"AVID"
ATCK_MAGIC = b"ATCK"
FORMAT_VERSION = 1


def _read_exact(stream, n: int) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise TruncatedStream(f"wanted {n} bytes, got {len(data)}")
    return data


def _expect_magic(stream, magic: bytes) -> None:
    got = stream.read(len(magic))
    if got != magic:
        raise BadMagic(f"expected {magic!r}, got {got!r}")


def _read_version(stream) -> None:
    (version,) = struct.unpack("<I", _read_exact(stream, 4))
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"version {version}")


# --- ATOK ----------------------------------------------------------------

def write_tokens(ts: TokenSet, sink) -> None:
    """Serialize a token set; ``read_tokens(write_tokens(ts)) == ts`` bit-exactly."""
    close = False
    if isinstance(sink, (str, Path)):
        sink, close = open(sink, "wb"), True
    try:
        sink.write(ATOK_MAGIC)
        sink.write(struct.pack("<IBB", FORMAT_VERSION, int(ts.modality),
                               1 if ts.discrete else 0))
        sink.write(struct.pack("<4I", *(int(b) for b in ts.bounds)))
        sink.write(struct.pack("<IQ", ts.channels, len(ts)))
        coords = np.ascontiguousarray(ts.coords.astype("<u4")).view(np.uint8)
        feats = np.ascontiguousarray(ts.features.astype("<f4")).view(np.uint8)
        sink.write(np.hstack([coords.reshape(len(ts), 16), feats]).tobytes())
    finally:
        if close:
            sink.close()


def read_tokens(source) -> TokenSet:
    close = False
    if isinstance(source, (str, Path)):
        source, close = open(source, "rb"), True
    elif isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    try:
        _expect_magic(source, ATOK_MAGIC)
        _read_version(source)
        modality, discrete = struct.unpack("<BB", _read_exact(source, 2))
        if modality not in (0, 1, 2):
            raise InvariantViolation(f"unknown modality {modality}")
        bounds = struct.unpack("<4I", _read_exact(source, 16))
        channels, count = struct.unpack("<IQ", _read_exact(source, 12))
        record = 16 + 4 * channels
        raw = _read_exact(source, record * count)
        rows = np.frombuffer(raw, dtype=np.uint8).reshape(count, record)
        coords = rows[:, :16].copy().view("<u4").astype(np.int64)
        feats = rows[:, 16:].copy().view("<f4").astype(np.float32)
        return TokenSet(Modality(modality), tuple(int(b) for b in bounds),
                        coords, feats, discrete=bool(discrete))
    finally:
        if close:
            source.close()


# --- ATFT ----------------------------------------------------------------

def write_features(features: np.ndarray, sink) -> None:
    features = np.asarray(features)
    if features.ndim != 2:
        raise InvariantViolation(f"features must be (n, D), got {features.shape}")
    close = False
    if isinstance(sink, (str, Path)):
        sink, close = open(sink, "wb"), True
    try:
        sink.write(ATFT_MAGIC)
        sink.write(struct.pack("<IIQ", FORMAT_VERSION,
                               features.shape[1], features.shape[0]))
        sink.write(features.astype("<f4").tobytes())
    finally:
        if close:
            sink.close()


def read_features(source) -> np.ndarray:
    close = False
    if isinstance(source, (str, Path)):
        source, close = open(source, "rb"), True
    elif isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    try:
        _expect_magic(source, ATFT_MAGIC)
        _read_version(source)
        dim, count = struct.unpack("<IQ", _read_exact(source, 12))
        raw = _read_exact(source, 4 * dim * count)
        return np.frombuffer(raw, dtype="<f4").reshape(count, dim).astype(np.float32)
    finally:
        if close:
            source.close()


# --- AVID ----------------------------------------------------------------

def write_video(video: np.ndarray, sink) -> None:
    """Write a (T, H, W, 3) float video in [0, 1] as 8-bit raw frames."""
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[3] != 3:
        raise InvariantViolation(f"video must be (T, H, W, 3), got {video.shape}")
    data = np.round(np.clip(video, 0.0, 1.0) * 255.0).astype(np.uint8)
    close = False
    if isinstance(sink, (str, Path)):
        sink, close = open(sink, "wb"), True
    try:
        sink.write(AVID_MAGIC)
        sink.write(struct.pack("<IIII", FORMAT_VERSION, *video.shape[:3]))
        sink.write(data.tobytes())
    finally:
        if close:
            sink.close()


def read_video(source) -> np.ndarray:
    close = False
    if isinstance(source, (str, Path)):
        source, close = open(source, "rb"), True
    elif isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    try:
        _expect_magic(source, AVID_MAGIC)
        _read_version(source)
        t, h, w = struct.unpack("<III", _read_exact(source, 12))
        raw = _read_exact(source, t * h * w * 3)
        frames = np.frombuffer(raw, dtype=np.uint8).reshape(t, h, w, 3)
        return frames.astype(np.float64) / 255.0
    finally:
        if close:
            source.close()


# --- ATCK ----------------------------------------------------------------

def write_checkpoint(config: tuple[int, int, int, int, int, int],
                     params: dict[str, np.ndarray], sink) -> None:
    """Write a named-section checkpoint; section order is sorted by name."""
    close = False
    if isinstance(sink, (str, Path)):
        sink, close = open(sink, "wb"), True
    try:
        sink.write(ATCK_MAGIC)
        sink.write(struct.pack("<I", FORMAT_VERSION))
        sink.write(struct.pack("<6I", *(int(v) for v in config)))
        for name in sorted(params):
            encoded = name.encode("utf-8")
            data = np.ascontiguousarray(params[name], dtype="<f4")
            sink.write(struct.pack("<I", len(encoded)))
            sink.write(encoded)
            sink.write(struct.pack("<Q", data.size))
            sink.write(data.tobytes())
    finally:
        if close:
            sink.close()


def read_checkpoint(source) -> tuple[tuple[int, ...], dict[str, np.ndarray]]:
    """Returns (config tuple, flat f32 arrays by name); shapes are the
    loader's responsibility (the config block determines them)."""
    close = False
    if isinstance(source, (str, Path)):
        source, close = open(source, "rb"), True
    elif isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    try:
        _expect_magic(source, ATCK_MAGIC)
        _read_version(source)
        config = struct.unpack("<6I", _read_exact(source, 24))
        params: dict[str, np.ndarray] = {}
        while True:
            head = source.read(4)
            if not head:
                break
            if len(head) != 4:
                raise TruncatedStream("partial section header")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(source, name_len).decode("utf-8")
            (count,) = struct.unpack("<Q", _read_exact(source, 8))
            raw = _read_exact(source, 4 * count)
            params[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        return config, params
    finally:
        if close:
            source.close()


# --- PPM -----------------------------------------------------------------

def write_ppm(image: np.ndarray, sink) -> None:
    """Write an (H, W, 3) float image in [0, 1] as binary PPM (P6)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvariantViolation(f"image must be (H, W, 3), got {image.shape}")
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P6\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    close = False
    if isinstance(sink, (str, Path)):
        sink, close = open(sink, "wb"), True
    try:
        sink.write(header)
        sink.write(data.tobytes())
    finally:
        if close:
            sink.close()


def read_ppm(source) -> np.ndarray:
    close = False
    if isinstance(source, (str, Path)):
        source, close = open(source, "rb"), True
    elif isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    try:
        if _read_exact(source, 2) != b"P6":
            raise BadMagic("not a binary PPM (P6)")
        fields: list[int] = []
        while len(fields) < 3:
            token = b""
            ch = source.read(1)
            while ch.isspace():
                ch = source.read(1)
            if ch == b"#":  # comment line
                while ch not in (b"\n", b""):
                    ch = source.read(1)
                continue
            while ch and not ch.isspace():
                token += ch
                ch = source.read(1)
            if not token:
                raise TruncatedStream("PPM header ended early")
            fields.append(int(token))
        width, height, maxval = fields
        if maxval != 255:
            raise UnsupportedVersion(f"PPM maxval {maxval}, expected 255")
        raw = _read_exact(source, width * height * 3)
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
        return pixels.astype(np.float64) / 255.0
    finally:
        if close:
            source.close()


# --- splat text ------------------------------------------------------------

def write_splats(positions, colors, scales, opacities, rotations, sink) -> None:
    """One line per Gaussian: x y z r g b sx sy sz alpha qw qx qy qz."""
    rows = np.column_stack([positions, colors, scales,
                            np.asarray(opacities).reshape(-1, 1), rotations])
    lines = "\n".join(" ".join(repr(float(v)) for v in row) for row in rows)
    _write_text(sink, lines + "\n")


def read_splats(source):
    text = _read_text(source)
    rows = [line.split() for line in text.splitlines() if line.strip()]
    arr = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 14:
        raise InvariantViolation("splat lines must have 14 fields")
    return arr[:, 0:3], arr[:, 3:6], arr[:, 6:9], arr[:, 9], arr[:, 10:14]


# --- camera / manifest text -------------------------------------------------

def parse_camera_fields(fields: list[str]):
    """15 decimal fields: 9 rotation (row-major), 3 translation, f, cx, cy."""
    if len(fields) != 15:
        raise ConfigError(f"camera needs 15 numbers, got {len(fields)}")
    vals = [float(v) for v in fields]
    rotation = np.array(vals[0:9], dtype=np.float64).reshape(3, 3)
    translation = np.array(vals[9:12], dtype=np.float64)
    return rotation, translation, vals[12], vals[13], vals[14]


def read_camera_file(source):
    return parse_camera_fields(_read_text(source).split())


def write_camera_file(rotation, translation, focal, cx, cy, sink) -> None:
    vals = list(np.asarray(rotation).reshape(-1)) + list(np.asarray(translation))
    vals += [focal, cx, cy]
    _write_text(sink, " ".join(repr(float(v)) for v in vals) + "\n")


def read_view_manifest(source) -> list[tuple[str, np.ndarray, np.ndarray, float, float, float]]:
    """Each line: ppm-path then 15 camera numbers."""
    views = []
    for line in _read_text(source).splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 16:
            raise ConfigError(f"manifest line needs 16 fields, got {len(fields)}")
        views.append((fields[0],) + parse_camera_fields(fields[1:]))
    if not views:
        raise ConfigError("manifest lists no views")
    return views


def read_voxel_list(source) -> np.ndarray:
    rows = [line.split() for line in _read_text(source).splitlines() if line.strip()]
    arr = np.array([[int(v) for v in row] for row in rows], dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ConfigError("voxel list lines must be 'x y z'")
    return arr


# --- key=value config --------------------------------------------------------

def read_config(source) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(_read_text(source).splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _read_text(source) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_text()
    if isinstance(source, (bytes, bytearray)):
        return source.decode("utf-8")
    return source.read()


def _write_text(sink, text: str) -> None:
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text)
    else:
        sink.write(text)
