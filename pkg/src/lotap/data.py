"""Tensor series container, synthetic SYN generator, file formats and splits.

TSR3 binary layout (all integers and floats little-endian)::

    offset  size      field
    0       4         magic  b"TSR3"
    4       2         version (u16, currently 1)
    6       4 x 8     n1, n2, n3, T (u64)
    38      8*N       T*n1*n2*n3 f64 values, ordered (t, k, i, j): for each
                      time point the n3 frontal slices follow one another and
                      each n1 x n2 slice is stored row-major
    ...     optional  label block: b"LBLS", count (u64), then per label
                      a u32 byte length and UTF-8 bytes
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._fileio import atomic_write
from .errors import (
    DimensionError,
    FormatError,
    MalformedHeaderError,
    TruncatedFileError,
    ValidationError,
    VersionMismatchError,
)
from .tensor import from_fourier_slices, mirror_conjugate, self_conjugate_indices


@dataclass(frozen=True, eq=False)
class TensorSeries:
    """``T`` real ``n1 x n2 x n3`` slices stored as one ``(T, n1, n2, n3)`` array."""

    data: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if np.iscomplexobj(data):
            raise ValidationError("tensor series must be real")
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 4 or min(data.shape) < 1:
            raise DimensionError(f"series must be shaped (T, n1, n2, n3) with T >= 1, got {data.shape}")
        object.__setattr__(self, "data", data)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != data.shape[0]:
                raise ValidationError(f"{len(labels)} labels for {data.shape[0]} time points")
            object.__setattr__(self, "labels", labels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    @property
    def T(self) -> int:
        return self.data.shape[0]

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, key):
        if isinstance(key, slice):
            labels = self.labels[key] if self.labels is not None else None
            return TensorSeries(self.data[key], labels)
        return self.data[key]

    def __iter__(self):
        return iter(self.data)


def split(series: TensorSeries, train) -> tuple[TensorSeries, TensorSeries]:
    """Contiguous train/test split by count (int) or fraction (float in (0, 1))."""
    T = len(series)
    if isinstance(train, float):
        if not 0 < train < 1:
            raise ValidationError(f"train fraction must lie in (0, 1), got {train}")
        count = int(round(train * T))
    else:
        count = int(train)
    if not 1 <= count < T:
        raise ValidationError(f"train count must lie in [1, {T - 1}], got {count}")
    return series[:count], series[count:]


# -- synthetic data ---------------------------------------------------------

def _poly_coeffs(roots) -> tuple[float, ...]:
    return tuple(float(c) for c in -np.poly(roots).real[1:])


# roots 0.5 and exp(+-i*pi/8): a decaying transient plus an undamped
# oscillation with period 16
SYN_AR_COEFFS = _poly_coeffs([0.5, np.exp(1j * np.pi / 8), np.exp(-1j * np.pi / 8)])

NOISE_MODES = ("normalized", "entrywise")


@dataclass(frozen=True)
class SynConfig:
    """SYN recipe parameters.

    ``noise="normalized"`` scales each noise tensor to unit Frobenius norm,
    so ``rho`` is the noise-to-signal ratio; ``"entrywise"`` keeps i.i.d.
    N(0, 1) entries, a ratio of ``rho * sqrt(n1 n2 n3)``. ``drift`` rotates
    both factor subspaces away from their initial span by ``drift * t``
    radians at time ``t`` (0 keeps them fixed).
    """

    n1: int = 100
    n2: int = 100
    n3: int = 10
    r: int = 4
    T: int = 1000
    ar_coeffs: tuple[float, ...] = SYN_AR_COEFFS
    rho: float = 0.01
    seed: int = 0
    burn_in: int = 200
    innovation_std: float = 0.0
    noise: str = "normalized"
    drift: float = 0.0

    def validate(self) -> None:
        if min(self.n1, self.n2, self.n3, self.r, self.T) < 1:
            raise ValidationError("n1, n2, n3, r and T must all be >= 1")
        if self.r > min(self.n1, self.n2):
            raise ValidationError(f"r={self.r} exceeds min(n1, n2)={min(self.n1, self.n2)}")
        if self.drift and 2 * self.r > min(self.n1, self.n2):
            raise ValidationError("drift needs 2*r <= min(n1, n2) for the complementary subspace")
        if self.rho < 0 or self.innovation_std < 0 or self.burn_in < 0:
            raise ValidationError("rho, innovation_std and burn_in must be non-negative")
        if len(self.ar_coeffs) < 1:
            raise ValidationError("ar_coeffs must not be empty")
        if self.noise not in NOISE_MODES:
            raise ValidationError(f"noise must be one of {NOISE_MODES}")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Factors (Fourier stacks ``(n3, n, r)``), diagonal core tubes
    ``(T, r, n3)`` and generator coefficients behind a SYN series."""

    u_hat: np.ndarray
    v_hat: np.ndarray
    cores: np.ndarray
    ar_coeffs: tuple[float, ...]
    drift: float = 0.0
    u_perp_hat: np.ndarray | None = None
    v_perp_hat: np.ndarray | None = None

    def factors_hat(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        if not self.drift:
            return self.u_hat, self.v_hat
        c, s = np.cos(self.drift * t), np.sin(self.drift * t)
        return c * self.u_hat + s * self.u_perp_hat, c * self.v_hat + s * self.v_perp_hat

    def factors(self, t: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Real-domain column-orthogonal ``u`` (n1 x r x n3) and ``v``."""
        uh, vh = self.factors_hat(t)
        return from_fourier_slices(uh, real=True), from_fourier_slices(vh, real=True)

    def core(self, t: int) -> np.ndarray:
        """f-diagonal ``r x r x n3`` core at time ``t``."""
        r, n3 = self.cores.shape[1:]
        out = np.zeros((r, r, n3))
        out[np.arange(r), np.arange(r)] = self.cores[t]
        return out

    def signal(self, t: int) -> np.ndarray:
        """Noiseless slice ``u * s_t * v^H``."""
        uh, vh = self.factors_hat(t)
        sh = np.fft.fft(self.cores[t], axis=1).T
        xh = (uh * sh[:, None, :]) @ np.conj(vh).transpose(0, 2, 1)
        return from_fourier_slices(xh, real=True)


def random_orthonormal_fourier(rng: np.random.Generator, n: int, m: int, n3: int) -> np.ndarray:
    """Conjugate-symmetric ``(n3, n, m)`` stack whose slices have orthonormal
    columns, from Gaussian draws orthonormalized by QR.

    Self-conjugate slices use real draws, the others complex ones, so the
    inverse transform is a real column-orthogonal tensor.
    """
    out = np.empty((n3, n, m), dtype=np.complex128)
    conj_self = self_conjugate_indices(n3)
    for k in range(n3 // 2 + 1):
        a = rng.standard_normal((n, m))
        if k not in conj_self:
            a = a + 1j * rng.standard_normal((n, m))
        out[k] = np.linalg.qr(a)[0]
    return mirror_conjugate(out)


def _ar_cores(rng: np.random.Generator, config: SynConfig) -> np.ndarray:
    a = np.asarray(config.ar_coeffs, dtype=np.float64)
    p = a.size
    total = config.burn_in + config.T
    tubes = np.zeros((max(total, p), config.r, config.n3))
    tubes[:p] = rng.standard_normal((p, config.r, config.n3))
    for t in range(p, total):
        nxt = sum(a[i] * tubes[t - 1 - i] for i in range(p))
        if config.innovation_std:
            nxt = nxt + config.innovation_std * rng.standard_normal((config.r, config.n3))
        tubes[t] = nxt
    return tubes[total - config.T:total]


def generate_syn(config: SynConfig = SynConfig()) -> tuple[TensorSeries, GroundTruth]:
    """Generate ``x_t = u * s_t * v^H + rho ||s_t||_F e_t``.

    Each of the ``r * n3`` diagonal core tubes follows the AR recurrence
    ``config.ar_coeffs`` from standard-normal initial values, recorded after
    ``burn_in`` steps. Independent random streams are spawned from ``seed``
    in the order: cores, u, v, noise.
    """
    config.validate()
    core_rng, u_rng, v_rng, noise_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4)
    )
    cores = _ar_cores(core_rng, config)
    width = 2 * config.r if config.drift else config.r
    u_all = random_orthonormal_fourier(u_rng, config.n1, width, config.n3)
    v_all = random_orthonormal_fourier(v_rng, config.n2, width, config.n3)
    r = config.r
    truth = GroundTruth(
        u_hat=np.ascontiguousarray(u_all[:, :, :r]),
        v_hat=np.ascontiguousarray(v_all[:, :, :r]),
        cores=cores,
        ar_coeffs=tuple(float(c) for c in config.ar_coeffs),
        drift=float(config.drift),
        u_perp_hat=np.ascontiguousarray(u_all[:, :, r:]) if config.drift else None,
        v_perp_hat=np.ascontiguousarray(v_all[:, :, r:]) if config.drift else None,
    )

    data = np.empty((config.T, config.n1, config.n2, config.n3))
    for t in range(config.T):
        signal = truth.signal(t)
        noise = noise_rng.standard_normal(signal.shape)
        if config.noise == "normalized":
            noise /= np.linalg.norm(noise.ravel())
        data[t] = signal + config.rho * np.linalg.norm(cores[t].ravel()) * noise
    return TensorSeries(data), truth


def _complex_to_json(a: np.ndarray):
    return {"shape": list(a.shape), "re": a.real.ravel().tolist(), "im": a.imag.ravel().tolist()}


def _complex_from_json(obj) -> np.ndarray:
    re = np.asarray(obj["re"], dtype=np.float64)
    im = np.asarray(obj["im"], dtype=np.float64)
    return (re + 1j * im).reshape(obj["shape"])


def save_ground_truth(truth: GroundTruth, path) -> None:
    doc = {
        "format": "lotap-syn-truth",
        "version": 1,
        "ar_coeffs": list(truth.ar_coeffs),
        "drift": truth.drift,
        "u_hat": _complex_to_json(truth.u_hat),
        "v_hat": _complex_to_json(truth.v_hat),
        "cores": {"shape": list(truth.cores.shape), "values": truth.cores.ravel().tolist()},
    }
    if truth.drift:
        doc["u_perp_hat"] = _complex_to_json(truth.u_perp_hat)
        doc["v_perp_hat"] = _complex_to_json(truth.v_perp_hat)
    with atomic_write(path, "w") as fh:
        json.dump(doc, fh)


def load_ground_truth(path) -> GroundTruth:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "lotap-syn-truth":
        raise MalformedHeaderError(f"{path} is not a SYN ground-truth file")
    cores = np.asarray(doc["cores"]["values"], dtype=np.float64).reshape(doc["cores"]["shape"])
    return GroundTruth(
        u_hat=_complex_from_json(doc["u_hat"]),
        v_hat=_complex_from_json(doc["v_hat"]),
        cores=cores,
        ar_coeffs=tuple(doc["ar_coeffs"]),
        drift=doc["drift"],
        u_perp_hat=_complex_from_json(doc["u_perp_hat"]) if "u_perp_hat" in doc else None,
        v_perp_hat=_complex_from_json(doc["v_perp_hat"]) if "v_perp_hat" in doc else None,
    )


# -- TSR3 binary format -----------------------------------------------------

TSR_MAGIC = b"TSR3"
TSR_VERSION = 1
_TSR_HEADER = struct.Struct("<4sH4Q")
_LABEL_MAGIC = b"LBLS"


def encode_series(series: TensorSeries) -> bytes:
    T, n1, n2, n3 = series.data.shape
    parts = [
        _TSR_HEADER.pack(TSR_MAGIC, TSR_VERSION, n1, n2, n3, T),
        np.ascontiguousarray(series.data.transpose(0, 3, 1, 2), dtype="<f8").tobytes(),
    ]
    if series.labels is not None:
        parts.append(_LABEL_MAGIC + struct.pack("<Q", len(series.labels)))
        for label in series.labels:
            raw = label.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(parts)


def decode_series(buf: bytes) -> TensorSeries:
    if len(buf) < 4:
        raise TruncatedFileError("file ends inside the magic bytes")
    if buf[:4] != TSR_MAGIC:
        raise MalformedHeaderError(f"bad magic {buf[:4]!r}, expected {TSR_MAGIC!r}")
    if len(buf) < 6:
        raise TruncatedFileError("file ends inside the header")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != TSR_VERSION:
        raise VersionMismatchError(f"TSR3 version {version} not supported (expected {TSR_VERSION})")
    if len(buf) < _TSR_HEADER.size:
        raise TruncatedFileError("file ends inside the header")
    _, _, n1, n2, n3, T = _TSR_HEADER.unpack_from(buf, 0)
    if min(n1, n2, n3, T) < 1:
        raise MalformedHeaderError(f"non-positive dimension in header: {(n1, n2, n3, T)}")
    count = n1 * n2 * n3 * T
    end = _TSR_HEADER.size + 8 * count
    if len(buf) < end:
        raise TruncatedFileError(f"payload has {len(buf) - _TSR_HEADER.size} bytes, expected {8 * count}")
    values = np.frombuffer(buf, dtype="<f8", count=count, offset=_TSR_HEADER.size)
    data = values.reshape(T, n3, n1, n2).transpose(0, 2, 3, 1).astype(np.float64)

    labels = None
    if len(buf) > end:
        if buf[end:end + 4] != _LABEL_MAGIC:
            raise MalformedHeaderError("unexpected bytes after the payload")
        if len(buf) < end + 12:
            raise TruncatedFileError("label block header is truncated")
        (n_labels,) = struct.unpack_from("<Q", buf, end + 4)
        pos = end + 12
        labels = []
        for _ in range(n_labels):
            if len(buf) < pos + 4:
                raise TruncatedFileError("label block is truncated")
            (size,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if len(buf) < pos + size:
                raise TruncatedFileError("label block is truncated")
            labels.append(buf[pos:pos + size].decode("utf-8"))
            pos += size
        if pos != len(buf):
            raise MalformedHeaderError("trailing bytes after the label block")
    try:
        return TensorSeries(data, tuple(labels) if labels is not None else None)
    except ValidationError as exc:
        raise FormatError(str(exc)) from exc


def save_series(series: TensorSeries, path) -> None:
    with atomic_write(path, "wb") as fh:
        fh.write(encode_series(series))


def load_series(path) -> TensorSeries:
    return decode_series(Path(path).read_bytes())


# -- CSV interchange --------------------------------------------------------
#
# line 1:  dims,<n1>,<n2>,<n3>
# then one row per time point: <label>,<v_0>,...,<v_{n1 n2 n3 - 1}>
# values flattened in C order over (i, j, k); the label may be empty.

def save_series_csv(series: TensorSeries, path) -> None:
    n1, n2, n3 = series.dims
    with atomic_write(path, "w", newline="") as fh:
        fh.write(f"dims,{n1},{n2},{n3}\n")
        for t in range(len(series)):
            label = series.labels[t] if series.labels is not None else ""
            fh.write(label + "," + ",".join(repr(float(v)) for v in series.data[t].ravel()) + "\n")


def load_series_csv(path) -> TensorSeries:
    with open(path, newline="") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh if ln.strip()]
    if not lines:
        raise TruncatedFileError(f"{path} is empty")
    head = lines[0].split(",")
    if len(head) != 4 or head[0] != "dims":
        raise MalformedHeaderError("first CSV line must be 'dims,n1,n2,n3'")
    try:
        n1, n2, n3 = (int(v) for v in head[1:])
    except ValueError as exc:
        raise MalformedHeaderError(f"bad dims line: {lines[0]!r}") from exc
    size = n1 * n2 * n3
    labels, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != size + 1:
            raise FormatError(f"line {lineno}: expected {size + 1} fields, got {len(cells)}")
        labels.append(cells[0])
        rows.append([float(v) for v in cells[1:]])
    if not rows:
        raise TruncatedFileError(f"{path} has no data rows")
    data = np.asarray(rows).reshape(len(rows), n1, n2, n3)
    return TensorSeries(data, tuple(labels) if any(labels) else None)
