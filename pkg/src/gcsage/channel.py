"""Frequency-domain MIMO channel synthesis, noise, CPDP and tensor files."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ChannelFormatError, InvalidInputError

SPEED_OF_LIGHT = 299_792_458.0
DB_FLOOR = -200.0

_MAGIC = b"NFCH"
_VERSION = 1
_HEADER = struct.Struct("<4sIIII3d")


@dataclass(frozen=True)
class FrequencyGrid:
    """Sub-band frequencies ``f_p = start + p * spacing`` for ``p = 0 .. count-1``."""

    start: float
    spacing: float
    count: int

    def __post_init__(self):
        if not np.isfinite(self.start) or not np.isfinite(self.spacing):
            raise InvalidInputError("frequency grid must be finite")
        if self.spacing <= 0:
            raise InvalidInputError("sub-band spacing must be positive")
        if int(self.count) != self.count or self.count < 1:
            raise InvalidInputError("sub-band count must be a positive integer")
        object.__setattr__(self, "count", int(self.count))

    @property
    def frequencies(self) -> np.ndarray:
        return self.start + self.spacing * np.arange(self.count)

    @property
    def center(self) -> float:
        return self.start + 0.5 * (self.count - 1) * self.spacing

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.center

    @property
    def bandwidth(self) -> float:
        return self.count * self.spacing

    @property
    def delay_bin(self) -> float:
        """Delay resolution of a P-point IDFT, ``1 / (P f_s)``."""
        return 1.0 / (self.count * self.spacing)


@dataclass
class ChannelTensor:
    values: np.ndarray
    freq: FrequencyGrid
    arrays: object = None
    noise_power: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim != 3:
            raise InvalidInputError("channel values must be an M x N x P array")
        if v.shape[2] != self.freq.count:
            raise InvalidInputError("channel depth does not match the frequency grid")
        if self.arrays is not None and v.shape[:2] != (self.arrays.M, self.arrays.N):
            raise InvalidInputError("channel shape does not match the arrays")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("channel values must be finite")
        self.values = v

    @property
    def shape(self):
        return self.values.shape

    @property
    def reference(self) -> np.ndarray:
        m0 = self.arrays.ref_tx if self.arrays is not None else 0
        n0 = self.arrays.ref_rx if self.arrays is not None else 0
        return self.values[m0, n0]

    def energy(self) -> float:
        return float(np.vdot(self.values, self.values).real)


def steering_phase(delays, freq: FrequencyGrid) -> np.ndarray:
    """``exp(-j 2 pi f_p tau)`` broadcast over the trailing sub-band axis."""
    tau = np.asarray(delays, dtype=float)
    if not np.all(np.isfinite(tau)):
        raise InvalidInputError("delays must be finite")
    if np.any(tau < 0):
        raise InvalidInputError("delays must be non-negative")
    # reduce the phase modulo one cycle before scaling by 2 pi to keep
    # exact cycles exact at tens of GHz
    cycles = np.multiply.outer(tau, freq.frequencies)
    cycles -= np.round(cycles)
    return np.exp(-2j * np.pi * cycles)


def synthesize_path(path, arrays, freq: FrequencyGrid) -> np.ndarray:
    """Noise-free contribution of one path, ``M x N x P``."""
    d = path.element_distances(arrays)
    amp = path.gain * path.visibility.astype(float)
    if path.amplitude_profile is not None:
        amp = amp * np.asarray(path.amplitude_profile)
    out = amp[..., None] * steering_phase(d / SPEED_OF_LIGHT, freq)
    out[~path.visibility] = 0.0
    return out


def add_noise(signal: np.ndarray, snr_db: float, seed=None) -> tuple[np.ndarray, float]:
    """Circularly symmetric Gaussian noise at ``snr_db`` relative to mean signal power."""
    if snr_db == np.inf:
        return signal.copy(), 0.0
    power = float(np.mean(np.abs(signal) ** 2))
    sigma2 = power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(signal.shape) + 1j * rng.standard_normal(signal.shape)
    return signal + np.sqrt(sigma2 / 2.0) * noise, sigma2


def synthesize_channel(paths, arrays, freq: FrequencyGrid, snr_db: float = np.inf, seed=None) -> ChannelTensor:
    signal = np.zeros((arrays.M, arrays.N, freq.count), dtype=complex)
    for p in paths:
        signal += synthesize_path(p, arrays, freq)
    values, sigma2 = add_noise(signal, snr_db, seed)
    return ChannelTensor(values, freq, arrays, sigma2)


def delay_profile(response: np.ndarray) -> np.ndarray:
    """Power delay profile of frequency responses along the last axis."""
    return np.abs(np.fft.ifft(response, axis=-1)) ** 2


def cpdp(chan: ChannelTensor, tx_index: int) -> np.ndarray:
    """Concatenated power delay profile ``N x P`` for a 1-based Tx index."""
    M = chan.values.shape[0]
    if int(tx_index) != tx_index or not 1 <= tx_index <= M:
        raise InvalidInputError(f"tx index {tx_index} outside 1..{M}")
    return delay_profile(chan.values[int(tx_index) - 1])


def to_db(power, floor: float = DB_FLOOR) -> np.ndarray:
    power = np.asarray(power, dtype=float)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power)
    return np.maximum(db, floor)


def write_cpdp_csv(path, profile: np.ndarray, freq: FrequencyGrid) -> None:
    """Rows ``rx_index,delay_ns,power_db`` with 1-based ``rx_index``."""
    N, P = profile.shape
    delays = np.arange(P) * freq.delay_bin * 1e9
    db = to_db(profile)
    with open(path, "w") as fh:
        fh.write("rx_index,delay_ns,power_db\n")
        for n in range(N):
            for p in range(P):
                fh.write(f"{n + 1},{delays[p]:.6f},{db[n, p]:.6f}\n")


def read_cpdp_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns the delay axis in ns and the ``N x P`` power matrix in dB."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = data[:, 0].astype(int)
    N = int(n.max())
    P = len(data) // N
    return data[:P, 1], data[:, 2].reshape(N, P)


def write_channel(path, chan: ChannelTensor) -> None:
    M, N, P = chan.values.shape
    sigma2 = np.nan if chan.noise_power is None else float(chan.noise_power)
    body = np.empty((M, N, P, 2), dtype="<f8")
    body[..., 0] = chan.values.real
    body[..., 1] = chan.values.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, M, N, P, chan.freq.start, chan.freq.spacing, sigma2))
        fh.write(body.tobytes())


def read_channel(path, arrays=None) -> ChannelTensor:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ChannelFormatError(f"{path}: truncated header")
    magic, version, M, N, P, f1, fs, sigma2 = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ChannelFormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ChannelFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 16 * M * N * P
    if len(raw) != expected:
        raise ChannelFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(M, N, P, 2)
    values = body[..., 0] + 1j * body[..., 1]
    try:
        return ChannelTensor(values, FrequencyGrid(f1, fs, P), arrays, None if np.isnan(sigma2) else sigma2)
    except InvalidInputError as exc:
        raise ChannelFormatError(f"{path}: {exc}") from exc
