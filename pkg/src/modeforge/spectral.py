"""Complex baseband frames, forward/inverse DFT and energy bookkeeping.

Conventions used everywhere in the package::

    X[k] = sum_n x[n] exp(-2j pi k n / L)          (forward, unnormalized)
    x[n] = (1/L) sum_k X[k] exp(+2j pi k n / L)     (inverse)

All spectral math runs in complex128.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# WiSig rates: 25 Msps sampling, 2 Msym/s 802.11a/g preamble
DEFAULT_SAMPLE_RATE = 25e6
DEFAULT_SYMBOL_RATE = 2e6


def _as_complex_1d(values, what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim == 2 and arr.shape[1] == 2 and not np.iscomplexobj(arr):
        arr = arr[:, 0] + 1j * arr[:, 1]
    arr = np.ascontiguousarray(arr, dtype=np.complex128)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if arr.size < 2:
        raise ValueError(f"{what} needs at least 2 samples, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValueError(f"{what} contains a non-finite value at index {bad}")
    arr.setflags(write=False)
    return arr


def _check_rates(sample_rate: float, symbol_rate: float) -> None:
    if not (np.isfinite(sample_rate) and np.isfinite(symbol_rate)):
        raise ValueError("rates must be finite")
    if not sample_rate > symbol_rate > 0:
        raise ValueError(
            f"need sample_rate > symbol_rate > 0, got {sample_rate} and {symbol_rate}"
        )


@dataclass(frozen=True, eq=False)
class IQFrame:
    """One complex baseband segment plus the rates it was captured at.

    ``samples`` accepts a complex vector or an ``(L, 2)`` real array of
    (I, Q) pairs.
    """

    samples: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE
    symbol_rate: float = DEFAULT_SYMBOL_RATE

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_complex_1d(self.samples, "frame"))
        _check_rates(self.sample_rate, self.symbol_rate)

    def __len__(self) -> int:
        return self.samples.size

    def to_iq(self) -> np.ndarray:
        """(L, 2) float64 array of in-phase / quadrature columns."""
        return np.stack([self.samples.real, self.samples.imag], axis=1)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """DFT bins 0..L-1 of a frame; rates are carried so the inverse can rebuild it."""

    bins: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE
    symbol_rate: float = DEFAULT_SYMBOL_RATE

    def __post_init__(self):
        object.__setattr__(self, "bins", _as_complex_1d(self.bins, "spectrum"))
        _check_rates(self.sample_rate, self.symbol_rate)

    def __len__(self) -> int:
        return self.bins.size


def direct_dft(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """O(L^2) DFT by explicit summation.

    Kept as the reference that the FFT path is checked against. The
    exponent index ``k*n`` is reduced modulo L before scaling so the twiddle
    angles stay accurate for long frames.
    """
    x = np.asarray(x, dtype=np.complex128)
    L = x.shape[-1]
    n = np.arange(L)
    kn = np.outer(n, n) % L
    sign = 1.0 if inverse else -1.0
    twiddle = np.exp(sign * 2j * np.pi * kn / L)
    out = x @ twiddle.T
    if inverse:
        out = out / L
    return out


def dft(frame: IQFrame) -> Spectrum:
    # pocketfft handles any length (mixed radix + Bluestein)
    bins = np.fft.fft(frame.samples)
    return Spectrum(bins, frame.sample_rate, frame.symbol_rate)


def idft(spectrum: Spectrum) -> IQFrame:
    samples = np.fft.ifft(spectrum.bins)
    return IQFrame(samples, spectrum.sample_rate, spectrum.symbol_rate)


def parseval_gap(frame: IQFrame) -> float:
    """Relative mismatch between time-domain and (1/L)-scaled spectral energy.

    Returns 0.0 for an all-zero frame.
    """
    time_energy = frame.energy()
    if time_energy == 0.0:
        return 0.0
    spec = dft(frame).bins
    freq_energy = float(np.sum(np.abs(spec) ** 2)) / len(frame)
    return abs(time_energy - freq_energy) / time_energy


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / ||b|| with the 0/0 case mapped to 0."""
    a = np.asarray(a)
    b = np.asarray(b)
    denom = np.linalg.norm(b)
    num = np.linalg.norm(a - b)
    if denom == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return float(num / denom)
