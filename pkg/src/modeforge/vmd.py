"""Variational mode decomposition: the fixed-center closed-form split and an ADMM baseline.

The closed-form ("lossless") decomposition assigns every DFT bin of the input
to the k modes with weights proportional to the inverse squared distance
between the bin and each mode's center index. The weights form a partition of
unity, so the modes add back to the input exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import IQFrame, Spectrum, dft, relative_error

# Center multiples of k0 for each mode count (WiSig 802.11 preamble spectrum;
# last visible peak near 6*k0).
CENTER_TABLE: dict[int, tuple[int, ...]] = {
    2: (2, 4),
    3: (1, 3, 5),
    4: (0, 2, 4, 6),
    5: (0, 1, 3, 5, 6),
    6: (1, 2, 3, 4, 5, 6),
    7: (0, 1, 2, 3, 4, 5, 6),
}


@dataclass(frozen=True)
class CenterSet:
    """Mode center positions, in (possibly fractional) DFT bin units."""

    indices: tuple[float, ...]
    fundamental_index: float | None = None

    def __post_init__(self):
        idx = tuple(float(v) for v in self.indices)
        if not idx:
            raise ValueError("a CenterSet needs at least one center")
        if not all(math.isfinite(v) for v in idx):
            raise ValueError(f"non-finite center in {idx}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"centers must be strictly increasing and distinct, got {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def mode_count(self) -> int:
        return len(self.indices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.float64)

    def check_length(self, L: int) -> None:
        lo, hi = self.indices[0], self.indices[-1]
        if lo < 0 or hi >= L:
            raise ValueError(f"centers {self.indices} fall outside [0, {L})")


@dataclass(frozen=True, eq=False)
class ModeSet:
    """k mode components of one frame, stored as (k, L) complex arrays."""

    mode_spectra: np.ndarray
    mode_frames: np.ndarray
    centers: CenterSet
    sample_rate: float = 25e6
    symbol_rate: float = 2e6

    @property
    def source_len(self) -> int:
        return self.mode_spectra.shape[1]

    @property
    def mode_count(self) -> int:
        return self.mode_spectra.shape[0]

    def spectrum(self, i: int) -> Spectrum:
        return Spectrum(self.mode_spectra[i], self.sample_rate, self.symbol_rate)

    def frame(self, i: int) -> IQFrame:
        return IQFrame(self.mode_frames[i], self.sample_rate, self.symbol_rate)

    def to_channels(self) -> np.ndarray:
        """(L, 2k) real array; mode i occupies channels 2i (real) and 2i+1 (imag)."""
        return modes_to_channels(self.mode_frames)


def modes_to_channels(mode_frames: np.ndarray) -> np.ndarray:
    """Interleave (..., k, L) complex modes into (..., L, 2k) real channels."""
    stacked = np.stack([mode_frames.real, mode_frames.imag], axis=-1)  # (..., k, L, 2)
    stacked = np.moveaxis(stacked, -3, -2)  # (..., L, k, 2)
    return stacked.reshape(stacked.shape[:-2] + (-1,))


def channels_to_modes(channels: np.ndarray) -> np.ndarray:
    """Inverse of :func:`modes_to_channels`."""
    ch = np.asarray(channels)
    k = ch.shape[-1] // 2
    pairs = ch.reshape(ch.shape[:-1] + (k, 2))
    modes = pairs[..., 0] + 1j * pairs[..., 1]  # (..., L, k)
    return np.moveaxis(modes, -1, -2)


def fundamental_index(sample_rate: float, symbol_rate: float) -> float:
    """DFT index of the symbol-rate fundamental, ``sample_rate / symbol_rate``."""
    if not (math.isfinite(sample_rate) and math.isfinite(symbol_rate)):
        raise ValueError("rates must be finite")
    if symbol_rate <= 0:
        raise ValueError(f"symbol_rate must be positive, got {symbol_rate}")
    if sample_rate <= symbol_rate:
        raise ValueError(
            f"sample_rate ({sample_rate}) must exceed symbol_rate ({symbol_rate})"
        )
    return sample_rate / symbol_rate


def select_centers(k: int, k0: float, L: int) -> CenterSet:
    """Tabulated center set for ``k`` modes: multiples of ``k0``."""
    if k not in CENTER_TABLE:
        raise ValueError(f"no center table row for k={k}; supported k are 2..7")
    indices = tuple(m * k0 for m in CENTER_TABLE[k])
    if indices[-1] >= L:
        raise ValueError(
            f"center {indices[-1]} (= {CENTER_TABLE[k][-1]}*k0) is not below frame length {L}"
        )
    return CenterSet(indices, fundamental_index=k0)


def mode_weights(centers: CenterSet, L: int) -> np.ndarray:
    """(k, L) matrix of per-bin mode weights; each column sums to one.

    A bin that sits exactly on a center goes entirely to that mode.
    """
    centers.check_length(L)
    c = centers.as_array()
    bins = np.arange(L, dtype=np.float64)
    dist = bins[None, :] - c[:, None]
    singular = dist == 0.0
    hit = singular.any(axis=0)
    safe = np.where(singular, 1.0, np.abs(dist))
    # scale by the nearest distance so a center within 1e-300 of a bin cannot overflow
    inv = (safe.min(axis=0, keepdims=True) / safe) ** 2
    w = inv / inv.sum(axis=0, keepdims=True)
    w[:, hit] = singular[:, hit].astype(np.float64)
    return w


def lossless_vmd(frame: IQFrame, centers: CenterSet) -> ModeSet:
    L = len(frame)
    w = mode_weights(centers, L)
    F = dft(frame).bins
    U = w * F[None, :]
    u = np.fft.ifft(U, axis=1)
    return ModeSet(U, u, centers, frame.sample_rate, frame.symbol_rate)


def lossless_vmd_batch(frames: np.ndarray, centers: CenterSet) -> np.ndarray:
    """Decompose a stack of complex frames (N, L) into modes (N, k, L)."""
    frames = np.asarray(frames, dtype=np.complex128)
    w = mode_weights(centers, frames.shape[-1])
    F = np.fft.fft(frames, axis=-1)
    return np.fft.ifft(F[..., None, :] * w, axis=-1)


def center_objective(spectrum: Spectrum, centers: CenterSet) -> float:
    """Residual bandwidth cost left after the optimal split for fixed centers.

    ``sum_k |F(k)|^2 / sum_i (k - k_i)^-2`` with bins on a center
    contributing nothing.
    """
    F = spectrum.bins
    L = F.size
    centers.check_length(L)
    return float(_objective_many(np.abs(F) ** 2, centers.as_array()[None, :])[0])


def _objective_many(power: np.ndarray, center_rows: np.ndarray) -> np.ndarray:
    """Objective for each row of a (m, k) array of candidate centers."""
    bins = np.arange(power.size, dtype=np.float64)
    dist = bins[None, None, :] - center_rows[:, :, None]
    singular = (dist == 0.0).any(axis=1)
    with np.errstate(divide="ignore"):
        s = (1.0 / dist**2).sum(axis=1)
    contrib = np.where(singular, 0.0, power[None, :] / np.where(singular, 1.0, s))
    return contrib.sum(axis=1)


@dataclass(frozen=True)
class CenterSearchResult:
    centers: CenterSet
    objective: float
    passes: int


def optimize_centers(spectrum: Spectrum, k: int, grid_step: float = 1.0) -> CenterSearchResult:
    """Coordinate-descent search for centers on a regular bin grid.

    Starts from the first ``k`` grid points. Each pass sweeps the coordinates
    in order and moves one center to the grid point that strictly lowers the
    objective the most (ties keep the lowest grid index). Stops after a pass
    with no move. This is a local search; the result is whatever it
    converged to.
    """
    L = len(spectrum)
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if not grid_step > 0:
        raise ValueError(f"grid_step must be positive, got {grid_step}")
    grid = np.arange(0.0, L, grid_step)
    if k > grid.size:
        raise ValueError(f"k={k} exceeds the {grid.size} available grid points")
    power = np.abs(spectrum.bins) ** 2
    pos = list(range(k))  # grid positions of the current centers
    best = float(_objective_many(power, grid[pos][None, :])[0])
    passes = 0
    moved = True
    while moved:
        moved = False
        passes += 1
        for i in range(k):
            cand = np.tile(grid[pos], (grid.size, 1))
            cand[:, i] = grid
            vals = _objective_many(power, cand)
            taken = np.zeros(grid.size, dtype=bool)
            taken[[p for j, p in enumerate(pos) if j != i]] = True
            vals[taken] = np.inf
            j = int(np.argmin(vals))
            if vals[j] < best:
                best = float(vals[j])
                pos[i] = j
                moved = True
    centers = CenterSet(tuple(sorted(grid[pos])))
    return CenterSearchResult(centers, best, passes)


@dataclass(frozen=True)
class AdmmConfig:
    alpha: float = 2000.0
    tol: float = 1e-7
    max_iter: int = 500
    tau_dual: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tau_dual < 0:
            raise ValueError(f"tau_dual must be non-negative, got {self.tau_dual}")


@dataclass
class AdmmState:
    mode_spectra: np.ndarray
    omega: np.ndarray
    dual: np.ndarray
    iteration: int = 0


@dataclass(frozen=True, eq=False)
class AdmmResult:
    modes: ModeSet
    centers: CenterSet
    iterations: int
    converged: bool
    omega: np.ndarray = field(repr=False)


def admm_vmd(
    frame: IQFrame,
    k: int,
    config: AdmmConfig | None = None,
    init_modes: np.ndarray | None = None,
) -> AdmmResult:
    """Classic ADMM VMD over the full DFT grid, omega in cycles/sample (bin / L).

    Per iteration, Gauss-Seidel over modes:

    * ``U_i <- (F - sum_{j!=i} U_j + lam/2) / (1 + 2 alpha (w - w_i)^2)``
    * ``w_i <- sum w |U_i|^2 / sum |U_i|^2``
    * ``lam <- lam + tau (F - sum U)``

    Stops when the largest per-mode relative squared change drops below
    ``tol`` or after ``max_iter`` iterations (``converged`` is then False).
    """
    config = config or AdmmConfig()
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    L = len(frame)
    F = np.fft.fft(frame.samples)
    omega_axis = np.arange(L) / L
    if init_modes is None:
        U = np.tile(F / k, (k, 1))
    else:
        U = np.array(init_modes, dtype=np.complex128).reshape(k, L)
    state = AdmmState(U, 0.5 * np.arange(1, k + 1) / (k + 1), np.zeros(L, np.complex128))

    two_alpha = 2.0 * config.alpha
    total = U.sum(axis=0)
    converged = False
    while state.iteration < config.max_iter:
        U, omega = state.mode_spectra, state.omega
        prev = U.copy()
        resid = F - total
        if config.tau_dual:
            resid += state.dual / 2.0
        for i in range(k):
            new = (resid + U[i]) / (1.0 + two_alpha * (omega_axis - omega[i]) ** 2)
            resid -= new - U[i]
            U[i] = new
            power = new.real * new.real + new.imag * new.imag
            mass = power.sum()
            if mass > 0.0:
                omega[i] = max(float(omega_axis @ power) / mass, 0.0)
        total = U.sum(axis=0)
        if config.tau_dual:
            state.dual = state.dual + config.tau_dual * (F - total)
        state.iteration += 1
        if not np.isfinite(total).all() or not np.isfinite(omega).all():
            raise FloatingPointError(
                f"ADMM iterate became non-finite at iteration {state.iteration} "
                f"(alpha={config.alpha}, k={k})"
            )
        d = U - prev
        diff = (d.real**2 + d.imag**2).sum(axis=1)
        ref = (prev.real**2 + prev.imag**2).sum(axis=1)
        if (diff < config.tol * np.maximum(ref, 1e-300)).all():
            converged = True
            break

    order = np.argsort(state.omega, kind="stable")
    U = state.mode_spectra[order]
    omega = state.omega[order]
    idx = omega * L
    for j in range(1, idx.size):  # coincident centers: nudge to keep the set valid
        if idx[j] <= idx[j - 1]:
            idx[j] = np.nextafter(idx[j - 1], np.inf)
    centers = CenterSet(tuple(idx))
    u = np.fft.ifft(U, axis=1)
    modes = ModeSet(U, u, centers, frame.sample_rate, frame.symbol_rate)
    return AdmmResult(modes, centers, state.iteration, converged, omega)


def reconstruction_error(modes: ModeSet, frame: IQFrame) -> float:
    """``||sum_i u_i - f|| / ||f||``, 0 for a zero-energy frame."""
    if modes.source_len != len(frame):
        raise ValueError(
            f"mode length {modes.source_len} does not match frame length {len(frame)}"
        )
    if frame.energy() == 0.0:
        return 0.0
    return relative_error(modes.mode_frames.sum(axis=0), frame.samples)
