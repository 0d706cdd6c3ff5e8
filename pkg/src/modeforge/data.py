"""Datasets of IQ frames: a synthetic transmitter fleet, splits, and the RFIQ file format.

Frames are held as real ``(N, L, c)`` float64 arrays. For raw IQ ``c == 2``
(I, Q); after mode decomposition ``c == 2k`` with mode ``i`` in channels
``(2i, 2i+1)``.

RFIQ layout (all little-endian)::

    b"RFIQ" | u16 version | u32 header length | header JSON (utf-8)
    | u16 labels[n_frames]
    | f32 samples[n_frames][c/2][frame_len][2]     (mode-major, re/im interleaved)
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .spectral import DEFAULT_SAMPLE_RATE, DEFAULT_SYMBOL_RATE, IQFrame
from .vmd import CenterSet, lossless_vmd_batch, modes_to_channels

ILLEGAL = -1

# Fixed QPSK preamble, symbol index s -> exp(j(pi/4 + s*pi/2)).
PREAMBLE_SYMBOLS = (
    0, 2, 0, 0, 1, 1, 3, 3, 3, 3, 0, 0, 3, 0, 0, 0,
    3, 1, 1, 0, 1, 2, 3, 2, 3, 0, 1, 2, 2, 0, 0, 1,
)
ROLLOFF = 0.35

RFIQ_MAGIC = b"RFIQ"
RFIQ_VERSION = 1
_PREFIX = struct.Struct("<4sHI")


class RfiqError(ValueError):
    """Malformed RFIQ file."""


class BadMagicError(RfiqError):
    pass


class TruncatedPayloadError(RfiqError):
    pass


class LabelRangeError(RfiqError):
    pass


@dataclass(eq=False)
class Dataset:
    x: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    layout: str = "iq"
    sample_rate: float = DEFAULT_SAMPLE_RATE
    symbol_rate: float = DEFAULT_SYMBOL_RATE
    centers: tuple[float, ...] | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.class_names = [str(c) for c in self.class_names]
        if self.x.ndim != 3:
            raise ValueError(f"frames must be (N, L, c), got shape {self.x.shape}")
        if self.x.shape[0] != self.labels.size:
            raise ValueError(f"{self.x.shape[0]} frames but {self.labels.size} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        c = self.x.shape[2]
        if self.layout == "iq":
            if c != 2:
                raise ValueError(f"iq layout needs 2 channels, got {c}")
        elif self.layout == "vmd":
            if c % 2 or c == 0:
                raise ValueError(f"vmd layout needs an even channel count, got {c}")
        else:
            raise ValueError(f"unknown layout {self.layout!r}")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def frame_len(self) -> int:
        return self.x.shape[1]

    @property
    def channels(self) -> int:
        return self.x.shape[2]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.labels[idx], list(self.class_names), self.layout,
                       self.sample_rate, self.symbol_rate, self.centers)

    def complex_frames(self) -> np.ndarray:
        if self.layout != "iq":
            raise ValueError("complex_frames() needs an iq-layout dataset")
        return self.x[:, :, 0] + 1j * self.x[:, :, 1]

    def frame(self, i: int) -> IQFrame:
        return IQFrame(self.complex_frames()[i], self.sample_rate, self.symbol_rate)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


# ---------------------------------------------------------------- synthesis


def raised_cosine(t: np.ndarray, rolloff: float = ROLLOFF) -> np.ndarray:
    """Raised-cosine pulse, ``t`` in symbol periods."""
    t = np.asarray(t, dtype=np.float64)
    out = np.sinc(t)
    if rolloff == 0:
        return out
    denom = 1.0 - (2.0 * rolloff * t) ** 2
    edge = np.isclose(denom, 0.0)
    safe = np.where(edge, 1.0, denom)
    out = out * np.cos(np.pi * rolloff * t) / safe
    # limit at |t| = 1/(2 beta)
    out[edge] = (np.pi / 4.0) * np.sinc(1.0 / (2.0 * rolloff))
    return out


def qpsk(symbols: Sequence[int]) -> np.ndarray:
    s = np.asarray(symbols)
    return np.exp(1j * (np.pi / 4 + s * np.pi / 2))


def shaped_preamble(
    frame_len: int,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    symbol_rate: float = DEFAULT_SYMBOL_RATE,
    rolloff: float = ROLLOFF,
    span: int = 8,
) -> np.ndarray:
    """Unit-RMS pulse-shaped preamble sampled at ``sample_rate``.

    The 32-symbol sequence repeats if the frame outlasts it.
    """
    sps = sample_rate / symbol_rate
    t = np.arange(frame_len) / sps
    m = np.arange(-span, int(math.ceil(frame_len / sps)) + span + 1)
    a = qpsk(np.asarray(PREAMBLE_SYMBOLS)[m % len(PREAMBLE_SYMBOLS)])
    s = raised_cosine(t[:, None] - m[None, :], rolloff) @ a
    return s / np.sqrt(np.mean(np.abs(s) ** 2))


@dataclass(frozen=True)
class ImpairmentCaps:
    gain_imbalance_db: float = 1.0
    phase_imbalance: float = math.radians(5.0)
    dc_offset: float = 0.02
    carrier_offset: float = 0.01
    phase_noise_std: float = 0.01
    nonlinearity_coeff: float = 0.05

    def __post_init__(self):
        vals = [getattr(self, f) for f in self.__dataclass_fields__]
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ValueError(f"impairment caps must be finite and non-negative: {self}")

    def is_degenerate(self) -> bool:
        return all(getattr(self, f) == 0 for f in self.__dataclass_fields__)


@dataclass(frozen=True)
class SynthDeviceProfile:
    gain_imbalance: float = 0.0       # dB
    phase_imbalance: float = 0.0      # rad
    dc_offset: complex = 0j           # fraction of signal RMS
    carrier_offset: float = 0.0       # fraction of symbol rate
    phase_noise_std: float = 0.0      # rad per sample
    nonlinearity_coeff: float = 0.0   # cubic compression
    seed: int = 0


def draw_profile(rng: np.random.Generator, caps: ImpairmentCaps, seed: int) -> SynthDeviceProfile:
    return SynthDeviceProfile(
        gain_imbalance=rng.uniform(-1, 1) * caps.gain_imbalance_db,
        phase_imbalance=rng.uniform(-1, 1) * caps.phase_imbalance,
        dc_offset=complex(rng.uniform(0, 1) * caps.dc_offset * np.exp(2j * np.pi * rng.uniform())),
        carrier_offset=rng.uniform(-1, 1) * caps.carrier_offset,
        phase_noise_std=rng.uniform(0, 1) * caps.phase_noise_std,
        nonlinearity_coeff=rng.uniform(0, 1) * caps.nonlinearity_coeff,
        seed=int(seed),
    )


def make_profiles(n_devices: int, caps: ImpairmentCaps | None = None, rng_seed: int = 42):
    caps = caps or ImpairmentCaps()
    if caps.is_degenerate():
        warnings.warn("all impairment caps are zero; devices would be indistinguishable")
        raise ValueError("degenerate impairment caps: every cap is zero")
    rng = np.random.default_rng(rng_seed)
    seeds = rng.integers(0, 2**31 - 1, size=n_devices)
    return [draw_profile(rng, caps, s) for s in seeds]


def apply_impairments(
    clean: np.ndarray,
    profile: SynthDeviceProfile,
    rng: np.random.Generator,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    symbol_rate: float = DEFAULT_SYMBOL_RATE,
) -> np.ndarray:
    """Transmitter chain: IQ imbalance, DC offset, cubic PA compression, CFO, phase noise."""
    s = np.asarray(clean, dtype=np.complex128)
    g = 10.0 ** (profile.gain_imbalance / 20.0)
    phi = profile.phase_imbalance
    mu = (1.0 + g * np.exp(-1j * phi)) / 2.0
    nu = (1.0 - g * np.exp(1j * phi)) / 2.0
    y = mu * s + nu * np.conj(s)
    y = y + profile.dc_offset
    y = y * (1.0 - profile.nonlinearity_coeff * np.abs(y) ** 2)
    n = np.arange(s.size)
    phase = 2.0 * np.pi * profile.carrier_offset * symbol_rate / sample_rate * n
    if profile.phase_noise_std > 0:
        phase = phase + np.cumsum(rng.normal(0.0, profile.phase_noise_std, s.size))
    return y * np.exp(1j * phase)


def add_awgn(x: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Complex AWGN scaled to the frame's own mean power; ``inf`` adds nothing."""
    if math.isinf(snr_db) and snr_db > 0:
        return np.array(x, dtype=np.complex128)
    p_sig = np.mean(np.abs(x) ** 2)
    sigma = np.sqrt(p_sig / 10.0 ** (snr_db / 10.0) / 2.0)
    noise = rng.normal(0.0, sigma, x.shape) + 1j * rng.normal(0.0, sigma, x.shape)
    return x + noise


def synthesize_device(
    profile: SynthDeviceProfile,
    n_frames: int,
    frame_len: int = 256,
    snr_db: float = 20.0,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    symbol_rate: float = DEFAULT_SYMBOL_RATE,
) -> np.ndarray:
    """(n_frames, frame_len) complex frames from one device; seeded by ``profile.seed``."""
    rng = np.random.default_rng(profile.seed)
    clean = shaped_preamble(frame_len, sample_rate, symbol_rate)
    out = np.empty((n_frames, frame_len), dtype=np.complex128)
    for i in range(n_frames):
        y = apply_impairments(clean, profile, rng, sample_rate, symbol_rate)
        out[i] = add_awgn(y, snr_db, rng)
    return out


def iq_dataset(frames: np.ndarray, labels, class_names, **kw) -> Dataset:
    frames = np.asarray(frames)
    x = np.stack([frames.real, frames.imag], axis=-1)
    return Dataset(x, labels, class_names, "iq", **kw)


def gen_fleet(
    n_devices: int,
    frames_per_device: int,
    frame_len: int = 256,
    snr_db: float = 20.0,
    rng_seed: int = 42,
    caps: ImpairmentCaps | None = None,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    symbol_rate: float = DEFAULT_SYMBOL_RATE,
) -> Dataset:
    """Synthetic fleet: every device sends the same preamble through its own impairments."""
    if n_devices < 2:
        raise ValueError(f"a fleet needs at least 2 devices, got {n_devices}")
    if frame_len < 64:
        raise ValueError(f"frame_len must be >= 64, got {frame_len}")
    if frames_per_device < 1:
        raise ValueError("frames_per_device must be positive")
    profiles = make_profiles(n_devices, caps, rng_seed)
    frames = np.concatenate([
        synthesize_device(p, frames_per_device, frame_len, snr_db, sample_rate, symbol_rate)
        for p in profiles
    ])
    labels = np.repeat(np.arange(n_devices), frames_per_device)
    names = [f"tx{i:02d}" for i in range(n_devices)]
    return iq_dataset(frames, labels, names, sample_rate=sample_rate, symbol_rate=symbol_rate)


# ------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 42
    stratified: bool = True

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ValueError(f"ratios must be three positive numbers, got {self.ratios}")
        if not math.isclose(sum(self.ratios), 1.0, abs_tol=1e-9):
            raise ValueError(f"ratios must sum to 1, got {sum(self.ratios)}")


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, ...]:
    """Partition sizes from rounded cumulative cut points (half rounds up).

    Every size is within one sample of ``n * ratio``; e.g. 83 with
    (0.8, 0.1, 0.1) gives cuts at 66 and 75, so (66, 9, 8).
    """
    cum = np.cumsum(ratios)
    cuts = [0] + [int(math.floor(n * c + 0.5)) for c in cum[:-1]] + [n]
    return tuple(b - a for a, b in zip(cuts, cuts[1:]))


def stratified_split(dataset: Dataset, spec: SplitSpec | None = None):
    spec = spec or SplitSpec()
    rng = np.random.default_rng(spec.seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    if spec.stratified:
        groups = [np.flatnonzero(dataset.labels == c) for c in range(dataset.n_classes)]
        for c, idx in enumerate(groups):
            if idx.size < 10:
                raise ValueError(
                    f"class {c} ({dataset.class_names[c]}) has {idx.size} samples; need >= 10"
                )
    else:
        groups = [np.arange(len(dataset))]
    for idx in groups:
        perm = rng.permutation(idx)
        start = 0
        for p, size in enumerate(split_sizes(idx.size, spec.ratios)):
            parts[p].append(perm[start:start + size])
            start += size
    return tuple(dataset.subset(np.sort(np.concatenate(p))) for p in parts)


@dataclass(eq=False)
class LegalPartition:
    legal: Dataset
    illegal: Dataset
    legal_classes: list[int]
    illegal_classes: list[int]

    @property
    def mapping(self) -> dict[int, int]:
        """Original class index -> re-indexed legal class."""
        return {orig: new for new, orig in enumerate(self.legal_classes)}


def legal_illegal_partition(dataset: Dataset, n_illegal: int, rng_seed: int = 42) -> LegalPartition:
    """Randomly mark ``n_illegal`` classes as unknown devices and re-index the rest."""
    K = dataset.n_classes
    if n_illegal < 0 or n_illegal >= K:
        raise ValueError(f"n_illegal must be in [0, {K}), got {n_illegal}")
    rng = np.random.default_rng(rng_seed)
    illegal = sorted(int(c) for c in rng.choice(K, size=n_illegal, replace=False))
    legal = [c for c in range(K) if c not in illegal]

    def take(classes):
        remap = np.full(K, -1, dtype=np.int64)
        remap[classes] = np.arange(len(classes))
        mask = np.isin(dataset.labels, classes)
        return Dataset(dataset.x[mask], remap[dataset.labels[mask]],
                       [dataset.class_names[c] for c in classes], dataset.layout,
                       dataset.sample_rate, dataset.symbol_rate, dataset.centers)

    return LegalPartition(take(legal), take(illegal), legal, illegal)


def open_set_arrays(legal_test: Dataset, illegal: Dataset):
    """Stack legal test frames with every illegal frame; illegal labels become ``ILLEGAL``."""
    x = np.concatenate([legal_test.x, illegal.x])
    y = np.concatenate([legal_test.labels, np.full(len(illegal), ILLEGAL, dtype=np.int64)])
    return x, y


def class_weights(labels, n_classes: int | None = None) -> np.ndarray:
    """Inverse-frequency weights ``N / (K * count_k)`` (mean one when balanced)."""
    labels = np.asarray(labels, dtype=np.int64)
    K = int(labels.max()) + 1 if n_classes is None else n_classes
    counts = np.bincount(labels, minlength=K)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"classes {missing.tolist()} have no training samples")
    return labels.size / (K * counts.astype(np.float64))


# -------------------------------------------------------- mode decomposition


def vmd_preprocess(dataset: Dataset, centers: CenterSet) -> Dataset:
    """Replace each raw IQ frame by its closed-form modes (c = 2k)."""
    if dataset.layout != "iq":
        raise ValueError("vmd_preprocess expects an iq-layout dataset")
    centers.check_length(dataset.frame_len)
    modes = lossless_vmd_batch(dataset.complex_frames(), centers)
    x = modes_to_channels(modes)
    return Dataset(x, dataset.labels.copy(), list(dataset.class_names), "vmd",
                   dataset.sample_rate, dataset.symbol_rate, centers.indices)


def merge_modes(x: np.ndarray) -> np.ndarray:
    """Sum mode channel pairs back into (N, L, 2) IQ."""
    N, L, c = x.shape
    return x.reshape(N, L, c // 2, 2).sum(axis=2)


# --------------------------------------------------------------------- RFIQ


def save_iq(dataset: Dataset, path) -> None:
    if dataset.n_classes > 65536:
        raise ValueError("RFIQ labels are u16; too many classes")
    header = {
        "frame_len": dataset.frame_len,
        "n_frames": len(dataset),
        "n_classes": dataset.n_classes,
        "channels": dataset.channels,
        "sample_rate": dataset.sample_rate,
        "symbol_rate": dataset.symbol_rate,
        "layout": dataset.layout,
        "class_names": dataset.class_names,
        "centers": list(dataset.centers) if dataset.centers is not None else None,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    N, L, c = dataset.x.shape
    # (N, L, c) -> (N, c/2, L, 2): mode-major, re/im interleaved
    samples = dataset.x.reshape(N, L, c // 2, 2).transpose(0, 2, 1, 3)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(RFIQ_MAGIC, RFIQ_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(dataset.labels.astype("<u2").tobytes())
        fh.write(np.ascontiguousarray(samples, dtype="<f4").tobytes())


def load_iq(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise TruncatedPayloadError(
            f"truncated payload at byte offset {len(raw)}: file shorter than the {_PREFIX.size}-byte prefix"
        )
    magic, version, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != RFIQ_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}; expected {RFIQ_MAGIC!r}")
    if version != RFIQ_VERSION:
        raise RfiqError(f"unsupported RFIQ version {version}")
    off = _PREFIX.size
    if len(raw) < off + hlen:
        raise TruncatedPayloadError(
            f"truncated payload at byte offset {len(raw)}: header needs {hlen} bytes from offset {off}"
        )
    try:
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RfiqError(f"unreadable header JSON: {exc}") from None
    off += hlen
    n, L, c = header["n_frames"], header["frame_len"], header["channels"]
    need = n * 2 + n * L * c * 4
    if len(raw) - off < need:
        raise TruncatedPayloadError(
            f"truncated payload at byte offset {len(raw)}: expected {off + need} bytes in total"
        )
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=off).astype(np.int64)
    off += n * 2
    if labels.size and labels.max() >= header["n_classes"]:
        bad = int(np.flatnonzero(labels >= header["n_classes"])[0])
        raise LabelRangeError(
            f"label {labels[bad]} of frame {bad} is out of range for {header['n_classes']} classes"
        )
    samples = np.frombuffer(raw, dtype="<f4", count=n * L * c, offset=off)
    x = samples.reshape(n, c // 2, L, 2).transpose(0, 2, 1, 3).reshape(n, L, c)
    centers = header.get("centers")
    return Dataset(x.astype(np.float64), labels, header["class_names"], header["layout"],
                   header["sample_rate"], header["symbol_rate"],
                   tuple(centers) if centers is not None else None)


def from_wisig(
    tx_frames: Mapping[str, np.ndarray],
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    symbol_rate: float = DEFAULT_SYMBOL_RATE,
) -> Dataset:
    """Build a dataset from WiSig-style per-transmitter arrays.

    WiSig's compact subsets ship, per transmitter, equalized 802.11 preambles
    as ``(n, 256, 2)`` float arrays of (I, Q). Unpack the upstream archive
    into a ``{tx_name: array}`` mapping (receiver/day axes flattened), pass it
    here, and write the result with :func:`save_iq`.
    """
    names = list(tx_frames)
    xs, ys = [], []
    for label, name in enumerate(names):
        arr = np.asarray(tx_frames[name], dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ValueError(f"{name}: expected (n, L, 2) IQ array, got {arr.shape}")
        xs.append(arr)
        ys.append(np.full(arr.shape[0], label))
    return Dataset(np.concatenate(xs), np.concatenate(ys), names, "iq", sample_rate, symbol_rate)
