"""Shared data preparation: optional VMD, legal/illegal partition, stratified split."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .data import Dataset, SplitSpec, legal_illegal_partition, stratified_split, vmd_preprocess
from .model import HydraConfig
from .vmd import fundamental_index, select_centers


@dataclass(frozen=True)
class DataPlan:
    vmd_k: int = 3          # 0 or 1 keeps raw IQ
    n_illegal: int = 0
    seed: int = 42          # split and partition seed

    def __post_init__(self):
        if self.vmd_k < 0 or self.vmd_k > 7:
            raise ValueError(f"vmd_k must be 0 (raw IQ) or in 1..7, got {self.vmd_k}")
        if self.n_illegal < 0:
            raise ValueError("n_illegal must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class PreparedData:
    train: Dataset
    val: Dataset
    test: Dataset
    illegal: Dataset
    legal_classes: list[int]
    illegal_classes: list[int]

    @property
    def channels(self) -> int:
        return self.train.channels

    @property
    def n_classes(self) -> int:
        return self.train.n_classes


def decompose_dataset(dataset: Dataset, k: int) -> Dataset:
    """Closed-form modes with tabulated centers; k <= 1 returns the input unchanged."""
    if k <= 1:
        return dataset
    k0 = fundamental_index(dataset.sample_rate, dataset.symbol_rate)
    return vmd_preprocess(dataset, select_centers(k, k0, dataset.frame_len))


def prepare(dataset: Dataset, plan: DataPlan) -> PreparedData:
    if dataset.layout != "iq":
        raise ValueError("prepare expects raw IQ input; decomposition is part of the plan")
    data = decompose_dataset(dataset, plan.vmd_k)
    part = legal_illegal_partition(data, plan.n_illegal, plan.seed)
    train, val, test = stratified_split(part.legal, SplitSpec(seed=plan.seed))
    return PreparedData(train, val, test, part.illegal, part.legal_classes, part.illegal_classes)


def desk_config(mode: str, n_classes: int, in_channels: int, d_model: int = 32,
                heads: int = 1, layers: int = 1, d_ff: int = 64, d_state: int = 8,
                widths=(16, 32), max_len: int = 256) -> HydraConfig:
    """Reduced dimensions that train in minutes on one CPU core."""
    return HydraConfig.small(
        mode, n_classes, in_channels=in_channels, d_model=d_model,
        cfre={"widths": tuple(widths)},
        tdse={"heads": heads, "layers": layers, "d_ff": d_ff, "max_len": max_len},
        mlfe={"d_state": d_state, "layers": layers},
    )
