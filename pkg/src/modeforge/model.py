"""Dual-mode RF fingerprint classifier.

Pipeline: CFRE (three residual dilated conv blocks) -> encoder -> linear head.
The encoder is either TDSE (learned positions, class token, post-norm
transformer layers) or MLFE (Mamba-style selective state-space block with a
diagonal state matrix).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

INIT_STD = 0.02


@dataclass(frozen=True)
class CfreConfig:
    in_channels: int = 2
    widths: tuple[int, int] = (32, 48)
    d_model: int = 64
    k_t: int = 3
    k_f: int = 15
    dilation: int = 2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        if self.k_t % 2 == 0 or self.k_f % 2 == 0:
            raise ValueError(f"kernel sizes must be odd, got k_t={self.k_t}, k_f={self.k_f}")
        if self.dilation < 1 or self.d_model < 1 or self.in_channels < 1:
            raise ValueError("dilation, d_model and in_channels must be positive")


@dataclass(frozen=True)
class TdseConfig:
    layers: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    dropout: float = 0.1
    max_len: int = 256

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("TDSE needs at least one layer")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads


@dataclass(frozen=True)
class MlfeConfig:
    layers: int = 1
    d_model: int = 64
    d_state: int = 16
    conv_kernel: int = 4
    expand: int = 2

    def __post_init__(self):
        if self.layers < 1 or self.d_state < 1 or self.expand < 1 or self.conv_kernel < 1:
            raise ValueError(f"invalid MLFE configuration {self}")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model


@dataclass(frozen=True)
class HydraConfig:
    mode: str = "tdse"
    n_classes: int = 2
    cfre: CfreConfig = field(default_factory=CfreConfig)
    tdse: TdseConfig = field(default_factory=TdseConfig)
    mlfe: MlfeConfig = field(default_factory=MlfeConfig)

    def __post_init__(self):
        if self.mode not in ("tdse", "mlfe"):
            raise ValueError(f"mode must be 'tdse' or 'mlfe', got {self.mode!r}")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        d = self.cfre.d_model
        enc = self.tdse if self.mode == "tdse" else self.mlfe
        if enc.d_model != d:
            raise ValueError(f"encoder d_model {enc.d_model} != CFRE d_model {d}")

    @property
    def d_model(self) -> int:
        return self.cfre.d_model

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HydraConfig":
        return cls(d["mode"], d["n_classes"], CfreConfig(**d["cfre"]),
                   TdseConfig(**d["tdse"]), MlfeConfig(**d["mlfe"]))

    @classmethod
    def small(cls, mode: str, n_classes: int, in_channels: int = 2, d_model: int = 64,
              **overrides) -> "HydraConfig":
        """Convenience constructor keeping CFRE and encoder widths consistent."""
        cfre = CfreConfig(in_channels=in_channels, d_model=d_model,
                          **overrides.pop("cfre", {}))
        tdse = TdseConfig(d_model=d_model, **overrides.pop("tdse", {}))
        mlfe = MlfeConfig(d_model=d_model, **overrides.pop("mlfe", {}))
        if overrides:
            raise TypeError(f"unexpected overrides {sorted(overrides)}")
        return cls(mode, n_classes, cfre, tdse, mlfe)


# ------------------------------------------------------------------ init


def _normal(rng, *shape):
    return Tensor(rng.normal(0.0, INIT_STD, shape), requires_grad=True)


def _const(value, *shape):
    return Tensor(np.full(shape, float(value)), requires_grad=True)


def init_params(config: HydraConfig, rng: np.random.Generator):
    """Fresh (params, buffers). Linear/conv/positional/class-token weights ~ N(0, 0.02)."""
    p: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    cf = config.cfre
    chans = [cf.in_channels, cf.widths[0], cf.widths[1], cf.d_model]
    for i in range(3):
        cin, cout = chans[i], chans[i + 1]
        pre = f"cfre.{i}"
        p[f"{pre}.conv_t.weight"] = _normal(rng, cout, cin, cf.k_t)
        p[f"{pre}.conv_f.weight"] = _normal(rng, cout, cin, cf.k_f)
        p[f"{pre}.bn.weight"] = _const(1.0, cout)
        p[f"{pre}.bn.bias"] = _const(0.0, cout)
        buffers[f"{pre}.bn.running_mean"] = np.zeros(cout)
        buffers[f"{pre}.bn.running_var"] = np.ones(cout)
        if cin != cout:
            p[f"{pre}.shortcut.weight"] = _normal(rng, cout, cin, 1)
            p[f"{pre}.shortcut.bias"] = _const(0.0, cout)

    d = config.d_model
    if config.mode == "tdse":
        t = config.tdse
        p["tdse.pos"] = _normal(rng, 1, t.max_len, d)
        p["tdse.cls"] = _normal(rng, 1, 1, d)
        for l in range(t.layers):
            pre = f"tdse.{l}"
            for name in ("wq", "wk", "wv", "wo"):
                p[f"{pre}.{name}"] = _normal(rng, d, d)
            p[f"{pre}.ln1.weight"] = _const(1.0, d)
            p[f"{pre}.ln1.bias"] = _const(0.0, d)
            p[f"{pre}.ff1.weight"] = _normal(rng, d, t.d_ff)
            p[f"{pre}.ff1.bias"] = _const(0.0, t.d_ff)
            p[f"{pre}.ff2.weight"] = _normal(rng, t.d_ff, d)
            p[f"{pre}.ff2.bias"] = _const(0.0, d)
            p[f"{pre}.ln2.weight"] = _const(1.0, d)
            p[f"{pre}.ln2.bias"] = _const(0.0, d)
    else:
        m = config.mlfe
        di, N = m.d_inner, m.d_state
        for l in range(m.layers):
            pre = f"mlfe.{l}"
            p[f"{pre}.norm.weight"] = _const(1.0, d)
            p[f"{pre}.in_proj"] = _normal(rng, d, 2 * di)
            p[f"{pre}.conv.weight"] = _normal(rng, di, 1, m.conv_kernel)
            p[f"{pre}.conv.bias"] = _const(0.0, di)
            p[f"{pre}.x_proj"] = _normal(rng, di, di + 2 * N)
            # step sizes start log-uniform in [1e-3, 1e-1] (inverse softplus on the bias)
            dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), di))
            bias = np.zeros(di + 2 * N)
            bias[:di] = dt + np.log(-np.expm1(-dt))
            p[f"{pre}.x_proj.bias"] = Tensor(bias, requires_grad=True)
            p[f"{pre}.A"] = Tensor(-np.tile(np.arange(1.0, N + 1), (di, 1)), requires_grad=True)
            p[f"{pre}.D"] = _const(1.0, di)
            p[f"{pre}.out_proj"] = _normal(rng, di, d)
    p["head.weight"] = _normal(rng, d, config.n_classes)
    p["head.bias"] = _const(0.0, config.n_classes)
    return p, buffers


# --------------------------------------------------------------- forward


def res_conv1d_forward(x: Tensor, params, buffers, prefix: str, dilation: int,
                       k_t: int, k_f: int, train: bool) -> Tensor:
    """``ReLU(BN(conv_t(x) + conv_f(x))) + shortcut(x)`` on (b, c, T), length preserving."""
    xt = ad.conv1d(x, params[f"{prefix}.conv_t.weight"], dilation=dilation,
                   padding=(k_t // 2) * dilation)
    xf = ad.conv1d(x, params[f"{prefix}.conv_f.weight"], padding=k_f // 2)
    h = ad.batchnorm1d(xt + xf, params[f"{prefix}.bn.weight"], params[f"{prefix}.bn.bias"],
                       buffers[f"{prefix}.bn.running_mean"], buffers[f"{prefix}.bn.running_var"],
                       train)
    if f"{prefix}.shortcut.weight" in params:
        ident = ad.conv1d(x, params[f"{prefix}.shortcut.weight"], params[f"{prefix}.shortcut.bias"])
    else:
        ident = x
    return ad.relu(h) + ident


def cfre_forward(x: Tensor, config: CfreConfig, params, buffers, train: bool = False) -> Tensor:
    """(b, T, c) -> (b, T, d_model)."""
    if x.shape[-1] != config.in_channels:
        raise ValueError(f"input has {x.shape[-1]} channels, CFRE expects {config.in_channels}")
    h = x.transpose(0, 2, 1)
    for i, d in enumerate((1, config.dilation, 1)):
        h = res_conv1d_forward(h, params, buffers, f"cfre.{i}", d, config.k_t, config.k_f, train)
    return h.transpose(0, 2, 1)


def multi_head_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
                         heads: int, return_weights: bool = False):
    """Scaled dot-product self-attention over (b, S, d); heads split the feature axis."""
    b, S, d = x.shape
    dk = d // heads

    def split(t):
        return t.reshape(b, S, heads, dk).transpose(0, 2, 1, 3)

    q, k, v = split(x @ wq), split(x @ wk), split(x @ wv)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk))
    weights = ad.softmax(scores, axis=-1)
    ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, S, d)
    out = ctx @ wo
    return (out, weights.data) if return_weights else out


def tdse_forward(x_feat: Tensor, config: TdseConfig, params, train: bool = False,
                 rng: np.random.Generator | None = None, return_attention: bool = False):
    """(b, T, d) -> (x_enc (b, T+1, d), x_co (b, d)); the class token sits at index 0."""
    b, T, d = x_feat.shape
    if T > config.max_len:
        raise ValueError(f"sequence length {T} exceeds max_len {config.max_len}")
    x = x_feat + params["tdse.pos"][:, :T, :]
    cls = params["tdse.cls"] + Tensor(np.zeros((b, 1, d)))
    x = ad.concat([cls, x], axis=1)
    maps = []
    for l in range(config.layers):
        pre = f"tdse.{l}"
        att, w = multi_head_attention(x, params[f"{pre}.wq"], params[f"{pre}.wk"],
                                      params[f"{pre}.wv"], params[f"{pre}.wo"],
                                      config.heads, return_weights=True)
        maps.append(w)
        x = ad.layer_norm(x + ad.dropout(att, config.dropout, rng, train),
                          params[f"{pre}.ln1.weight"], params[f"{pre}.ln1.bias"])
        ff = ad.gelu(x @ params[f"{pre}.ff1.weight"] + params[f"{pre}.ff1.bias"])
        ff = ff @ params[f"{pre}.ff2.weight"] + params[f"{pre}.ff2.bias"]
        x = ad.layer_norm(x + ad.dropout(ff, config.dropout, rng, train),
                          params[f"{pre}.ln2.weight"], params[f"{pre}.ln2.bias"])
    x_co = x[:, 0, :]
    if return_attention:
        return x, x_co, maps
    return x, x_co


def mamba_block(x: Tensor, config: MlfeConfig, params, prefix: str) -> Tensor:
    """Residual selective-SSM block on (b, T, d); causal in T."""
    b, T, d = x.shape
    di, N = config.d_inner, config.d_state
    h = ad.rms_norm(x, params[f"{prefix}.norm.weight"])
    xz = h @ params[f"{prefix}.in_proj"]
    xs, z = xz[:, :, :di], xz[:, :, di:]
    xs = ad.depthwise_conv1d(xs.transpose(0, 2, 1), params[f"{prefix}.conv.weight"],
                             params[f"{prefix}.conv.bias"], padding="causal")
    xs = ad.silu(xs.transpose(0, 2, 1))
    proj = xs @ params[f"{prefix}.x_proj"] + params[f"{prefix}.x_proj.bias"]
    delta = ad.softplus(proj[:, :, :di])
    B = proj[:, :, di:di + N]
    C = proj[:, :, di + N:]
    y = ad.selective_scan(xs, delta, params[f"{prefix}.A"], B, C)
    y = y + xs * params[f"{prefix}.D"]
    y = y * ad.silu(z)
    return x + y @ params[f"{prefix}.out_proj"]


def mlfe_forward(x_feat: Tensor, config: MlfeConfig, params):
    """(b, T, d) -> (x_enc (b, T, d), x_co = time mean (b, d))."""
    x = x_feat
    for l in range(config.layers):
        x = mamba_block(x, config, params, f"mlfe.{l}")
    return x, x.mean(axis=1)


def closed_head(x_co: Tensor, W: Tensor, b: Tensor) -> Tensor:
    if x_co.shape[-1] != W.shape[0]:
        raise ValueError(f"features {x_co.shape[-1]} do not match head input {W.shape[0]}")
    return x_co @ W + b


# ----------------------------------------------------------------- model


class HydraModel:
    """Parameters, running statistics and the forward pass for one configuration."""

    def __init__(self, config: HydraConfig, seed: int = 0):
        self.config = config
        self.params, self.buffers = init_params(config, np.random.default_rng(seed))

    @property
    def dtype(self) -> np.dtype:
        return self.params["head.weight"].data.dtype

    def astype(self, dtype) -> "HydraModel":
        """Cast parameters and running statistics in place."""
        for p in self.params.values():
            p.data = p.data.astype(dtype)
            p.grad = None
        for k in self.buffers:
            self.buffers[k] = self.buffers[k].astype(dtype)
        return self

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def encode(self, x, train: bool = False, rng=None):
        x = x if isinstance(x, Tensor) else Tensor(x)
        feat = cfre_forward(x, self.config.cfre, self.params, self.buffers, train)
        if self.config.mode == "tdse":
            return tdse_forward(feat, self.config.tdse, self.params, train, rng)
        return mlfe_forward(feat, self.config.mlfe, self.params)

    def forward(self, x, train: bool = False, rng=None) -> Tensor:
        """(b, T, c) -> logits (b, n_classes)."""
        _, x_co = self.encode(x, train, rng)
        return closed_head(x_co, self.params["head.weight"], self.params["head.bias"])

    __call__ = forward

    def predict_logits(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Eval-mode logits as a plain array, no graph."""
        out = []
        with ad.no_grad(), ad.precision(self.dtype):
            for i in range(0, len(x), batch_size):
                out.append(self.forward(x[i:i + batch_size], train=False).data)
        if not out:
            return np.zeros((0, self.config.n_classes))
        return np.concatenate(out).astype(np.float64)

    # -- state
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data.astype(np.float64) for k, v in self.params.items()}
        state.update({f"buffer:{k}": v.astype(np.float64) for k, v in self.buffers.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.params) | {f"buffer:{k}" for k in self.buffers}
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch; missing {missing}, unexpected {extra}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.data.dtype)
        for k in self.buffers:
            self.buffers[k] = np.array(state[f"buffer:{k}"], dtype=self.buffers[k].dtype)

    def save(self, path, extra: dict | None = None) -> None:
        """Checkpoint to ``path`` and the config sidecar to ``path + '.json'``."""
        path = Path(path)
        sidecar = {"config": self.config.to_dict(), **(extra or {})}
        ad.save_checkpoint(path, self.state_dict(), {"mode": self.config.mode})
        path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> tuple["HydraModel", dict]:
        path = Path(path)
        sidecar = json.loads(path.with_name(path.name + ".json").read_text())
        model = cls(HydraConfig.from_dict(sidecar["config"]))
        state, _ = ad.load_checkpoint(path)
        model.load_state_dict(state)
        return model, sidecar
