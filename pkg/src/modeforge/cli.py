"""Command-line entry point: ``modeforge <command> [flags]``.

Exit codes: 0 success, 1 invalid input (flags, files, config), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_vmd, limit_threads
from .data import Dataset, RfiqError, gen_fleet, load_iq, save_iq
from .model import HydraModel
from .openset import DEFAULT_TEMPERATURES, DEFAULT_THRESHOLDS, write_confusion_csv
from .pipeline import DataPlan, desk_config, prepare
from .spectral import IQFrame, Spectrum
from .training import TrainConfig, eval_closed, eval_open, train
from .vmd import (CenterSet, fundamental_index, lossless_vmd_batch, modes_to_channels,
                  optimize_centers, select_centers)

log = logging.getLogger("modeforge")

DEFAULT_SEED = 42


class UsageError(Exception):
    """Bad flags, missing files or malformed config (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _round12(obj):
    if isinstance(obj, float):
        return float(f"{obj:.12g}") if math.isfinite(obj) else obj
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round12(v) for v in obj]
    if isinstance(obj, np.generic):
        return _round12(obj.item())
    return obj


def write_metrics(path: Path, metrics: dict, merge: bool = False) -> None:
    """Write JSON metrics; with ``merge`` keep top-level keys already in the file."""
    if merge and path.is_file():
        try:
            metrics = {**json.loads(path.read_text()), **metrics}
        except json.JSONDecodeError:
            pass
    path.write_text(json.dumps(_round12(metrics), indent=2, sort_keys=True) + "\n")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {path}")
    return p


def _load_dataset(path: str):
    try:
        return load_iq(_existing(path))
    except RfiqError as exc:
        raise UsageError(f"{path}: {exc}") from None


def resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MODEFORGE_SEED")
    if env is None:
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MODEFORGE_SEED must be an integer, got {env!r}") from None


def _outdir(path: str | None, fallback: Path) -> Path:
    d = Path(path) if path else fallback
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    seed = resolve_seed(args)
    ds = gen_fleet(args.devices, args.frames_per_device, args.frame_len, args.snr_db, seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_iq(ds, args.out)
    print(f"wrote {len(ds)} frames from {ds.n_classes} devices to {args.out}")
    return 0


def cmd_decompose(args) -> int:
    ds = _load_dataset(args.inp)
    if ds.layout != "iq":
        raise UsageError(f"{args.inp} is already decomposed (layout {ds.layout})")
    frames = ds.complex_frames()
    k0 = fundamental_index(ds.sample_rate, ds.symbol_rate)
    if args.k == 1:
        centers = CenterSet((0.0,))
    elif args.centers == "table":
        centers = select_centers(args.k, k0, ds.frame_len)
    else:
        mean_spec = np.fft.fft(frames, axis=1)
        power_ref = Spectrum(np.sqrt(np.mean(np.abs(mean_spec) ** 2, axis=0)),
                             ds.sample_rate, ds.symbol_rate)
        centers = optimize_centers(power_ref, args.k).centers
    modes = lossless_vmd_batch(frames, centers)
    err = np.linalg.norm(modes.sum(axis=1) - frames, axis=1) / np.maximum(
        np.linalg.norm(frames, axis=1), np.finfo(float).tiny)
    out = Dataset(modes_to_channels(modes), ds.labels, ds.class_names, "vmd",
                  ds.sample_rate, ds.symbol_rate, centers.indices)
    save_iq(out, args.out)
    print(f"centers {', '.join(f'{c:g}' for c in centers.indices)}")
    print(f"max reconstruction error {float(err.max()):.3e}")
    return 0


def _plan(args, seed) -> DataPlan:
    return DataPlan(vmd_k=args.vmd_k, n_illegal=args.n_illegal, seed=seed)


def cmd_train(args) -> int:
    seed = resolve_seed(args)
    ds = _load_dataset(args.data)
    if ds.layout != "iq":
        raise UsageError("train expects raw IQ data; pass --vmd-k to decompose on the fly")
    plan = _plan(args, seed)
    data = prepare(ds, plan)
    cfg = desk_config(args.mode, data.n_classes, data.channels, d_model=args.d_model,
                      heads=args.heads, layers=args.layers, d_ff=args.d_ff,
                      d_state=args.d_state, max_len=ds.frame_len)
    tcfg = TrainConfig(max_epochs=args.epochs, seed=seed, precision=args.precision,
                       batch_size=args.batch_size)
    model = HydraModel(cfg, seed=seed)
    hist = train(model, data.train, data.val, tcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out, {"plan": plan.to_dict(), "train": tcfg.to_dict(),
                     "legal_classes": data.legal_classes,
                     "class_names": data.train.class_names})
    metrics = {"training": {"best_epoch": hist.best_epoch, "best_val_loss": hist.best_val_loss,
               "epochs": len(hist.val_loss), "stop_reason": hist.stop_reason,
               "train_loss": hist.train_loss, "val_loss": hist.val_loss,
               "val_acc": hist.val_acc, "lr": hist.lr}}
    write_metrics(out.parent / "metrics.json", metrics)
    print(f"best epoch {hist.best_epoch} val loss {hist.best_val_loss:.4f}; saved {out}")
    return 0


def _load_for_eval(args):
    try:
        model, side = HydraModel.load(_existing(args.model))
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{args.model}: unreadable checkpoint or sidecar ({exc})") from None
    ds = _load_dataset(args.data)
    plan = DataPlan(**side["plan"])
    data = prepare(ds, plan)
    if data.legal_classes != side["legal_classes"]:
        raise UsageError("legal class mapping of the data does not match the checkpoint")
    return model, data


def cmd_eval_closed(args) -> int:
    model, data = _load_for_eval(args)
    rep = eval_closed(model, data.test)
    out = _outdir(args.out_dir, Path(args.model).parent)
    write_metrics(out / "metrics.json", {"closed_set": rep.to_dict()}, merge=True)
    with open(out / "confusion.csv", "w") as fh:
        names = data.test.class_names
        fh.write("truth\\pred," + ",".join(names) + "\n")
        for name, row in zip(names, rep.confusion):
            fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
    print(f"accuracy {rep.accuracy:.4f} macro-F1 {rep.macro_f1:.4f} on {rep.n} frames")
    return 0


def cmd_eval_open(args) -> int:
    model, data = _load_for_eval(args)
    temps = np.asarray(args.temperatures) if args.temperatures else DEFAULT_TEMPERATURES
    taus = np.asarray(args.thresholds) if args.thresholds else DEFAULT_THRESHOLDS
    rep = eval_open(model, data.test, data.illegal, temps, taus)
    out = _outdir(args.out_dir, Path(args.model).parent)
    rep.sweep.write_csv(out / "sweep.csv")
    write_confusion_csv(out / "confusion.csv", rep.best.confusion, data.test.class_names)
    write_metrics(out / "metrics.json", {"open_set": {
        **rep.best.to_dict(), "temperature": rep.best_temperature,
        "threshold": rep.best_threshold}}, merge=True)
    print(f"best open accuracy {rep.best.open_accuracy:.4f} at T={rep.best_temperature:g} "
          f"tau={rep.best_threshold:g}")
    return 0


def cmd_bench(args) -> int:
    seed = resolve_seed(args)
    rng = np.random.default_rng(seed)
    if args.data:
        ds = _load_dataset(args.data)
        frames = ds.complex_frames()[: args.frames]
    else:
        frames = rng.normal(size=(args.frames, args.frame_len)) + 1j * rng.normal(
            size=(args.frames, args.frame_len))
    if len(frames) < 100:
        raise UsageError(f"bench needs at least 100 frames, got {len(frames)}")
    rep = bench_vmd([IQFrame(f) for f in frames], range(args.k_min, args.k_max + 1),
                    repetitions=args.repetitions, warmup=args.warmup)
    rep.write_csv(args.out)
    for r in rep.rows:
        print(f"k={r.k} lossless {r.lossless_mean_ms:.4f} ms admm {r.admm_mean_ms:.4f} ms "
              f"speedup {100 * r.speedup:.1f}%")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="modeforge", description="Lossless VMD and RF fingerprint classification")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help=f"random seed (falls back to $MODEFORGE_SEED, then {DEFAULT_SEED})")
        sp.add_argument("--config", default=None, help="JSON file whose keys override flags")

    g = sub.add_parser("gen-data", help="synthesize a transmitter fleet")
    g.add_argument("--devices", type=int, default=10)
    g.add_argument("--frames-per-device", type=int, default=400)
    g.add_argument("--frame-len", type=int, default=256)
    g.add_argument("--snr-db", type=float, default=20.0)
    g.add_argument("--out", required=True)
    common(g)
    g.set_defaults(func=cmd_gen_data)

    d = sub.add_parser("decompose", help="closed-form mode split of every frame")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--k", type=int, required=True)
    d.add_argument("--centers", choices=("table", "optimized"), default="table")
    d.add_argument("--out", required=True)
    common(d)
    d.set_defaults(func=cmd_decompose)

    t = sub.add_parser("train", help="train a classifier")
    t.add_argument("--mode", choices=("tdse", "mlfe"), default="tdse")
    t.add_argument("--data", required=True)
    t.add_argument("--vmd-k", type=int, default=3, help="mode count; 0 trains on raw IQ")
    t.add_argument("--n-illegal", type=int, default=0,
                   help="devices held out as unknown for open-set evaluation")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--d-model", type=int, default=32)
    t.add_argument("--heads", type=int, default=1)
    t.add_argument("--layers", type=int, default=1)
    t.add_argument("--d-ff", type=int, default=64)
    t.add_argument("--d-state", type=int, default=8)
    t.add_argument("--precision", choices=("float32", "float64"), default="float64")
    t.add_argument("--out", required=True, help="checkpoint path; metrics.json goes alongside")
    common(t)
    t.set_defaults(func=cmd_train)

    for name, fn, helptext in (("eval-closed", cmd_eval_closed, "closed-set test metrics"),
                               ("eval-open", cmd_eval_open, "open-set (T, tau) sweep")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--model", required=True)
        e.add_argument("--data", required=True, help="the raw IQ file used for training")
        e.add_argument("--out-dir", default=None, help="defaults to the checkpoint's directory")
        if name == "eval-open":
            e.add_argument("--temperatures", type=float, nargs="+", default=None)
            e.add_argument("--thresholds", type=float, nargs="+", default=None)
        common(e)
        e.set_defaults(func=fn)

    b = sub.add_parser("bench", help="time lossless VMD against ADMM")
    b.add_argument("--frames", type=int, default=1000)
    b.add_argument("--frame-len", type=int, default=256)
    b.add_argument("--data", default=None, help="take frames from an RFIQ file")
    b.add_argument("--k-min", type=int, default=2)
    b.add_argument("--k-max", type=int, default=7)
    b.add_argument("--repetitions", type=int, default=1)
    b.add_argument("--warmup", type=int, default=10)
    b.add_argument("--out", required=True)
    common(b)
    b.set_defaults(func=cmd_bench)
    return p


def apply_config(args) -> None:
    """Overlay ``--config`` JSON onto parsed flags; keys use flag names with - or _."""
    if not getattr(args, "config", None):
        return
    path = _existing(args.config)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}: malformed JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{args.config}: top level must be an object")
    known = vars(args)
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if attr == "in":
            attr = "inp"
        if attr not in known or attr in ("func", "command", "config"):
            raise UsageError(f"{args.config}: unknown option {key!r} for {args.command}")
        setattr(args, attr, value)


def _validate(args) -> None:
    checks = {
        "devices": (2, "at least 2 devices"), "frames_per_device": (10, "at least 10 frames per device"),
        "frame_len": (64, "frame length of at least 64"), "epochs": (1, "at least 1 epoch"),
        "batch_size": (1, "batch size of at least 1"), "frames": (100, "at least 100 frames"),
        "k": (1, "k of at least 1"), "repetitions": (1, "at least 1 repetition"),
    }
    for attr, (lo, what) in checks.items():
        v = getattr(args, attr, None)
        if v is not None and v < lo:
            raise UsageError(f"--{attr.replace('_', '-')} {v}: need {what}")
    if getattr(args, "k", None) is not None and args.k > 7:
        raise UsageError(f"--k {args.k}: the center table covers k = 1..7")
    if getattr(args, "vmd_k", None) is not None and not 0 <= args.vmd_k <= 7:
        raise UsageError(f"--vmd-k {args.vmd_k}: use 0 (raw IQ) or 1..7")
    if getattr(args, "k_min", None) is not None and not 1 <= args.k_min <= args.k_max <= 7:
        raise UsageError("--k-min/--k-max must satisfy 1 <= k-min <= k-max <= 7")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        raise UsageError("--seed must be non-negative")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        apply_config(args)
        _validate(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    if args.command == "bench":
        limit_threads(1)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FloatingPointError, OSError) as exc:
        print(f"error: {args.command} failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
