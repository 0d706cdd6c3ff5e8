"""
From a synthetic fleet to open-set verdicts, at a size that runs in a couple of minutes
"""

from modeforge.data import gen_fleet
from modeforge.model import HydraModel
from modeforge.openset import DecisionConfig, decide
from modeforge.pipeline import DataPlan, desk_config, prepare
from modeforge.training import TrainConfig, eval_closed, eval_open, train

## Six devices, one of them held out as an unknown transmitter
fleet = gen_fleet(n_devices=6, frames_per_device=120, frame_len=128, snr_db=20.0, rng_seed=42)
data = prepare(fleet, DataPlan(vmd_k=3, n_illegal=1, seed=42))
print("legal devices:", data.legal_classes, "illegal:", data.illegal_classes)
print("train/val/test:", len(data.train), len(data.val), len(data.test), "channels:", data.channels)

## A narrow TDSE classifier
config = desk_config("tdse", data.n_classes, data.channels, d_model=16, d_ff=32,
                     widths=(8, 16), max_len=fleet.frame_len)
model = HydraModel(config, seed=42)
print("parameters:", model.n_parameters())

## Train a few epochs; the best validation checkpoint is kept
hist = train(model, data.train, data.val, TrainConfig(max_epochs=15, seed=42))
for epoch, (tl, vl, va) in enumerate(zip(hist.train_loss, hist.val_loss, hist.val_acc), 1):
    print(f"epoch {epoch}: train {tl:.3f} val {vl:.3f} acc {va:.3f}")

## Closed set
closed = eval_closed(model, data.test)
print(f"closed-set accuracy {closed.accuracy:.3f}, macro-F1 {closed.macro_f1:.3f}")
print(closed.confusion)

## Open set over the full (T, tau) grid
opened = eval_open(model, data.test, data.illegal)
print(f"best cell T={opened.best_temperature:g} tau={opened.best_threshold:g}: "
      f"accuracy {opened.best.open_accuracy:.3f}")
print(f"tau = 1 rejects everything: {opened.sweep.accuracy_at(1.0, 1.0):.3f} "
      f"(illegal fraction {len(data.illegal) / (len(data.test) + len(data.illegal)):.3f})")

## One decision by hand
logits = model.predict_logits(data.illegal.x[:1])[0]
d = decide(logits, DecisionConfig(opened.best_temperature, opened.best_threshold))
print("unknown device frame ->", "illegal" if not d.is_legal else f"class {d.verdict}",
      f"(p_max {d.p_max:.3f})")
