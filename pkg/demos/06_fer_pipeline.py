"""Desk-scale run on the real FER CSV (path from $ECNN_DATA).

Trains the shallow preset on the first 2,000 training and 500 validation
rows for 15 epochs. Expect roughly half an hour on one CPU core.
"""

import sys
import time
from dataclasses import replace

from ecnn import data, evaluation
from ecnn.training import TRAIN_PRESETS, train

path = data.default_data_path(sys.argv[1] if len(sys.argv) > 1 else None)
if not path:
    sys.exit("set ECNN_DATA or pass the FER CSV path")

train_raw, val_raw, test_raw = data.load_fer_csv(path, {"train": 2000, "val": 500, "test": 500})
train_set, val_set, test_set, norm, _ = data.prepare(train_raw, val_raw, test_raw)

cfg = replace(TRAIN_PRESETS["shallow"], epochs=15, seed=42, train_acc_samples=500)
print(cfg)
t = time.time()
res = train("shallow", cfg, train_set, val_set,
            on_epoch=lambda e, m, h: print(f"epoch {e} val {h.val_acc_per_epoch[-1]:.3f}"))
print(f"{(time.time() - t) / 60:.1f} min")

acc, cm = evaluation.evaluate(res.best_model, test_set)
print(cm.render())
print(f"test accuracy {acc:.3f}")
