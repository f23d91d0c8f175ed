"""Train a small network on synthetic expression-like images and report."""

import sys
from pathlib import Path

from ecnn import checkpoint, data, evaluation
from ecnn.training import TrainConfig, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

########### Data: load, normalise with the training mean, mirror the training split
tr = data.synthetic_faces(600, seed=1)
va = data.synthetic_faces(150, seed=2, split="val")
te = data.synthetic_faces(150, seed=3, split="test")
train_set, val_set, test_set, norm, _ = data.prepare(tr, va, te)
print("train samples after flipping:", len(train_set))

########### A reduced architecture in the same grammar as the presets
arch = "conv:8x3x3,sbn,drop0.5,pool|conv:16x3x3,sbn,drop0.5,pool|fc:64,bn,drop0.5"
cfg = TrainConfig(lr=0.01, reg=1e-5, epochs=4, batch=64, momentum=0.9, seed=7)


def progress(epoch, model, history):
    print(f"epoch {epoch}: train {history.train_acc_per_epoch[-1]:.3f} "
          f"val {history.val_acc_per_epoch[-1]:.3f}")


res = train(arch, cfg, train_set, val_set, on_epoch=progress)
print("best epoch", res.best_epoch)

########### Evaluate and export
res.best_model.mean_image = norm.mean_image
checkpoint.save(res.best_model, out / "synthetic.ckpt")
res.history.write_csv(out)
acc, cm = evaluation.evaluate(res.best_model, test_set)
evaluation.export_report(acc, cm, evaluation.per_class_accuracy(cm), out / "synthetic_report.csv")
