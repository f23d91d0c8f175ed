"""Activation maps, first-layer filters and DeepDream written as PGM files.

Uses the checkpoint from 04_train_synthetic.py when present.
"""

import sys
from pathlib import Path

import numpy as np

from ecnn import checkpoint, data, visualization as viz
from ecnn.netspec import build_model

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)
ckpt = out / "synthetic.ckpt"
model = checkpoint.load(ckpt) if ckpt.exists() else build_model("shallow", seed=0)
mean = model.mean_image[0] if model.mean_image is not None else 0.0

img = data.synthetic_faces(1, seed=9).images[0]      # raw pixels, [1,48,48]

########### Activation grids, one file per conv layer
for k, act in viz.capture_activations(model, img - mean):
    grid = viz.activation_grid(act, cols=8)
    viz.write_pgm(grid, out / f"demo_layer{k}.pgm")
    print(f"layer {k}: {act.shape[0]} maps -> {grid.shape} canvas")

########### First-layer filters
viz.write_pgm(viz.render_grid(viz.first_layer_filters(model), cols=8), out / "demo_weights.pgm")

########### DeepDream on the last conv layer
trace = []
dream = viz.deepdream(model, img, layer=len(model.spec.conv_layers), steps=10,
                      mean_image=model.mean_image, trace=trace)
print("objective per step:", np.round(trace, 1))
viz.write_pgm(viz.to_bytes(dream[0]), out / "demo_dream.pgm")
viz.write_pgm(viz.to_bytes(img[0]), out / "demo_input.pgm")
print("zero steps returns the input:",
      np.array_equal(viz.deepdream(model, img, 1, 0), img))
