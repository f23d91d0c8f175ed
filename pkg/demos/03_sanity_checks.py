"""The two sanity checks run before any long training job."""

import math

from ecnn import data
from ecnn.training import sanity_initial_loss, sanity_overfit

########### Initial loss
# an untrained network with near-uniform class scores should score ln(7)
print(f"target ln 7 = {math.log(7):.4f}")
for preset in ("shallow", "deep"):
    print(preset, sanity_initial_loss(preset))

# inflating every weight breaks the check, which is the point of having it
print("x100 init", sanity_initial_loss("shallow", weight_scale=100.0))

########### Overfitting a handful of samples
tr = data.synthetic_faces(20, seed=3)
va = data.synthetic_faces(4, seed=4, split="val")
train_set, *_ = data.prepare(tr, va, va, augment=False)
print(sanity_overfit("shallow", train_set))
print("lr = 0 control:", sanity_overfit("conv:4x3x3,pool|fc:16", train_set, lr=0.0))
