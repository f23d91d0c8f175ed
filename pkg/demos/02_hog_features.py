"""HOG descriptors: gradients, orientation histograms and block normalisation."""

import numpy as np

from ecnn import hog

########### A vertical step edge
img = np.zeros((48, 48))
img[:, 24:] = 200.0

gx, gy = hog.image_gradients(img)
print("gx at the edge row 0:", gx[0, 22:26])     # [0 200 200 0]: un-halved central differences

cells = hog.cell_histograms(gx, gy)
print("cell grid", cells.shape)                   # 6x6 cells of 9 bins
print("cell (0,2) votes:", cells[0, 2].round(1))  # horizontal gradient splits between bins 8 and 0

########### Full descriptor
v = hog.hog_extract(img)
print("length", v.size)                            # 5*5 blocks * 4 cells * 9 bins = 900
blocks = v.reshape(25, 36)
print("block norms (first row of blocks):", np.linalg.norm(blocks[:5], axis=1).round(6))

########### Invariances
v2 = hog.hog_extract(img + 37.0)
print("brightness shift changes nothing:", np.max(np.abs(v - v2)))
print("zero image gives zeros:", not hog.hog_extract(np.zeros((48, 48))).any())

########### Other image sizes
cfg = hog.HogConfig(image_size=16)
print("16x16 descriptor length", cfg.length)       # 1 block * 4 cells * 9 bins
