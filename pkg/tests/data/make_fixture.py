"""Regenerate fer_fixture.csv: 64 synthetic rows (48 train, 8 val, 8 test)."""

from pathlib import Path

from ecnn.data import Dataset, synthetic_faces, write_fer_csv

d = synthetic_faces(64, seed=2024)
d.labels[:7] = range(7)  # every class appears in the training rows
splits = [Dataset(d.images[a:b], d.labels[a:b], s)
          for a, b, s in ((0, 48, "train"), (48, 56, "val"), (56, 64, "test"))]
write_fer_csv(Path(__file__).with_name("fer_fixture.csv"), splits)
