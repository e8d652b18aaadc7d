"""Regenerate src/altfl/resources/digits8.altds from scikit-learn's digits."""

from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

from altfl.data import Dataset, write_dataset

raw = load_digits()
pixels = raw.images.reshape(len(raw.images), -1).astype(np.uint8)
_, keep = np.unique(pixels, axis=0, return_index=True)
keep = np.sort(keep)
ds = Dataset.create(pixels[keep].reshape(-1, 1, 8, 8) / 16.0, raw.target[keep], 10)
out = Path(__file__).resolve().parents[1] / "src/altfl/resources/digits8.altds"
write_dataset(ds, out, dtype="uint8", scale=1 / 16)
print(f"wrote {len(ds)} of {len(raw.images)} images to {out}")
