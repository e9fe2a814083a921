"""Synthetic datasets with a planted fingerprint-bit signal.

Each sample's tissue label is witnessed by one marker compound whose
fingerprint sets the label's reserved bit; filler compounds never touch
the reserved bits. Any of the regressors should separate these almost
perfectly, which makes the generator useful for learning-sanity checks
and benchmarks.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .autodiff import splitmix64
from .dataset import Dataset, LabelSpace, Sample


def make_planted_dataset(n_samples: int = 120, n_labels: int = 3,
                         n_bits: int = 64, seed: int = 7,
                         min_compounds: int = 3, max_compounds: int = 6,
                         marker_bits: int = 4, noise_density: float = 0.08,
                         label_names: list[str] | None = None) -> Dataset:
    """Balanced dataset where label t's marker compound sets the bit
    block [t*marker_bits, (t+1)*marker_bits).

    The first n_labels*marker_bits positions are reserved for markers;
    filler fingerprints draw random bits from the rest at
    ``noise_density``. Marker area share is 40-80%, the remainder split
    over the fillers.
    """
    reserved = n_labels * marker_bits
    if n_bits < reserved + 8:
        raise ValueError("n_bits too small for the reserved marker bits")
    if label_names is None:
        label_names = [f"tissue_{t}" for t in range(n_labels)]
    if len(label_names) != n_labels:
        raise ValueError("need one name per label")

    rand = iter(splitmix64(seed, n_samples * (4 + max_compounds * (n_bits + 2))))

    def u01() -> float:
        return float(next(rand)) / 2.0 ** 64

    samples = []
    for i in range(n_samples):
        label = i % n_labels
        n_comp = min_compounds + int(u01() * (max_compounds - min_compounds + 1))
        n_comp = min(n_comp, max_compounds)

        bits = np.zeros((n_comp, n_bits), dtype=np.uint8)
        bits[0, label * marker_bits:(label + 1) * marker_bits] = 1
        for row in range(n_comp):
            for b in range(reserved, n_bits):
                if u01() < noise_density:
                    bits[row, b] = 1

        marker_area = 40.0 + 40.0 * u01()
        rest = 100.0 - marker_area
        areas = np.empty(n_comp)
        areas[0] = marker_area
        if n_comp > 1:
            shares = np.array([0.2 + u01() for _ in range(n_comp - 1)])
            areas[1:] = rest * shares / shares.sum()

        features = np.empty((n_comp, 1 + n_bits))
        features[:, 0] = areas / 100.0
        features[:, 1:] = bits
        target = np.zeros(n_labels)
        target[label] = 1.0
        samples.append(Sample(oil_name=f"synthetic_{i}",
                              tissue=label_names[label],
                              features=features,
                              weights=kernels.pairwise_tanimoto(bits),
                              target=target))
    return Dataset(samples=samples,
                   label_space=LabelSpace(list(label_names), min_count=1),
                   n_bits=n_bits, fingerprint_kind="ecfp",
                   fingerprint_radius=2, exclusions={})
