"""Build the synthetic shifted-domain benchmark and inspect its geometry.

The generator places well-separated unit prototypes, pushes them through a
random linear domain shift, and adds isotropic noise.  A slice of the labels
is then corrupted the way a noisy pseudo-labeler would corrupt them.
"""

import os

import numpy as np

from p2lr import fileio
from p2lr.synthgen import corrupt_labels, generate_prototypes, sample_target

OUT_DIR = os.path.join(os.path.dirname(__file__), "output", "01_synthetic_domain")

C_TRUE = 8
D = 16
N_PER_ID = 25
SEED = 0


def pairwise_min_distance(rows: np.ndarray) -> float:
    diffs = rows[:, None, :] - rows[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=2))
    return float(dists[np.triu_indices(len(rows), k=1)].min())


def main() -> None:
    proto_set = generate_prototypes(C_TRUE, D, min_separation=1.0, seed=SEED)
    prototypes = proto_set.prototypes
    print(f"{C_TRUE} prototypes in {D} dimensions")
    print(f"  norms: all 1 (max deviation {abs(np.linalg.norm(prototypes, axis=1) - 1).max():.2e})")
    print(f"  closest pair: {pairwise_min_distance(prototypes):.3f} (floor 1.0)")

    target = sample_target(proto_set, N_PER_ID, noise_sigma=0.1, shift_scale=0.2, seed=SEED + 1)
    n = target.raw_features.shape[0]
    print(f"\nshifted target domain: {n} samples ({N_PER_ID} per identity)")
    shift_mag = np.linalg.norm(target.shift - np.eye(D)) / np.linalg.norm(np.eye(D))
    print(f"  relative shift magnitude: {shift_mag:.3f}")

    # How far did the shift move each identity's clean mean off its prototype?
    moved = np.array([
        np.linalg.norm(target.raw_features[target.hidden_labels == i].mean(axis=0) - prototypes[i])
        for i in range(C_TRUE)
    ])
    print(f"  mean displacement of class means: {moved.mean():.3f}")

    labels, mask = corrupt_labels(target.hidden_labels, 0.2, C_TRUE, seed=SEED + 2)
    print(f"\ncorrupted {mask.sum()} of {n} labels (20%)")
    print(f"  every corrupted label differs from the original: "
          f"{bool(np.all(labels[mask] != target.hidden_labels[mask]))}")

    os.makedirs(OUT_DIR, exist_ok=True)
    fileio.write_features(os.path.join(OUT_DIR, "features.p2lrfs"), target.raw_features)
    fileio.write_labels(os.path.join(OUT_DIR, "labels.p2lrlb"), target.hidden_labels)
    fileio.write_features_csv(os.path.join(OUT_DIR, "features.csv"),
                              target.raw_features, target.hidden_labels)
    print(f"\nwrote binary and CSV copies under {OUT_DIR}")

    back = fileio.read_features(os.path.join(OUT_DIR, "features.p2lrfs"))
    print(f"binary round-trip exact: {bool(np.array_equal(back, target.raw_features))}")


if __name__ == "__main__":
    main()
